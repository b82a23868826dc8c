#pragma once

#include <memory>
#include <string>
#include <vector>

#include "marginflow/net.hpp"

namespace mf {

// --- projectors and constraint algebra --------------------------------------

// Orthogonal projector onto the tangent plane of the unit sphere at v,
// S = I - v v^T / (v^T v), applied matrix-free.
struct SphereProjector {
    Vector v;
    Vector apply(const Vector& g) const;
    Matrix dense() const;  // for tests and small audits only
};

// Projection of g onto the tangent plane of the unit-p-norm sphere at u:
// h = (I - nu nu^T / ||nu||^2) g with nu = d||u||_p / du, for p = 1, any
// finite p > 1, or +infinity. Throws KinkError when u sits within kink_tol
// of a corner of the constraint surface (a zero coordinate for p=1, a tied
// max for p=inf); the surface is smooth for finite p > 1.
Vector tangent_project(const Vector& u, const Vector& g, double p, double kink_tol = 1e-8);

// Norm-preserving step multiplier: the positive root alpha of
// ||alpha v + g|| = 1 for unit v, alpha = sqrt(1 - ||g||^2 + (v.g)^2) - v.g.
// Throws StepTooLargeError when the radicand is negative (g reaches outside
// the unit sphere) and DomainError when v is not unit within 1e-9.
double lagrange_alpha(const Vector& v, const Vector& g);

// --- single-unit batch-norm core ---------------------------------------------

// Batch second moment and normalized batch for the reduced normalizer
// xhat = z / sqrt(mean(z^2) + eps) (mean subtraction and affine output
// dropped). Throws DegenerateError when sqrt(mean(z^2)) < 1e-12.
struct BnBatch {
    Vector xhat;
    double sigma2;   // mean(z^2)
    double inv_std;  // (sigma2 + eps)^{-1/2}
};
BnBatch bn_normalize(const Vector& z, double eps);

// Backward map of the normalizer: J g with
// J = (sigma2+eps)^{-1/2} (I - xhat xhat^T / n), applied matrix-free.
Vector bn_apply(const Vector& z, const Vector& g, double eps);

// Dense J for audits.
Matrix bn_jacobian(const Vector& z, double eps);

// --- flow kinds ---------------------------------------------------------------

enum class FlowKindTag {
    Unconstrained,       // gradient flow on raw weights
    ConstrainedFixedRho, // unit-sphere flow of layer directions, fixed scale
    FullLagrange,        // coupled (rho_k, V_k) flow with norm constraints
    Reparameterized,     // raw gradient flow expressed in (rho_k, V_k)
    WeightNorm,          // (g_k, v_k) flow with w_k = g_k v_k / ||v_k||
    BatchNormCore,       // linear unit trained through the reduced normalizer
    TangentLp,           // linear direction flow on the unit-p-norm sphere
    RescaledAlpha,       // linear (rho, v) flow with time-rescaled exponent
};

// Time rescaling schedules for RescaledAlpha. Domains: InvLogT and LogT need
// t > 1, LogLogT needs t > e, LinearT needs t > 0.
enum class AlphaSchedule { One, InvLogT, LogT, LogLogT, ExpT, LinearT };

double alpha_value(AlphaSchedule s, double t);  // DomainError outside the domain

FlowKindTag flow_tag_from_string(const std::string& s);
std::string to_string(FlowKindTag tag);
AlphaSchedule alpha_schedule_from_string(const std::string& s);
std::string to_string(AlphaSchedule s);

struct FlowKind {
    FlowKindTag tag = FlowKindTag::Unconstrained;
    // Fixed scale for ConstrainedFixedRho, TangentLp, and BatchNormCore.
    double rho = 1.0;
    // Overrides rho so the second-smallest margin term underflows relative to
    // the leading one at the initial state: rho = log(1/eps_machine) / gap.
    bool machine_rho = false;
    double p = 2.0;                              // TangentLp norm order
    AlphaSchedule schedule = AlphaSchedule::One; // RescaledAlpha
    double bn_eps = 1e-5;                        // BatchNormCore
    // Rescale sample weights by the shared max exponent. This multiplies the
    // field by a positive scalar, i.e. reparameterizes time; the integrator
    // tracks flow time through the reported log-scale so recorded series stay
    // in the original time variable.
    bool log_shift = false;
};

// Snapshot of the quantities recorded along a trajectory.
struct Observables {
    double log_loss = 0.0;  // log sum_n exp(-scale * y_n f_n)
    Vector yf;              // per-sample normalized margins y_n f(V; x_n)
    Vector rho;             // per-layer norms
    Vector drho2dt;         // per-layer d(rho_k^2)/dt
    double stationarity = 0.0;
    double margin() const { return yf.minCoeff(); }
};

// A flow field over a flattened state vector. Concrete kinds define the
// packing; integrators only see dim(), derivative(), and the observers.
class Flow {
public:
    explicit Flow(Dataset data, FlowKind kind) : data_(std::move(data)), kind_(kind) {}
    virtual ~Flow() = default;

    virtual Eigen::Index dim() const = 0;
    virtual int depth() const = 0;

    // Initial state from raw weights; each kind adapts the representation
    // (polar split, p-normalization, ...). May finalize machine_rho.
    virtual Vector pack(const NetworkParams& p) = 0;

    // State derivative at integrator time tau / flow time t. When the field
    // is log-shifted, *log_dt_dtau reports the positive rescaling so flow
    // time advances at dt/dtau = exp(*log_dt_dtau); zero in raw mode.
    virtual void derivative(double tau, double t_flow, const Vector& s, Vector& ds,
                            double* log_dt_dtau) const = 0;

    // Pull unit-norm blocks back onto their spheres after a step.
    virtual void renormalize(Vector& s) const {}

    // Per-sample normalized margins (cheap; evaluated every step for events).
    virtual Vector margins(const Vector& s) const = 0;

    // Product of layer norms (the overall network scale).
    virtual double rho_product(const Vector& s) const = 0;

    // Scale multiplying the normalized margins inside the loss exponent,
    // loss = sum_n exp(-exponent_scale * yf_n). Equals rho_product except for
    // kinds that rescale the exponent by a time schedule.
    virtual double exponent_scale(double t_flow, const Vector& s) const {
        (void)t_flow;
        return rho_product(s);
    }

    virtual Observables observe(double tau, double t_flow, const Vector& s) const = 0;

    // Unit-norm direction representation of the state, for direction-error
    // series and cross-flow comparisons.
    virtual Vector direction(const Vector& s) const = 0;

    // Unprojected direction-block gradient (the increment a norm-preserving
    // update would correct), for constrained kinds. Default: not defined.
    virtual std::vector<Matrix> unprojected_dir_gradient(const Vector& s) const;

    // The norm-constrained direction blocks of the state, matching the layout
    // of unprojected_dir_gradient. Default: not defined.
    virtual std::vector<Matrix> dir_blocks(const Vector& s) const;

    const Dataset& data() const { return data_; }
    const FlowKind& kind() const { return kind_; }

protected:
    Dataset data_;
    FlowKind kind_;
};

// Builds the flow for a kind; `dims` are the network layer widths
// [h_0, ..., h_K]. Single-vector kinds (TangentLp, RescaledAlpha,
// BatchNormCore) require depth 1. Throws ConfigError/ShapeError on mismatch.
std::unique_ptr<Flow> make_flow(const FlowKind& kind, const Dataset& data,
                                const std::vector<int>& dims);

// Normalized tangent residual of the direction stationarity condition:
// max_k || sum_n w_n y_n (df(V;x_n)/dV_k - V_k f(V;x_n)) ||_F / sum_n w_n
// with w_n = exp(-rho y_n f(V;x_n)), evaluated with a shared max shift.
double stationarity_residual(const std::vector<Matrix>& dirs, double rho, const Dataset& data);

}  // namespace mf
