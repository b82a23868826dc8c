#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "marginflow/integrate.hpp"

namespace mf {

// --- rate fits ----------------------------------------------------------------

// Parametric decay/growth laws fitted by least squares in the family's own
// transformed coordinates:
//   CLogT:       v = a log t + c          (x = log t,     y = v)
//   AOverLogT:   v = a / log t + c        (x = 1/log t,   y = v)
//   PowNegBLogT: v = a t^(-b log t)       (x = (log t)^2, y = log v)
//   PowNegC:     v = a t^(-c)             (x = log t,     y = log v)
enum class RateFamily { CLogT, AOverLogT, PowNegBLogT, PowNegC };

RateFamily rate_family_from_string(const std::string& s);
std::string to_string(RateFamily f);

struct RateFit {
    RateFamily family = RateFamily::CLogT;
    double a = 0.0;   // leading coefficient (amplitude for the power families)
    double b = 0.0;   // log-quadratic exponent coefficient (PowNegBLogT)
    double c = 0.0;   // additive constant or power exponent
    double r2 = 0.0;  // coefficient of determination in transformed space
    size_t points = 0;
    double t_lo = 0.0;
    double t_hi = 0.0;

    double eval(double t) const;  // fitted v(t)
};

// Fits the family to (t, v). Points outside the family's domain (t <= 1, or
// v <= 0 for the log-value families) are dropped first. Throws
// InsufficientDataError when fewer than 8 usable points remain or the usable
// window spans less than two decades in t.
RateFit fit_rate(const std::vector<double>& t, const std::vector<double>& v, RateFamily family);

// (max - min) / |mean| of v over the records with t in [t_max/10, t_max].
// Throws InsufficientDataError with fewer than 4 such records.
double final_decade_spread(const std::vector<double>& t, const std::vector<double>& v);

// --- conservation checks --------------------------------------------------------

// Largest over records of max_{j,k} |(rho_k^2(t) - rho_k^2(0)) -
// (rho_j^2(t) - rho_j^2(0))| / (1 + max_k rho_k^2(t)). Zero for exact
// per-layer norm balance; the differences rho_k^2 - rho_j^2 are conserved by
// the unconstrained flow.
double norm_balance_spread(const std::vector<Vector>& rho);

// --- margin monotonicity ----------------------------------------------------------

struct MarginMonotoneReport {
    bool dominance_reached = false;
    double t_dominance = 0.0;
    // Smallest per-step margin increment after dominance; +inf when no step
    // followed the dominance epoch.
    double worst_step_delta = 0.0;
    int support_changes_before = 0;
    int support_changes_after = 0;

    bool monotone(double tol) const { return dominance_reached && worst_step_delta > -tol; }
};

MarginMonotoneReport margin_monotone_report(const Trajectory& tr);

// --- curvature at a linear stationary direction -----------------------------------

// Curvature matrix sum_n w_n (rho^2 x_n x_n^T + rho y_n <v, x_n> I) of the
// exponential loss of a linear unit restricted to the unit sphere, with
// w_n = exp(-rho y_n <v, x_n>) evaluated under a shared max shift (positive
// rescaling; definiteness is unaffected).
Matrix linear_sphere_hessian(const Dataset& data, const Vector& v, double rho);

// Minimum eigenvalue of H restricted to the tangent space at v (the span
// orthogonal to v). Positive value certifies a strict constrained minimum.
double tangent_min_eigenvalue(const Matrix& H, const Vector& v);

// --- scale-growth references --------------------------------------------------------

// Reference growth curve for the scale product rho(t) of a K-equal-layer
// network whose loss is dominated by margin f, calibrated at (t0, rho0).
// In terms of u = f * rho the reference solves
//   du/dt = K^2 f^(2/K) u^(2 - 2/K) exp(-u),
// which closes to R = exp(u), R(t) = R0 + f^2 (t - t0) for K = 1 and to
// li(R(t)) = li(R0) + 4 f (t - t0) for K = 2; deeper stacks are integrated
// numerically in log t.
struct RhoReference {
    int depth = 1;
    double f = 1.0;
    double t0 = 0.0;
    double rho0 = 1.0;
    double li0 = 0.0;  // cached li(exp(f * rho0)) for depth 2

    double u_at(double t) const;           // f * rho_product
    double rho_product_at(double t) const;
    double per_layer_at(double t) const;   // rho_product^(1/K)
};

// Throws DomainError for depth < 1, nonpositive f or rho0, a depth-2
// calibration with f * rho0 < 1 (below the asymptotic regime of the
// principal-value form), or depth >= 3 with t0 <= 0.
RhoReference make_rho_reference(int depth, double f, double t0, double rho0);

// --- norm-preserving step corrections ------------------------------------------------

// Per-record multipliers of the norm-preserving update v+ = alpha v + g with
// g = h * (unprojected direction gradient): alpha keeps ||v+|| = 1 exactly,
// and lambda = (1 - alpha) / (2 h) is the implied constraint multiplier,
// which tracks rho * A / 2 along the flow.
struct NormCorrectionTrace {
    std::vector<double> t;
    std::vector<Vector> alpha;     // per layer
    std::vector<Vector> lambda;    // per layer
    std::vector<double> residual;  // max_k | ||alpha_k v_k + g_k|| - 1 |
};

// Uses the trajectory's stored states; a state contributes a row when its
// step also has a scalar record (run with record_every == record_states_every
// for a full trace). Throws DomainError when the flow kind exposes no
// norm-constrained direction blocks.
NormCorrectionTrace norm_correction_trace(const Flow& flow, const Trajectory& tr, double h);

// --- direction errors ---------------------------------------------------------------

// Orientation-sensitive angle between a and b in radians, computed as
// 2 asin(||a/||a|| - b/||b|||| / 2) for small-angle accuracy.
double direction_angle(const Vector& a, const Vector& b);

// (t, angle(direction(state), target)) over the trajectory's stored states
// whose steps carry scalar records.
std::pair<std::vector<double>, std::vector<double>> direction_error_series(
    const Flow& flow, const Trajectory& tr, const Vector& target);

}  // namespace mf
