#pragma once

#include <Eigen/Dense>
#include <vector>

#include "marginflow/errors.hpp"
#include "marginflow/rng.hpp"

namespace mf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// One labelled example. Labels are +1 or -1; a bias, when used, is carried as
// a constant last coordinate of x.
struct Sample {
    Vector x;
    double y = 1.0;
};

// Fixed batch of samples, one row of x per example.
struct Dataset {
    Matrix x;  // n x d
    Vector y;  // n entries in {-1, +1}

    int n() const { return static_cast<int>(x.rows()); }
    int dim() const { return static_cast<int>(x.cols()); }
    Sample sample(int i) const { return {x.row(i).transpose(), y(i)}; }

    // Throws ShapeError/DomainError on inconsistent sizes or labels.
    void validate() const;
};

// Weights of a depth-K ReLU network f(x) = W_K relu(W_{K-1} ... relu(W_1 x)).
// The last layer has a single output row; hidden activations are ReLU, the
// output is linear.
struct NetworkParams {
    std::vector<Matrix> w;  // w[k] has shape h_{k+1} x h_k

    int depth() const { return static_cast<int>(w.size()); }
    int in_dim() const { return w.empty() ? 0 : static_cast<int>(w.front().cols()); }

    // Layer widths [h_0, ..., h_K]; h_K == 1.
    std::vector<int> dims() const;

    // Throws ShapeError on inconsistent chains or a non-scalar output layer.
    void validate() const;
};

// Polar form of the same network: per-layer Frobenius norms rho_k and
// unit-Frobenius direction matrices dir_k.
struct NormalizedParams {
    Vector rho;               // K positive norms
    std::vector<Matrix> dir;  // K unit-Frobenius matrices

    int depth() const { return static_cast<int>(dir.size()); }
    double rho_product() const;

    // Throws ShapeError/DomainError unless every ||dir_k||_F is 1 within tol
    // and every rho_k is positive.
    void validate(double tol = 1e-12) const;
};

// Margin statistics of a parameter point over a dataset.
struct MarginInfo {
    Vector yf;                 // per-sample y_n * f(x_n)
    double margin = 0.0;       // min_n y_n f(x_n)
    std::vector<int> support;  // indices inside the margin band
    // Smallest y_n f(x_n) over samples outside the band, minus the margin.
    // +inf when every sample is in the band.
    double gap2 = 0.0;
};

// --- forward / backward ---------------------------------------------------

// Network output for one input. Optionally exposes the hidden pre-activations
// z_k = W_k a_{k-1} (hidden layers only) for kink checks.
double forward(const NetworkParams& p, const Vector& x,
               std::vector<Vector>* preacts = nullptr);

// d f / d W_k for every layer, by reverse accumulation. The ReLU derivative
// at exactly zero is taken as zero.
std::vector<Matrix> grad_weights(const NetworkParams& p, const Vector& x);

// Per-layer |<W_k, df/dW_k> - f(x)|. Zero, up to roundoff, for ReLU nets.
Vector structural_residual(const NetworkParams& p, const Vector& x);

// Smallest |z| over all hidden pre-activations; distance to the nearest kink
// in activation space.
double min_abs_preactivation(const NetworkParams& p, const Vector& x);

// || df/dW_k(W with layer k scaled by 1+h) - df/dW_k(scaled by 1-h) || / 2h.
// The layer-k gradient is scale-invariant in W_k away from kinks, so this
// measures the weight-Hessian contraction against W_k. Throws KinkError when
// the scaling crosses an activation boundary.
double homogeneity_hessian_residual(const NetworkParams& p, const Vector& x,
                                    int k, double h = 1e-4);

// --- polar decomposition ----------------------------------------------------

// Splits weights into norms and unit directions. Throws DegenerateError when
// a layer has zero norm.
NormalizedParams decompose(const NetworkParams& p);

// Rebuilds weights w_k = rho_k * dir_k.
NetworkParams compose(const NormalizedParams& q);

// Network with the direction matrices as weights; f(p) = rho_product * f(dirs).
NetworkParams dirs_net(const NormalizedParams& q);

// --- margins ----------------------------------------------------------------

// Band rule: sample n is in the support when
//   y_n f(x_n) <= margin + tol_sv * (|margin| + 1).
// For nonnegative margins this is the relative-plus-absolute band
// margin*(1+tol_sv)+tol_sv; the |margin| form keeps the band nonempty when
// the margin is negative.
MarginInfo margin_and_support(const Vector& yf, double tol_sv);
MarginInfo margin_and_support(const NetworkParams& p, const Dataset& data,
                              double tol_sv);

// Gap from the minimum-margin tie set to the rest. Samples whose margin sits
// within ln(10)/rho of the minimum (exponential weight within 10x of the
// largest) form the tie; returns the smallest margin outside the tie minus
// the minimum, +inf when the tie covers every sample. rho <= 0 collapses the
// tie band to exact equality.
double dominance_gap(const Vector& yf, double rho);

// Per-sample y_n f(x_n) for raw weights.
Vector margins(const NetworkParams& p, const Dataset& data);

// True when every sample is classified with positive margin.
bool is_separable_at(const NetworkParams& p, const Dataset& data);

// --- initialization ---------------------------------------------------------

enum class InitScheme { Gaussian, UnitSphere };

// Seeded weight draw. Gaussian: i.i.d. N(0, scale^2) entries. UnitSphere:
// each layer drawn Gaussian, normalized to unit Frobenius norm, then scaled
// by `scale`, so all layers start with equal norm rho_k = scale.
NetworkParams init_network(const std::vector<int>& dims, std::uint64_t seed,
                           double scale, InitScheme scheme);

}  // namespace mf
