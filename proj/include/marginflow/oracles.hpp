#pragma once

#include <vector>

#include "marginflow/net.hpp"

namespace mf::oracle {

// Central finite differences of the network output with respect to every
// weight entry. Validates reverse-mode gradients without sharing code with
// them. Throws KinkError when a hidden pre-activation lies within 10*step of
// zero, where the two-sided difference could straddle an activation boundary.
std::vector<Matrix> fd_gradient(const NetworkParams& p, const Vector& x, double step = 1e-6);

// The one-dimensional two-point system w' = -x1 e^{x1 w} + x2 e^{-x2 w}
// (labels -1 at x1 and +1 at x2, both inputs positive). Its unique
// equilibrium and the field derivative there, in closed form.
struct Equilibrium1d {
    double w_star;
    double field_derivative;  // d(w')/dw at w_star; negative means stable
    bool stable;
};
Equilibrium1d closed_form_1d(double x1, double x2);

// Stationary direction of the fixed-scale constrained linear flow:
// v proportional to sum_n e^{-rho y_n v.x_n} y_n x_n, found by damped
// fixed-point iteration on the unit sphere. For a single sample this is
// x/||x|| exactly. Throws DomainError when the iteration fails to settle.
Vector pseudoinverse_fixed_point(const Dataset& data, double rho, int max_iter = 100000,
                                 double tol = 1e-14);

// Logarithmic integral li(z) = PV integral_0^z dt/log t, z > 1, by adaptive
// quadrature (tolerance ~1e-11). The principal value across t = 1 is handled
// by a symmetric-excision construction of li(2).
double li(double z);

// Independent series form li(z) = gamma + ln ln z + sum_n (ln z)^n / (n n!),
// used to cross-check the quadrature.
double li_series(double z);

// Inverse of li on (1, inf): bisection bracket followed by Newton polish.
double li_inverse(double y);

// Hard-margin separator found by support-subset enumeration: for every
// subset of up to d+1 samples, solve the equal-margin KKT system and keep the
// feasible candidate of least norm. Exact at solver resolution. Desk-scale
// guard: d <= 4, n <= 50. Throws InfeasibleError when no candidate separates.
struct MaxMarginSolution {
    Vector direction;          // unit vector
    double margin;             // min_n y_n direction.x_n
    std::vector<int> support;  // active constraints at the solution
};
MaxMarginSolution hard_margin_direction(const Dataset& data, double resolution = 1e-9);

// Margin-maximizing direction pair for a depth-2 network found by dense
// direction-grid search over both layer spheres. Verification backstop for
// tiny nets only (grid dimensions capped); resolution is the angular step.
struct DeepGridResult {
    NormalizedParams params;  // unit directions, rho == 1 per layer
    double margin;            // best min_n y_n f(dirs; x_n)
    int near_ties;            // grid points within resolution of the best
};
DeepGridResult deep_margin_grid(const Dataset& data, int hidden, double resolution);

}  // namespace mf::oracle
