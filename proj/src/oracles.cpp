#include "marginflow/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace mf::oracle {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kEulerGamma = 0.57721566490153286061;

// Recursive adaptive Simpson quadrature.
double simpson_step(const std::function<double(double)>& f, double a, double b, double fa,
                    double fm, double fb, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
    if (a == b) return 0.0;
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_step(f, a, b, fa, fm, fb, whole, tol, 60);
}

// Integrand of the principal-value construction of li(2): the symmetric
// excision around t = 1 pairs t = 1-u with t = 1+u, whose singular parts
// cancel. Near u = 0 the two terms individually blow up, so a local series
// keeps the cancellation exact.
double excision_integrand(double u) {
    if (u < 1e-2) {
        // 1/log(1+u) + 1/log(1-u) = 1 + u^2/12 + 3u^4/80 + O(u^6)
        const double u2 = u * u;
        return 1.0 + u2 / 12.0 + 3.0 * u2 * u2 / 80.0;
    }
    return 1.0 / std::log1p(u) + 1.0 / std::log1p(-u);
}

double li_of_two() {
    static const double value = [] {
        // The tail u in (1-1e-15, 1) contributes less than 1e-16.
        return adaptive_simpson(excision_integrand, 0.0, 1.0 - 1e-15, 1e-12);
    }();
    return value;
}

}  // namespace

std::vector<Matrix> fd_gradient(const NetworkParams& p, const Vector& x, double step) {
    p.validate();
    if (!(step > 0.0)) throw DomainError("finite-difference step must be positive");
    const double kink = min_abs_preactivation(p, x);
    if (kink <= 10.0 * step)
        throw KinkError("a hidden pre-activation lies within 10*step of zero; "
                        "the two-sided difference could straddle an activation boundary");

    NetworkParams q = p;
    std::vector<Matrix> g(p.depth());
    for (int k = 0; k < p.depth(); ++k) {
        g[k].resizeLike(p.w[k]);
        for (Eigen::Index i = 0; i < p.w[k].rows(); ++i) {
            for (Eigen::Index j = 0; j < p.w[k].cols(); ++j) {
                const double orig = q.w[k](i, j);
                q.w[k](i, j) = orig + step;
                const double fp = forward(q, x);
                q.w[k](i, j) = orig - step;
                const double fm = forward(q, x);
                q.w[k](i, j) = orig;
                g[k](i, j) = (fp - fm) / (2.0 * step);
            }
        }
    }
    return g;
}

Equilibrium1d closed_form_1d(double x1, double x2) {
    if (!(x1 > 0.0) || !(x2 > 0.0)) throw DomainError("both inputs must be positive");
    Equilibrium1d eq;
    eq.w_star = std::log(x2 / x1) / (x1 + x2);
    eq.field_derivative = -x1 * x1 * std::exp(x1 * eq.w_star) - x2 * x2 * std::exp(-x2 * eq.w_star);
    eq.stable = eq.field_derivative < 0.0;
    return eq;
}

Vector pseudoinverse_fixed_point(const Dataset& data, double rho, int max_iter, double tol) {
    data.validate();
    if (!(rho > 0.0)) throw DomainError("rho must be positive");

    const int n = data.n();
    Vector v = Vector::Zero(data.dim());
    // Start from the mean label-weighted direction.
    for (int i = 0; i < n; ++i) v += data.y(i) * data.x.row(i).transpose();
    if (v.norm() == 0.0) v = Vector::Unit(data.dim(), 0);
    v.normalize();

    for (int it = 0; it < max_iter; ++it) {
        // Shifted weights keep the exponentials in range; the normalization
        // below absorbs the common factor.
        Vector e(n);
        for (int i = 0; i < n; ++i) e(i) = -rho * data.y(i) * v.dot(data.x.row(i).transpose());
        const double m = e.maxCoeff();
        Vector target = Vector::Zero(data.dim());
        for (int i = 0; i < n; ++i)
            target += std::exp(e(i) - m) * data.y(i) * data.x.row(i).transpose();
        const double nrm = target.norm();
        if (!(nrm > 0.0)) throw DomainError("fixed-point map vanished; no stationary direction");
        target /= nrm;
        Vector next = v + 0.5 * (target - v);
        next.normalize();
        const double moved = (next - v).norm();
        v = next;
        if (moved < tol) return v;
    }
    throw DomainError("fixed-point iteration did not settle");
}

double li(double z) {
    if (!std::isfinite(z) || z <= 1.0 + 1e-12)
        throw DomainError("li requires z > 1");
    if (z <= 2.0) {
        const auto f = [](double t) { return 1.0 / std::log(t); };
        return li_of_two() - adaptive_simpson(f, z, 2.0, 1e-12);
    }
    // Substituting t = e^s turns the unbounded-integrand range into a smooth
    // one and concentrates the quadrature where the mass is.
    const auto g = [](double s) { return std::exp(s) / s; };
    const double upper = std::log(z);
    const double tol = std::max(1e-12, 1e-12 * std::exp(upper) / upper);
    return li_of_two() + adaptive_simpson(g, std::log(2.0), upper, tol);
}

double li_series(double z) {
    if (!std::isfinite(z) || z <= 1.0) throw DomainError("li series requires z > 1");
    const double x = std::log(z);
    double sum = kEulerGamma + std::log(x);
    double term = 1.0;  // x^n / n!
    for (int n = 1; n < 10000; ++n) {
        term *= x / n;
        const double add = term / n;
        sum += add;
        if (n > x && add < 1e-17 * std::abs(sum)) break;
    }
    return sum;
}

double li_inverse(double y) {
    if (!std::isfinite(y)) throw DomainError("li_inverse requires a finite value");
    double lo = 1.0 + 1e-9;
    double hi = 2.0;
    while (li(hi) < y) {
        hi *= 10.0;
        if (hi > 1e300) throw DomainError("li_inverse target too large");
    }
    for (int it = 0; it < 80; ++it) {
        const double mid = (lo <= 2.0 && hi >= 1e3) ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        if (li(mid) < y)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-13 * hi) break;
    }
    // Newton polish: li'(z) = 1 / log z.
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 6; ++it) {
        const double step = (li(z) - y) * std::log(z);
        double next = z - step;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (li(next) < y)
            lo = next;
        else
            hi = next;
        if (std::abs(next - z) <= 1e-14 * z) return next;
        z = next;
    }
    return z;
}

MaxMarginSolution hard_margin_direction(const Dataset& data, double resolution) {
    data.validate();
    const int n = data.n();
    const int d = data.dim();
    if (d > 4 || n > 50)
        throw DomainError("subset enumeration is desk-scale only (d <= 4, n <= 50)");
    if (!(resolution > 0.0)) throw DomainError("resolution must be positive");

    const int max_size = std::min(n, d + 1);
    double best_sqnorm = std::numeric_limits<double>::infinity();
    Vector best_w;

    std::vector<int> idx;
    std::function<void()> try_subset = [&]() {
        const int s = static_cast<int>(idx.size());
        Matrix gram(s, s);
        for (int a = 0; a < s; ++a)
            for (int b = 0; b < s; ++b)
                gram(a, b) = data.y(idx[a]) * data.y(idx[b]) *
                             data.x.row(idx[a]).dot(data.x.row(idx[b]));
        const Vector rhs = Vector::Ones(s);
        Eigen::FullPivLU<Matrix> lu(gram);
        if (lu.rank() < s) return;
        const Vector alpha = lu.solve(rhs);
        if ((gram * alpha - rhs).cwiseAbs().maxCoeff() > 1e-8) return;
        // Dual feasibility: every active constraint must push, not pull.
        for (int a = 0; a < s; ++a)
            if (alpha(a) < -1e-10) return;
        Vector w = Vector::Zero(d);
        for (int a = 0; a < s; ++a)
            w += std::max(alpha(a), 0.0) * data.y(idx[a]) * data.x.row(idx[a]).transpose();
        // Primal feasibility at unit functional margin.
        for (int i = 0; i < n; ++i)
            if (data.y(i) * w.dot(data.x.row(i).transpose()) < 1.0 - std::max(resolution, 1e-7))
                return;
        const double sq = w.squaredNorm();
        if (sq < best_sqnorm - 1e-12 * (1.0 + sq)) {
            best_sqnorm = sq;
            best_w = w;
        }
    };

    std::function<void(int, int)> rec = [&](int start, int remaining) {
        if (remaining == 0) {
            try_subset();
            return;
        }
        for (int i = start; i <= n - remaining; ++i) {
            idx.push_back(i);
            rec(i + 1, remaining - 1);
            idx.pop_back();
        }
    };
    for (int size = 1; size <= max_size; ++size) rec(0, size);

    if (!std::isfinite(best_sqnorm))
        throw InfeasibleError("no separating candidate found; data appears non-separable");

    MaxMarginSolution sol;
    sol.direction = best_w / best_w.norm();
    double margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
        margin = std::min(margin, data.y(i) * sol.direction.dot(data.x.row(i).transpose()));
    sol.margin = margin;
    for (int i = 0; i < n; ++i) {
        const double m = data.y(i) * best_w.dot(data.x.row(i).transpose());
        if (m <= 1.0 + 1e-6) sol.support.push_back(i);
    }
    return sol;
}

namespace {

// Point on the unit sphere in R^m from m-1 spherical angles.
Vector sphere_point(const std::vector<double>& angles) {
    const int m = static_cast<int>(angles.size()) + 1;
    Vector p(m);
    double sinprod = 1.0;
    for (int i = 0; i < m - 1; ++i) {
        p(i) = sinprod * std::cos(angles[i]);
        sinprod *= std::sin(angles[i]);
    }
    p(m - 1) = sinprod;
    return p;
}

}  // namespace

DeepGridResult deep_margin_grid(const Dataset& data, int hidden, double resolution) {
    data.validate();
    if (hidden < 1 || hidden > 3) throw DomainError("grid oracle supports hidden widths 1..3");
    if (!(resolution > 0.0)) throw DomainError("resolution must be positive");
    const int d = data.dim();
    const int m1 = hidden * d, m2 = hidden;
    const int total_angles = (m1 - 1) + (m2 - 1);
    if (total_angles > 5)
        throw DomainError("grid oracle limited to 5 total angles; shrink the net");

    // Angles 0..pi except the final angle of each sphere spans 0..2pi. A
    // 1-dimensional "sphere" has no angles; it contributes the signs +1/-1,
    // iterated explicitly below.
    std::vector<double> spans;
    for (int i = 0; i < m1 - 1; ++i) spans.push_back(i == m1 - 2 ? 2.0 * kPi : kPi);
    for (int i = 0; i < m2 - 1; ++i) spans.push_back(i == m2 - 2 ? 2.0 * kPi : kPi);

    auto eval_margin = [&](const Vector& v1, const Vector& v2) {
        NetworkParams p;
        Matrix w1(hidden, d);
        for (int i = 0; i < hidden; ++i)
            for (int j = 0; j < d; ++j) w1(i, j) = v1(i * d + j);
        p.w = {w1, v2.transpose()};
        double margin = std::numeric_limits<double>::infinity();
        for (int i = 0; i < data.n(); ++i)
            margin = std::min(margin, data.y(i) * forward(p, data.x.row(i).transpose()));
        return margin;
    };

    double best = -std::numeric_limits<double>::infinity();
    Vector best_v1, best_v2;
    int near_ties = 0;

    for (int pass = 0; pass < 2; ++pass) {
        std::vector<double> angles(spans.size(), 0.0);
        std::function<void(size_t)> walk = [&](size_t i) {
            if (i == spans.size()) {
                std::vector<double> a1(angles.begin(), angles.begin() + (m1 - 1));
                std::vector<double> a2(angles.begin() + (m1 - 1), angles.end());
                const int signs1 = (m1 == 1) ? 2 : 1;
                const int signs2 = (m2 == 1) ? 2 : 1;
                for (int s1 = 0; s1 < signs1; ++s1) {
                    const Vector v1 = (m1 == 1) ? Vector::Constant(1, s1 == 0 ? 1.0 : -1.0)
                                                : sphere_point(a1);
                    for (int s2 = 0; s2 < signs2; ++s2) {
                        const Vector v2 = (m2 == 1) ? Vector::Constant(1, s2 == 0 ? 1.0 : -1.0)
                                                    : sphere_point(a2);
                        const double margin = eval_margin(v1, v2);
                        if (pass == 0) {
                            if (margin > best) {
                                best = margin;
                                best_v1 = v1;
                                best_v2 = v2;
                            }
                        } else if (margin >= best - resolution) {
                            ++near_ties;
                        }
                    }
                }
                return;
            }
            const int steps = std::max(1, static_cast<int>(std::ceil(spans[i] / resolution)));
            for (int s = 0; s < steps; ++s) {
                angles[i] = (s + 0.5) * spans[i] / steps;
                walk(i + 1);
            }
        };
        walk(0);
    }

    DeepGridResult res;
    Matrix w1(hidden, d);
    for (int i = 0; i < hidden; ++i)
        for (int j = 0; j < d; ++j) w1(i, j) = best_v1(i * d + j);
    res.params.rho = Vector::Ones(2);
    res.params.dir = {w1, best_v2.transpose()};
    res.margin = best;
    res.near_ties = near_ties;
    return res;
}

}  // namespace mf::oracle
