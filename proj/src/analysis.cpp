#include "marginflow/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "marginflow/oracles.hpp"

namespace mf {

RateFamily rate_family_from_string(const std::string& s) {
    if (s == "c_log_t") return RateFamily::CLogT;
    if (s == "a_over_log_t") return RateFamily::AOverLogT;
    if (s == "pow_neg_b_log_t") return RateFamily::PowNegBLogT;
    if (s == "pow_neg_c") return RateFamily::PowNegC;
    throw ConfigError("unknown rate family: " + s);
}

std::string to_string(RateFamily f) {
    switch (f) {
        case RateFamily::CLogT: return "c_log_t";
        case RateFamily::AOverLogT: return "a_over_log_t";
        case RateFamily::PowNegBLogT: return "pow_neg_b_log_t";
        case RateFamily::PowNegC: return "pow_neg_c";
    }
    return "unknown";
}

double RateFit::eval(double t) const {
    switch (family) {
        case RateFamily::CLogT: return a * std::log(t) + c;
        case RateFamily::AOverLogT: return a / std::log(t) + c;
        case RateFamily::PowNegBLogT: {
            const double lt = std::log(t);
            return a * std::exp(-b * lt * lt);
        }
        case RateFamily::PowNegC: return a * std::pow(t, -c);
    }
    return 0.0;
}

RateFit fit_rate(const std::vector<double>& t, const std::vector<double>& v, RateFamily family) {
    if (t.size() != v.size()) throw ShapeError("time and value series differ in length");

    const bool log_value = family == RateFamily::PowNegBLogT || family == RateFamily::PowNegC;

    std::vector<double> xs, ys, ts;
    for (size_t i = 0; i < t.size(); ++i) {
        const double ti = t[i], vi = v[i];
        if (!std::isfinite(ti) || !std::isfinite(vi)) continue;
        if (!(ti > 1.0)) continue;  // late-time laws; 1/log t is singular at 1
        if (log_value && !(vi > 0.0)) continue;
        const double lt = std::log(ti);
        double x = 0.0;
        switch (family) {
            case RateFamily::CLogT: x = lt; break;
            case RateFamily::AOverLogT: x = 1.0 / lt; break;
            case RateFamily::PowNegBLogT: x = lt * lt; break;
            case RateFamily::PowNegC: x = lt; break;
        }
        xs.push_back(x);
        ys.push_back(log_value ? std::log(vi) : vi);
        ts.push_back(ti);
    }
    if (xs.size() < 8)
        throw InsufficientDataError("rate fit needs at least 8 usable points, got " +
                                    std::to_string(xs.size()));
    const auto [lo_it, hi_it] = std::minmax_element(ts.begin(), ts.end());
    const double t_lo = *lo_it, t_hi = *hi_it;
    if (t_hi < (100.0 - 1e-6) * t_lo)
        throw InsufficientDataError("rate fit window spans less than two decades");

    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, sst = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        sst += (ys[i] - my) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw InsufficientDataError("degenerate abscissa in rate fit");
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ssr = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (intercept + slope * xs[i]);
        ssr += r * r;
    }

    RateFit fit;
    fit.family = family;
    fit.points = xs.size();
    fit.t_lo = t_lo;
    fit.t_hi = t_hi;
    fit.r2 = sst < 1e-300 ? (ssr < 1e-300 ? 1.0 : 0.0) : 1.0 - ssr / sst;
    switch (family) {
        case RateFamily::CLogT:
            fit.a = slope;
            fit.c = intercept;
            break;
        case RateFamily::AOverLogT:
            fit.a = slope;
            fit.c = intercept;
            break;
        case RateFamily::PowNegBLogT:
            fit.b = -slope;
            fit.a = std::exp(intercept);
            break;
        case RateFamily::PowNegC:
            fit.c = -slope;
            fit.a = std::exp(intercept);
            break;
    }
    return fit;
}

double final_decade_spread(const std::vector<double>& t, const std::vector<double>& v) {
    if (t.size() != v.size()) throw ShapeError("time and value series differ in length");
    if (t.empty()) throw InsufficientDataError("empty series");
    const double t_max = *std::max_element(t.begin(), t.end());
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    size_t count = 0;
    for (size_t i = 0; i < t.size(); ++i) {
        if (t[i] < t_max / 10.0) continue;
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
        sum += v[i];
        ++count;
    }
    if (count < 4) throw InsufficientDataError("final decade holds fewer than 4 records");
    const double mean = sum / static_cast<double>(count);
    if (std::abs(mean) < 1e-300) throw DegenerateError("final-decade mean vanishes");
    return (hi - lo) / std::abs(mean);
}

double norm_balance_spread(const std::vector<Vector>& rho) {
    if (rho.empty()) throw InsufficientDataError("no records");
    const Vector base = rho.front().array().square().matrix();
    double worst = 0.0;
    for (const Vector& r : rho) {
        if (r.size() != base.size()) throw ShapeError("layer count changed across records");
        const Vector sq = r.array().square().matrix();
        const Vector d = sq - base;
        const double spread = d.maxCoeff() - d.minCoeff();
        worst = std::max(worst, spread / (1.0 + sq.maxCoeff()));
    }
    return worst;
}

MarginMonotoneReport margin_monotone_report(const Trajectory& tr) {
    MarginMonotoneReport rep;
    rep.dominance_reached = tr.t_dominance.has_value();
    rep.t_dominance = tr.t_dominance.value_or(0.0);
    rep.worst_step_delta = tr.worst_margin_step_after_dominance.value_or(
        std::numeric_limits<double>::infinity());
    for (const Event& e : tr.events) {
        if (e.kind != EventKind::SupportSetChange) continue;
        if (rep.dominance_reached && e.t >= rep.t_dominance)
            ++rep.support_changes_after;
        else
            ++rep.support_changes_before;
    }
    return rep;
}

Matrix linear_sphere_hessian(const Dataset& data, const Vector& v, double rho) {
    data.validate();
    if (v.size() != data.dim()) throw ShapeError("direction does not match the data dimension");
    if (!(rho > 0.0)) throw DomainError("rho must be positive");
    const Eigen::Index d = data.dim();
    const Vector yf = (data.y.array() * (data.x * v).array()).matrix();
    const Vector e = -rho * yf;
    const double m = e.maxCoeff();
    Matrix h = Matrix::Zero(d, d);
    double trace_coeff = 0.0;
    for (int i = 0; i < data.n(); ++i) {
        const double w = std::exp(e(i) - m);
        h += (w * rho * rho) * (data.x.row(i).transpose() * data.x.row(i));
        trace_coeff += w * rho * yf(i);
    }
    h += trace_coeff * Matrix::Identity(d, d);
    return h;
}

double tangent_min_eigenvalue(const Matrix& h, const Vector& v) {
    const Eigen::Index d = v.size();
    if (h.rows() != d || h.cols() != d) throw ShapeError("matrix does not match the direction");
    if (d < 2) throw DomainError("tangent space is empty in one dimension");
    if (!(v.norm() > 0.0)) throw DegenerateError("zero direction");
    Eigen::HouseholderQR<Matrix> qr((Matrix(v)));
    const Matrix q = qr.householderQ();
    const Matrix basis = q.rightCols(d - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(basis.transpose() *
                                             ((h + h.transpose()) / 2.0) * basis);
    return es.eigenvalues().minCoeff();
}

RhoReference make_rho_reference(int depth, double f, double t0, double rho0) {
    if (depth < 1) throw DomainError("depth must be >= 1");
    if (!(f > 0.0)) throw DomainError("margin f must be positive");
    if (!(rho0 > 0.0)) throw DomainError("rho0 must be positive");
    RhoReference r;
    r.depth = depth;
    r.f = f;
    r.t0 = t0;
    r.rho0 = rho0;
    const double u0 = f * rho0;
    if (depth == 2) {
        if (u0 < 1.0)
            throw DomainError("depth-2 reference needs f * rho0 >= 1 (asymptotic regime)");
        if (u0 > 300.0) throw DomainError("depth-2 reference outside the quadrature range");
        r.li0 = oracle::li(std::exp(u0));
    }
    if (depth >= 3 && !(t0 > 0.0)) throw DomainError("depth >= 3 reference needs t0 > 0");
    return r;
}

double RhoReference::u_at(double t) const {
    if (t < t0) throw DomainError("reference evaluated before its calibration time");
    const double u0 = f * rho0;
    if (depth == 1) return u0 + std::log1p(f * f * (t - t0) * std::exp(-u0));
    if (depth == 2) {
        const double z = li0 + 4.0 * f * (t - t0);
        return std::log(oracle::li_inverse(z));
    }
    if (t == t0) return u0;
    // RK4 in s = log t; exp(s - u) keeps the product representable.
    const double kk = static_cast<double>(depth);
    const double c = kk * kk * std::pow(f, 2.0 / kk);
    const double s0 = std::log(t0), s1 = std::log(t);
    const int steps = 20000;
    const double hs = (s1 - s0) / steps;
    auto du = [&](double s, double uu) {
        return c * std::exp(s - uu) * std::pow(uu, 2.0 - 2.0 / kk);
    };
    double u = u0, s = s0;
    for (int i = 0; i < steps; ++i) {
        const double k1 = du(s, u);
        const double k2 = du(s + hs / 2.0, u + hs / 2.0 * k1);
        const double k3 = du(s + hs / 2.0, u + hs / 2.0 * k2);
        const double k4 = du(s + hs, u + hs * k3);
        u += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        s += hs;
    }
    return u;
}

double RhoReference::rho_product_at(double t) const { return u_at(t) / f; }

double RhoReference::per_layer_at(double t) const {
    return std::pow(rho_product_at(t), 1.0 / static_cast<double>(depth));
}

NormCorrectionTrace norm_correction_trace(const Flow& flow, const Trajectory& tr, double h) {
    if (!(h > 0.0)) throw DomainError("step h must be positive");
    NormCorrectionTrace out;
    size_t ri = 0;
    for (const auto& [step, state] : tr.states) {
        while (ri < tr.step_index.size() && tr.step_index[ri] < step) ++ri;
        if (ri >= tr.step_index.size() || tr.step_index[ri] != step) continue;
        const std::vector<Matrix> vs = flow.dir_blocks(state);
        const std::vector<Matrix> gs = flow.unprojected_dir_gradient(state);
        Vector alpha(vs.size()), lambda(vs.size());
        double resid = 0.0;
        for (size_t k = 0; k < vs.size(); ++k) {
            const Vector vflat = Eigen::Map<const Vector>(vs[k].data(), vs[k].size());
            const Vector gflat =
                h * Eigen::Map<const Vector>(gs[k].data(), gs[k].size());
            const double a = lagrange_alpha(vflat, gflat);
            alpha(static_cast<Eigen::Index>(k)) = a;
            lambda(static_cast<Eigen::Index>(k)) = (1.0 - a) / (2.0 * h);
            resid = std::max(resid, std::abs((a * vflat + gflat).norm() - 1.0));
        }
        out.t.push_back(tr.t[ri]);
        out.alpha.push_back(alpha);
        out.lambda.push_back(lambda);
        out.residual.push_back(resid);
    }
    return out;
}

double direction_angle(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw ShapeError("direction dims differ");
    const double na = a.norm(), nb = b.norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateError("zero direction");
    const double chord = (a / na - b / nb).norm();
    return 2.0 * std::asin(std::min(1.0, chord / 2.0));
}

std::pair<std::vector<double>, std::vector<double>> direction_error_series(
    const Flow& flow, const Trajectory& tr, const Vector& target) {
    std::pair<std::vector<double>, std::vector<double>> out;
    size_t ri = 0;
    for (const auto& [step, state] : tr.states) {
        while (ri < tr.step_index.size() && tr.step_index[ri] < step) ++ri;
        if (ri >= tr.step_index.size() || tr.step_index[ri] != step) continue;
        out.first.push_back(tr.t[ri]);
        out.second.push_back(direction_angle(flow.direction(state), target));
    }
    return out;
}

}  // namespace mf
