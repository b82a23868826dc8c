#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "marginflow/analysis.hpp"
#include "marginflow/datasets.hpp"
#include "marginflow/dynamics.hpp"
#include "marginflow/integrate.hpp"
#include "marginflow/oracles.hpp"

using namespace mf;

TEST_CASE("direction angles") {
    Vector a(2), b(2);
    a << 1.0, 0.0;
    b << 1.0, 0.0;
    CHECK(direction_angle(a, b) == 0.0);
    b << 0.0, 3.0;  // scale must not matter
    CHECK(direction_angle(a, b) == doctest::Approx(M_PI / 2).epsilon(1e-14));
    b << -2.0, 0.0;
    CHECK(direction_angle(a, b) == doctest::Approx(M_PI).epsilon(1e-14));
    const double eps = 1e-8;
    b << std::cos(eps), std::sin(eps);
    CHECK(direction_angle(a, b) == doctest::Approx(eps).epsilon(1e-6));
}

TEST_CASE("rate fits recover planted laws") {
    std::vector<double> t;
    for (int i = 0; i <= 60; ++i) t.push_back(std::pow(10.0, 0.5 + 4.5 * i / 60.0));

    SUBCASE("affine in log t") {
        std::vector<double> v;
        for (double x : t) v.push_back(2.4 * std::log(x) + 0.7);
        const RateFit fit = fit_rate(t, v, RateFamily::CLogT);
        CHECK(fit.a == doctest::Approx(2.4).epsilon(1e-10));
        CHECK(fit.c == doctest::Approx(0.7).epsilon(1e-8));
        CHECK(fit.r2 > 1.0 - 1e-12);
        CHECK(fit.eval(t[30]) == doctest::Approx(v[30]).epsilon(1e-10));
    }
    SUBCASE("inverse log t") {
        std::vector<double> v;
        for (double x : t) v.push_back(5.0 / std::log(x) + 0.3);
        const RateFit fit = fit_rate(t, v, RateFamily::AOverLogT);
        CHECK(fit.a == doctest::Approx(5.0).epsilon(1e-10));
        CHECK(fit.c == doctest::Approx(0.3).epsilon(1e-8));
        CHECK(fit.r2 > 1.0 - 1e-12);
    }
    SUBCASE("log-squared power decay") {
        std::vector<double> v;
        for (double x : t) v.push_back(3.0 * std::pow(x, -0.2 * std::log(x)));
        const RateFit fit = fit_rate(t, v, RateFamily::PowNegBLogT);
        CHECK(fit.a == doctest::Approx(3.0).epsilon(1e-8));
        CHECK(fit.b == doctest::Approx(0.2).epsilon(1e-10));
        CHECK(fit.r2 > 1.0 - 1e-12);
    }
    SUBCASE("plain power decay") {
        std::vector<double> v;
        for (double x : t) v.push_back(4.0 * std::pow(x, -1.5));
        const RateFit fit = fit_rate(t, v, RateFamily::PowNegC);
        CHECK(fit.a == doctest::Approx(4.0).epsilon(1e-8));
        CHECK(fit.c == doctest::Approx(1.5).epsilon(1e-10));
        CHECK(fit.r2 > 1.0 - 1e-12);
    }
    SUBCASE("out-of-domain points are dropped, not fatal") {
        std::vector<double> t2 = t, v2;
        for (double x : t) v2.push_back(2.0 * std::log(x) + 1.0);
        t2.push_back(0.5);   // t <= 1 has no log-t coordinate
        v2.push_back(99.0);
        t2.push_back(100.0);
        v2.push_back(-1.0);  // nonpositive value, dropped for log-value fits
        const RateFit fit = fit_rate(t2, v2, RateFamily::PowNegC);
        CHECK(fit.points == t.size());
    }
    SUBCASE("too few points") {
        const std::vector<double> ts{10, 100, 1000, 1e4, 1e5};
        const std::vector<double> vs{5, 4, 3, 2, 1};
        CHECK_THROWS_AS(fit_rate(ts, vs, RateFamily::CLogT), InsufficientDataError);
    }
    SUBCASE("window narrower than two decades") {
        std::vector<double> ts, vs;
        for (int i = 0; i < 20; ++i) {
            ts.push_back(10.0 + i);
            vs.push_back(1.0 + i);
        }
        CHECK_THROWS_AS(fit_rate(ts, vs, RateFamily::CLogT), InsufficientDataError);
    }
}

TEST_CASE("final decade spread") {
    std::vector<double> t, flat, ramp;
    for (int i = 1; i <= 100; ++i) {
        t.push_back(i);
        flat.push_back(5.0);
        ramp.push_back(i);
    }
    CHECK(final_decade_spread(t, flat) == 0.0);
    // Records with t in [10, 100]: min 10, max 100, mean 55.
    CHECK(final_decade_spread(t, ramp) == doctest::Approx(90.0 / 55.0).epsilon(1e-12));
    const std::vector<double> sparse{1.0, 2.0, 3.0, 100.0};
    const std::vector<double> vals{1.0, 1.0, 1.0, 1.0};
    CHECK_THROWS_AS(final_decade_spread(sparse, vals), InsufficientDataError);
}

TEST_CASE("norm balance spread detects broken conservation") {
    std::vector<Vector> balanced;
    for (double s : {0.0, 1.0, 2.0, 5.0}) {
        Vector r(2);
        r << std::sqrt(1.0 + s), std::sqrt(4.0 + s);
        balanced.push_back(r);  // rho_k^2 differences stay 3
    }
    CHECK(norm_balance_spread(balanced) <= 1e-14);

    std::vector<Vector> broken = balanced;
    broken.back()(1) = std::sqrt(10.0);  // second layer gains an extra unit
    CHECK(norm_balance_spread(broken) == doctest::Approx(1.0 / 11.0).epsilon(1e-12));
}

TEST_CASE("margin monotonicity report") {
    Trajectory tr;
    tr.t_dominance = 5.0;
    tr.worst_margin_step_after_dominance = 2e-9;
    tr.events.push_back({EventKind::SupportSetChange, 10, 2.0, 0.1, {0, 1}});
    tr.events.push_back({EventKind::SupportSetChange, 20, 4.0, 0.2, {0}});
    tr.events.push_back({EventKind::SupportSetChange, 90, 7.0, 0.4, {0, 2}});
    tr.events.push_back({EventKind::SeparabilityOnset, 5, 1.0, 0.01, {}});

    const MarginMonotoneReport rep = margin_monotone_report(tr);
    CHECK(rep.dominance_reached);
    CHECK(rep.t_dominance == 5.0);
    CHECK(rep.worst_step_delta == 2e-9);
    CHECK(rep.support_changes_before == 2);
    CHECK(rep.support_changes_after == 1);
    CHECK(rep.monotone(1e-8));

    Trajectory bad = tr;
    bad.worst_margin_step_after_dominance = -1e-3;
    CHECK_FALSE(margin_monotone_report(bad).monotone(1e-8));

    Trajectory never;
    never.events = tr.events;
    const MarginMonotoneReport rep2 = margin_monotone_report(never);
    CHECK_FALSE(rep2.dominance_reached);
    CHECK_FALSE(rep2.monotone(1e-8));
    CHECK(rep2.support_changes_before == 3);
    CHECK(rep2.support_changes_after == 0);
}

TEST_CASE("sphere-restricted curvature at the aligned direction") {
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 0.6, 0.8;
    one.y = Vector::Ones(1);
    Vector v(2);
    v << 0.6, 0.8;
    const double rho = 3.0;
    const Matrix h = linear_sphere_hessian(one, v, rho);
    // Tangent vectors are orthogonal to x here, so H acts on them as
    // rho * <v, x> * I; the single sample has unit norm.
    CHECK(tangent_min_eigenvalue(h, v) == doctest::Approx(rho).epsilon(1e-12));
    CHECK(tangent_min_eigenvalue(h, v) > 0.0);

    CHECK_THROWS_AS(linear_sphere_hessian(one, Vector::Ones(3), rho), ShapeError);
    CHECK_THROWS_AS(linear_sphere_hessian(one, v, -1.0), DomainError);
}

TEST_CASE("scale growth references") {
    SUBCASE("depth one closes in exponentials") {
        const RhoReference ref = make_rho_reference(1, 2.0, 1.0, 1.0);
        CHECK(ref.u_at(1.0) == doctest::Approx(2.0).epsilon(1e-12));
        const double want = std::log(std::exp(2.0) + 4.0 * 4.0);
        CHECK(ref.u_at(5.0) == doctest::Approx(want).epsilon(1e-12));
        CHECK(ref.rho_product_at(5.0) == doctest::Approx(want / 2.0).epsilon(1e-12));
        CHECK(ref.per_layer_at(5.0) == doctest::Approx(want / 2.0).epsilon(1e-12));
    }
    SUBCASE("depth two matches the logarithmic integral form") {
        const double f = 1.5, t0 = 1.0, rho0 = 2.0;
        const RhoReference ref = make_rho_reference(2, f, t0, rho0);
        const double u50 = ref.u_at(50.0);
        CHECK(oracle::li(std::exp(u50)) - ref.li0 ==
              doctest::Approx(4.0 * f * 49.0).epsilon(1e-9));
        CHECK(ref.per_layer_at(50.0) ==
              doctest::Approx(std::sqrt(ref.rho_product_at(50.0))).epsilon(1e-12));

        // Cross-check against direct integration of du/dt = 4 f u exp(-u).
        double u = f * rho0;
        const double hstep = 1e-3;
        const auto du = [&](double uu) { return 4.0 * f * uu * std::exp(-uu); };
        for (double t = t0; t < 50.0 - 1e-12; t += hstep) {
            const double k1 = du(u);
            const double k2 = du(u + 0.5 * hstep * k1);
            const double k3 = du(u + 0.5 * hstep * k2);
            const double k4 = du(u + hstep * k3);
            u += hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        CHECK(u50 == doctest::Approx(u).epsilon(1e-5));
    }
    SUBCASE("deeper stacks integrate monotonically") {
        const RhoReference ref = make_rho_reference(3, 1.0, 2.0, 1.5);
        CHECK(ref.u_at(2.0) == doctest::Approx(1.5).epsilon(1e-10));
        double prev = ref.u_at(2.0);
        for (double t : {5.0, 20.0, 100.0, 1000.0}) {
            const double cur = ref.u_at(t);
            CHECK(cur > prev);
            prev = cur;
        }
    }
    SUBCASE("guards") {
        CHECK_THROWS_AS(make_rho_reference(0, 1.0, 1.0, 1.0), DomainError);
        CHECK_THROWS_AS(make_rho_reference(1, -1.0, 1.0, 1.0), DomainError);
        CHECK_THROWS_AS(make_rho_reference(2, 0.5, 1.0, 1.0), DomainError);  // f rho0 < 1
        CHECK_THROWS_AS(make_rho_reference(3, 1.0, 0.0, 1.0), DomainError);  // needs t0 > 0
    }
}

TEST_CASE("norm-preserving correction trace") {
    DataSpec spec;
    spec.n = 6;
    spec.seed = 13;
    const Dataset data = make_dataset(spec);
    FlowKind kind{};
    kind.tag = FlowKindTag::ConstrainedFixedRho;
    kind.rho = 3.0;
    // Shifted weights keep h * ||gradient|| well inside the unit ball, so the
    // norm-preserving multiplier is defined at every row of the trace.
    kind.log_shift = true;
    auto flow = make_flow(kind, data, {2, 1});
    const Vector s0 = flow->pack(init_network({2, 1}, 4, 1.0, InitScheme::Gaussian));

    StepPolicy policy;
    policy.h = 1e-3;
    policy.stop_time = 0.2;
    policy.record_every = 1;
    policy.record_states_every = 1;
    const Trajectory tr = integrate(*flow, s0, policy);

    const NormCorrectionTrace trace = norm_correction_trace(*flow, tr, policy.h);
    REQUIRE(trace.t.size() >= 100);
    double worst_res = 0.0, worst_gap = 0.0;
    std::vector<bool> row_nonneg(trace.t.size(), true);
    for (size_t i = 0; i < trace.t.size(); ++i) {
        worst_res = std::max(worst_res, trace.residual[i]);
        for (Eigen::Index k = 0; k < trace.alpha[i].size(); ++k) {
            worst_gap = std::max(worst_gap, std::abs(trace.alpha[i](k) - 1.0));
            if (trace.lambda[i](k) < -1e-9) row_nonneg[i] = false;
        }
    }
    CHECK(worst_res <= 1e-12);
    CHECK(worst_gap <= 0.1);  // alpha hugs 1 at this step size

    // lambda = (1 - alpha) / (2h) starts negative while misclassified samples
    // dominate the weights, crosses zero as the flow sorts them out, and
    // never dips back below.
    size_t cross = trace.t.size();
    for (size_t i = 0; i < trace.t.size(); ++i) {
        if (row_nonneg[i]) {
            cross = i;
            break;
        }
    }
    REQUIRE(cross < trace.t.size());
    CHECK(cross + 20 < trace.t.size());
    bool stays = true;
    for (size_t i = cross; i < trace.t.size(); ++i) stays = stays && row_nonneg[i];
    CHECK(stays);

    FlowKind plain{};
    auto raw = make_flow(plain, data, {2, 1});
    const Vector r0 = raw->pack(init_network({2, 1}, 4, 1.0, InitScheme::Gaussian));
    StepPolicy short_policy = policy;
    short_policy.stop_time = 0.01;
    const Trajectory rtr = integrate(*raw, r0, short_policy);
    CHECK_THROWS_AS(norm_correction_trace(*raw, rtr, policy.h), DomainError);
}

TEST_CASE("direction error series against a target") {
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 1.0, 0.0;
    one.y = Vector::Ones(1);
    FlowKind kind{};
    auto flow = make_flow(kind, one, {2, 1});
    NetworkParams p;
    p.w = {Matrix(1, 2)};
    p.w[0] << 0.4, 0.9;
    const Vector s0 = flow->pack(p);

    StepPolicy policy;
    policy.h = 1e-2;
    policy.stop_time = 50.0;
    policy.record_every = 10;
    policy.record_states_every = 10;
    const Trajectory tr = integrate(*flow, s0, policy);

    Vector target(2);
    target << 1.0, 0.0;
    const auto [t, err] = direction_error_series(*flow, tr, target);
    REQUIRE(t.size() == err.size());
    REQUIRE(t.size() >= 10);
    for (size_t i = 1; i < t.size(); ++i) CHECK(t[i] > t[i - 1]);
    CHECK(err.back() < err.front());

    // Against its own final direction the last error vanishes.
    const auto [t2, err2] =
        direction_error_series(*flow, tr, flow->direction(tr.final_state));
    CHECK(err2.back() <= 1e-12);
}
