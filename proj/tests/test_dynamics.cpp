#include <cmath>
#include <limits>

#include "doctest.h"
#include "marginflow/datasets.hpp"
#include "marginflow/dynamics.hpp"
#include "marginflow/rng.hpp"

using namespace mf;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Dataset blobs2d(int n, std::uint64_t seed) {
    DataSpec spec;
    spec.d = 2;
    spec.n = n;
    spec.gap = 1.5;
    spec.seed = seed;
    return make_dataset(spec);
}

Vector rand_vec(Rng& rng, Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.gaussian();
    return v;
}

}  // namespace

TEST_CASE("kind and schedule names round trip") {
    for (const char* name :
         {"unconstrained", "constrained_fixed_rho", "full_lagrange", "reparameterized",
          "weight_norm", "batch_norm_core", "tangent_lp", "rescaled_alpha"})
        CHECK(to_string(flow_tag_from_string(name)) == name);
    for (const char* name : {"one", "inv_log_t", "log_t", "log_log_t", "exp_t", "linear_t"})
        CHECK(to_string(alpha_schedule_from_string(name)) == name);
    CHECK_THROWS_AS(flow_tag_from_string("nope"), ConfigError);
    CHECK_THROWS_AS(alpha_schedule_from_string("nope"), ConfigError);
}

TEST_CASE("alpha schedules and their domains") {
    const double e2 = std::exp(2.0);
    CHECK(alpha_value(AlphaSchedule::One, 0.0) == 1.0);
    CHECK(alpha_value(AlphaSchedule::InvLogT, e2) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(alpha_value(AlphaSchedule::LogT, e2) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(alpha_value(AlphaSchedule::LogLogT, std::exp(e2)) ==
          doctest::Approx(2.0).epsilon(1e-12));
    CHECK(alpha_value(AlphaSchedule::ExpT, 1.0) == doctest::Approx(std::exp(1.0)));
    CHECK(alpha_value(AlphaSchedule::LinearT, 3.0) == 3.0);
    CHECK_THROWS_AS(alpha_value(AlphaSchedule::InvLogT, 1.0), DomainError);
    CHECK_THROWS_AS(alpha_value(AlphaSchedule::LogLogT, 2.0), DomainError);
    CHECK_THROWS_AS(alpha_value(AlphaSchedule::LinearT, 0.0), DomainError);
    CHECK_THROWS_AS(alpha_value(AlphaSchedule::ExpT, 1000.0), DomainError);
}

TEST_CASE("raw field: one-sample linear closed form") {
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 0.5, -0.25;
    one.y = Vector::Ones(1);
    FlowKind kind{};  // Unconstrained, raw weights, no shift
    auto flow = make_flow(kind, one, {2, 1});
    NetworkParams p;
    p.w = {Matrix(1, 2)};
    p.w[0] << 0.3, 0.8;
    const Vector s = flow->pack(p);
    Vector ds(flow->dim());
    double log_dt = 1.0;
    flow->derivative(0.0, 0.0, s, ds, &log_dt);
    const double wx = 0.3 * 0.5 + 0.8 * -0.25;
    const Vector want = std::exp(-wx) * one.x.row(0).transpose();
    CHECK((ds - want).norm() <= 1e-15);
    CHECK(log_dt == 0.0);  // raw mode never rescales time
}

TEST_CASE("per-layer norm growth is layer independent") {
    const Dataset data = blobs2d(10, 15);
    FlowKind kind{};
    auto flow = make_flow(kind, data, {2, 4, 3, 1});
    for (int trial = 0; trial < 5; ++trial) {
        const NetworkParams p =
            init_network({2, 4, 3, 1}, 50 + trial, 0.8, InitScheme::Gaussian);
        const Observables obs = flow->observe(0.0, 0.0, flow->pack(p));
        const double scale = obs.drho2dt.cwiseAbs().maxCoeff() + 1e-30;
        CHECK((obs.drho2dt.maxCoeff() - obs.drho2dt.minCoeff()) / scale <= 1e-12);
    }
}

TEST_CASE("norms grow once every sample is classified") {
    const Dataset data = blobs2d(12, 16);
    // Hand-built depth-2 net computing f(x) = x1, which separates the blobs.
    NetworkParams p;
    p.w = {Matrix(2, 2), Matrix(1, 2)};
    p.w[0] << 1.0, 0.0, -1.0, 0.0;
    p.w[1] << 1.0, -1.0;
    FlowKind kind{};
    auto flow = make_flow(kind, data, {2, 2, 1});
    const Observables obs = flow->observe(0.0, 0.0, flow->pack(p));
    CHECK(obs.margin() > 0.0);
    CHECK(obs.drho2dt.minCoeff() > 0.0);
}

TEST_CASE("constrained fields stay tangent to the direction spheres") {
    const Dataset data = blobs2d(9, 21);
    const std::vector<int> dims = {2, 3, 1};
    const NetworkParams p = init_network(dims, 33, 1.1, InitScheme::Gaussian);

    FlowKind kc{};
    kc.tag = FlowKindTag::ConstrainedFixedRho;
    kc.rho = 2.0;
    auto fc = make_flow(kc, data, dims);
    const Vector sc = fc->pack(p);
    Vector dc(fc->dim());
    fc->derivative(0.0, 0.0, sc, dc, nullptr);
    // State is the concatenated direction blocks; tangency per block.
    Eigen::Index off = 0;
    for (const Eigen::Index sz : {Eigen::Index(6), Eigen::Index(3)}) {
        CHECK(std::abs(sc.segment(off, sz).dot(dc.segment(off, sz))) <= 1e-12);
        off += sz;
    }

    FlowKind kf{};
    kf.tag = FlowKindTag::FullLagrange;
    auto ff = make_flow(kf, data, dims);
    const Vector sf = ff->pack(p);
    Vector df(ff->dim());
    ff->derivative(0.0, 0.0, sf, df, nullptr);
    off = 2;  // past the per-layer norm block
    for (const Eigen::Index sz : {Eigen::Index(6), Eigen::Index(3)}) {
        CHECK(std::abs(sf.segment(off, sz).dot(df.segment(off, sz))) <= 1e-12);
        off += sz;
    }
}

TEST_CASE("single-sample constrained flow is stationary at the sample direction") {
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 0.6, 0.8;
    one.y = Vector::Ones(1);
    FlowKind kind{};
    kind.tag = FlowKindTag::ConstrainedFixedRho;
    kind.rho = 3.0;
    auto flow = make_flow(kind, one, {2, 1});
    NetworkParams p;
    p.w = {Matrix(1, 2)};
    p.w[0] << 0.6, 0.8;  // already the unit sample direction
    const Vector s = flow->pack(p);
    Vector ds(flow->dim());
    flow->derivative(0.0, 0.0, s, ds, nullptr);
    CHECK(ds.norm() <= 1e-14);
    CHECK(flow->observe(0.0, 0.0, s).stationarity <= 1e-14);

    // A rotated direction is not stationary.
    p.w[0] << 1.0, 0.0;
    const Vector s2 = flow->pack(p);
    CHECK(flow->observe(0.0, 0.0, s2).stationarity > 1e-3);
}

TEST_CASE("field equivalences at matched states") {
    const Dataset data = blobs2d(12, 77);
    const std::vector<int> dims = {2, 5, 1};
    const NetworkParams net = init_network(dims, 41, 1.3, InitScheme::Gaussian);
    double ls = 0.0;

    FlowKind kwn{};
    kwn.tag = FlowKindTag::WeightNorm;
    FlowKind kfl{};
    kfl.tag = FlowKindTag::FullLagrange;
    auto fwn = make_flow(kwn, data, dims);
    auto ffl = make_flow(kfl, data, dims);
    const Vector swn = fwn->pack(net);
    const Vector sfl = ffl->pack(net);
    REQUIRE(swn.size() == sfl.size());
    CHECK((swn - sfl).norm() <= 1e-12 * swn.norm());  // same polar layout at unit carriers
    Vector dwn(fwn->dim()), dfl(ffl->dim());
    fwn->derivative(0.0, 0.0, swn, dwn, &ls);
    ffl->derivative(0.0, 0.0, sfl, dfl, &ls);
    CHECK((dwn - dfl).norm() <= 1e-12 * (1.0 + dfl.norm()));

    // Fixed-scale projected field vs the raw flow in polar coordinates:
    // the direction parts differ per layer by exactly rho_k^2.
    const NormalizedParams polar = decompose(net);
    NetworkParams balanced;
    balanced.w.resize(net.depth());
    const double per = std::pow(polar.rho_product(), 1.0 / net.depth());
    for (int k = 0; k < net.depth(); ++k) balanced.w[k] = per * polar.dir[k];

    FlowKind kc{};
    kc.tag = FlowKindTag::ConstrainedFixedRho;
    kc.rho = polar.rho_product();
    FlowKind kr{};
    kr.tag = FlowKindTag::Reparameterized;
    auto fc = make_flow(kc, data, dims);
    auto fr = make_flow(kr, data, dims);
    const Vector sc = fc->pack(balanced);
    const Vector sr = fr->pack(balanced);
    Vector dc(fc->dim()), dr(fr->dim());
    fc->derivative(0.0, 0.0, sc, dc, &ls);
    fr->derivative(0.0, 0.0, sr, dr, &ls);
    Eigen::Index off = 0;
    for (int k = 0; k < net.depth(); ++k) {
        const Eigen::Index sz = net.w[k].size();
        const Vector block_c = dc.segment(off, sz);
        const Vector block_r = dr.segment(net.depth() + off, sz);
        CHECK((block_c - per * per * block_r).norm() <= 1e-12 * (1.0 + block_c.norm()));
        off += sz;
    }
}

TEST_CASE("machine scale resolves against the margin gap") {
    Dataset one;
    one.x = Matrix(1, 2);
    one.x << 0.6, 0.8;
    one.y = Vector::Ones(1);
    FlowKind kind{};
    kind.tag = FlowKindTag::ConstrainedFixedRho;
    kind.machine_rho = true;
    auto flow = make_flow(kind, one, {2, 1});
    NetworkParams p;
    p.w = {Matrix(1, 2)};
    p.w[0] << 1.0, 0.0;
    const Vector s = flow->pack(p);
    const double margin = flow->margins(s)(0);  // 0.6 for this start
    CHECK(flow->kind().rho * std::abs(margin) ==
          doctest::Approx(36.04365338911715).epsilon(1e-12));

    FlowKind bad{};
    bad.machine_rho = true;  // scale of the unconstrained flow is not fixed
    CHECK_THROWS_AS(make_flow(bad, one, {2, 1}), ConfigError);
}

TEST_CASE("p-norm tangent flows stay tangent and flag corners") {
    Rng rng(8);
    Vector u = rand_vec(rng, 5);
    const Vector g = rand_vec(rng, 5);
    for (double p : {2.0, 1.0, 3.0, 1.5, kInf}) {
        Vector point = u;
        if (p == 1.0)
            for (Eigen::Index i = 0; i < point.size(); ++i)
                if (std::abs(point(i)) < 0.05) point(i) = 0.1;  // stay off the corner
        const Vector h = tangent_project(point, g, p);
        // Recompute the normal and check orthogonality.
        Vector nu(point.size());
        if (p == 2.0) {
            nu = point;
        } else if (p == 1.0) {
            nu = point.array().sign().matrix();
        } else if (std::isinf(p)) {
            nu.setZero();
            Eigen::Index top;
            point.cwiseAbs().maxCoeff(&top);
            nu(top) = point(top) > 0 ? 1.0 : -1.0;
        } else {
            const double nrm = std::pow(point.array().abs().pow(p).sum(), 1.0 / p);
            for (Eigen::Index i = 0; i < point.size(); ++i)
                nu(i) = (point(i) >= 0 ? 1.0 : -1.0) * std::pow(std::abs(point(i)) / nrm, p - 1.0);
        }
        CHECK(std::abs(nu.dot(h)) <= 1e-12 * (1.0 + g.norm() * nu.norm()));
    }

    Vector corner(3);
    corner << 0.5, 0.0, 0.8;
    CHECK_THROWS_AS(tangent_project(corner, g.head(3), 1.0), KinkError);
    Vector tie(2);
    tie << 0.7, 0.7;
    CHECK_THROWS_AS(tangent_project(tie, g.head(2), kInf), KinkError);
    CHECK_THROWS_AS(tangent_project(u, g, 0.5), DomainError);
}

TEST_CASE("norm-preserving multiplier") {
    Rng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        Vector v = rand_vec(rng, 4).normalized();
        const Vector g = 0.05 * rand_vec(rng, 4);
        const double a = lagrange_alpha(v, g);
        CHECK(std::abs((a * v + g).norm() - 1.0) <= 1e-14);
    }
    Vector v(2), g(2);
    v << 1.0, 0.0;
    // Shrinking steps drive the multiplier to 1.
    for (double h : {1e-2, 1e-4, 1e-6}) {
        g << -h, h;
        CHECK(std::abs(lagrange_alpha(v, g) - 1.0) <= 3.0 * h);
    }
    g << 0.0, 2.0;
    CHECK_THROWS_AS(lagrange_alpha(v, g), StepTooLargeError);
    v << 2.0, 0.0;
    g << 0.0, 0.1;
    CHECK_THROWS_AS(lagrange_alpha(v, g), DomainError);
}

TEST_CASE("sphere projector algebra") {
    Rng rng(4);
    const Vector v = rand_vec(rng, 6);
    const Vector g = rand_vec(rng, 6);
    const SphereProjector s{v};
    const Matrix dense = s.dense();
    const Matrix want = Matrix::Identity(6, 6) - v * v.transpose() / v.squaredNorm();
    CHECK((dense - want).norm() <= 1e-14);
    CHECK((s.apply(g) - dense * g).norm() <= 1e-14 * g.norm());
    CHECK(std::abs(v.dot(s.apply(g))) <= 1e-12 * v.norm() * g.norm());
    CHECK((dense * dense - dense).norm() <= 1e-14);
}

TEST_CASE("reduced normalizer backward map") {
    Rng rng(19);
    const Vector z = rand_vec(rng, 8);
    const double n = static_cast<double>(z.size());

    const Matrix j0 = bn_jacobian(z, 0.0);
    const Matrix scaled = j0 * (z.norm() / std::sqrt(n));
    const Matrix sphere = Matrix::Identity(8, 8) - z * z.transpose() / z.squaredNorm();
    CHECK((scaled - sphere).norm() <= 1e-12);

    const BnBatch b = bn_normalize(z, 0.0);
    CHECK((j0 * b.xhat).norm() <= 1e-10);
    CHECK(b.sigma2 == doctest::Approx(z.squaredNorm() / n).epsilon(1e-14));

    const Vector g = rand_vec(rng, 8);
    CHECK((bn_apply(z, g, 1e-3) - bn_jacobian(z, 1e-3) * g).norm() <= 1e-12 * g.norm());
    CHECK_THROWS_AS(bn_normalize(Vector::Zero(4), 0.0), DegenerateError);
}

TEST_CASE("rescaled flow reduces to plain polar flow at unit schedule") {
    Dataset one;
    one.x = Matrix(2, 2);
    one.x << 0.9, 0.1, -0.7, 0.4;
    one.y = Vector(2);
    one.y << 1.0, -1.0;
    const std::vector<int> dims = {2, 1};
    const NetworkParams p = init_network(dims, 6, 0.9, InitScheme::Gaussian);
    double ls = 0.0;

    FlowKind ka{};
    ka.tag = FlowKindTag::RescaledAlpha;
    FlowKind kr{};
    kr.tag = FlowKindTag::Reparameterized;
    auto fa = make_flow(ka, one, dims);
    auto fr = make_flow(kr, one, dims);
    const Vector sa = fa->pack(p);
    const Vector sr = fr->pack(p);
    REQUIRE(sa.size() == sr.size());
    Vector da(fa->dim()), dr(fr->dim());
    fa->derivative(0.0, 5.0, sa, da, &ls);
    fr->derivative(0.0, 5.0, sr, dr, &ls);
    CHECK((da - dr).norm() <= 1e-12 * (1.0 + dr.norm()));

    // Schedules with restricted domains refuse early flow times.
    FlowKind kinv = ka;
    kinv.schedule = AlphaSchedule::InvLogT;
    auto finv = make_flow(kinv, one, dims);
    Vector dinv(finv->dim());
    CHECK_THROWS_AS(finv->derivative(0.0, 0.5, sa, dinv, &ls), DomainError);
    // The exponent scale reports alpha * rho, not rho alone.
    const double t = std::exp(2.0);
    CHECK(finv->exponent_scale(t, sa) == doctest::Approx(0.5 * sa(0)).epsilon(1e-12));
}

TEST_CASE("flow construction guards") {
    const Dataset data = blobs2d(6, 2);
    FlowKind kind{};
    CHECK_THROWS_AS(make_flow(kind, data, {3, 1}), ShapeError);      // dims vs data
    CHECK_THROWS_AS(make_flow(kind, data, {2}), ConfigError);        // no layers
    CHECK_THROWS_AS(make_flow(kind, data, {2, 0, 1}), ConfigError);  // zero width
    CHECK_THROWS_AS(make_flow(kind, data, {2, 2}), ShapeError);      // output not scalar

    FlowKind deep{};
    deep.tag = FlowKindTag::TangentLp;
    CHECK_THROWS_AS(make_flow(deep, data, {2, 3, 1}), ConfigError);  // single unit only

    FlowKind badp{};
    badp.tag = FlowKindTag::TangentLp;
    badp.p = 0.5;
    CHECK_THROWS_AS(make_flow(badp, data, {2, 1}), ConfigError);

    FlowKind badrho{};
    badrho.tag = FlowKindTag::ConstrainedFixedRho;
    badrho.rho = -1.0;
    CHECK_THROWS_AS(make_flow(badrho, data, {2, 1}), ConfigError);
}
