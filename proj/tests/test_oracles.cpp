#include <cmath>

#include "doctest.h"
#include "marginflow/datasets.hpp"
#include "marginflow/oracles.hpp"
#include "marginflow/rng.hpp"

using namespace mf;

TEST_CASE("finite differences agree with reverse mode") {
    Rng rng(31);
    int done = 0;
    for (int trial = 0; trial < 120 && done < 15; ++trial) {
        std::vector<int> dims = {3, 2 + trial % 4, 1};
        if (trial % 3 == 0) dims.insert(dims.begin() + 1, 3);
        const NetworkParams p = init_network(dims, 700 + trial, 1.0, InitScheme::Gaussian);
        Vector x(3);
        for (int i = 0; i < 3; ++i) x(i) = rng.gaussian();
        try {
            const std::vector<Matrix> fd = oracle::fd_gradient(p, x);
            const std::vector<Matrix> an = grad_weights(p, x);
            for (size_t k = 0; k < fd.size(); ++k)
                CHECK((fd[k] - an[k]).norm() <= 1e-6 * (1.0 + an[k].norm()));
            ++done;
        } catch (const KinkError&) {
        }
    }
    CHECK(done == 15);
}

TEST_CASE("finite differences refuse to straddle a kink") {
    NetworkParams p;
    p.w = {Matrix(2, 2), Matrix(1, 2)};
    p.w[0] << 0.0, 1.0, 1.0, 0.0;  // first unit sees exactly zero on x = e1
    p.w[1] << 1.0, 1.0;
    Vector x(2);
    x << 1.0, 0.0;
    CHECK_THROWS_AS(oracle::fd_gradient(p, x), KinkError);
}

TEST_CASE("two-point closed form") {
    const oracle::Equilibrium1d eq = oracle::closed_form_1d(1.0, 2.0);
    CHECK(eq.w_star == doctest::Approx(std::log(2.0) / 3.0).epsilon(1e-15));
    CHECK(eq.field_derivative < 0.0);
    CHECK(eq.stable);

    // The closed form zeroes the field for other placements too.
    const oracle::Equilibrium1d eq2 = oracle::closed_form_1d(0.7, 1.9);
    const double w = eq2.w_star;
    const double field = -0.7 * std::exp(0.7 * w) + 1.9 * std::exp(-1.9 * w);
    CHECK(std::abs(field) <= 1e-12);
    CHECK_THROWS_AS(oracle::closed_form_1d(-1.0, 2.0), DomainError);
}

TEST_CASE("fixed point of the single-sample constrained flow") {
    Dataset data;
    data.x = Matrix(1, 3);
    data.x << 0.6, -0.3, 0.9;
    data.y = Vector::Ones(1);
    const Vector v = oracle::pseudoinverse_fixed_point(data, 4.0);
    const Vector want = data.x.row(0).transpose().normalized();
    CHECK((v - want).norm() <= 1e-12);

    // Multi-sample: the returned direction satisfies its own equation.
    DataSpec spec;
    spec.d = 2;
    spec.n = 8;
    spec.seed = 5;
    const Dataset blobs = make_dataset(spec);
    const double rho = 6.0;
    const Vector u = oracle::pseudoinverse_fixed_point(blobs, rho);
    Vector g = Vector::Zero(2);
    const Vector yf = (blobs.y.array() * (blobs.x * u).array()).matrix();
    const double shift = (-rho * yf.array()).maxCoeff();
    for (int n = 0; n < blobs.n(); ++n)
        g += std::exp(-rho * yf(n) - shift) * blobs.y(n) * blobs.x.row(n).transpose();
    CHECK((u - g.normalized()).norm() <= 1e-10);
}

TEST_CASE("logarithmic integral") {
    CHECK(oracle::li(2.0) == doctest::Approx(1.04516378011749278).epsilon(1e-10));

    // Quadrature against the independent series form.
    for (double z : {2.0, 5.0, 37.0, 1e3, 1e6})
        CHECK(oracle::li(z) == doctest::Approx(oracle::li_series(z)).epsilon(1e-8));

    // Monotone on (1, inf), and the inverse really inverts.
    CHECK(oracle::li(10.0) > oracle::li(5.0));
    for (double z : {1.5, 3.0, 20.0, 4e2, 1e6}) {
        const double y = oracle::li(z);
        CHECK(oracle::li_inverse(y) == doctest::Approx(z).epsilon(1e-9));
    }
    CHECK_THROWS_AS(oracle::li(0.5), DomainError);
}

TEST_CASE("hard-margin enumeration on crafted 2D sets") {
    Dataset axis;
    axis.x = Matrix(2, 2);
    axis.x << 2.0, 0.0, -1.0, 0.0;
    axis.y = Vector(2);
    axis.y << 1.0, -1.0;
    const oracle::MaxMarginSolution sol = oracle::hard_margin_direction(axis);
    CHECK(std::abs(sol.direction(0) - 1.0) <= 1e-9);
    CHECK(std::abs(sol.direction(1)) <= 1e-9);
    CHECK(sol.margin == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(sol.support == std::vector<int>{1});

    // Symmetric three-point set: all three samples support the separator.
    Dataset tri;
    tri.x = Matrix(3, 2);
    tri.x << 1.0, 0.0, 0.0, 1.0, -0.5, -0.5;
    tri.y = Vector(3);
    tri.y << 1.0, 1.0, -1.0;
    const oracle::MaxMarginSolution s3 = oracle::hard_margin_direction(tri);
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(std::abs(s3.direction(0) - inv_sqrt2) <= 1e-9);
    CHECK(std::abs(s3.direction(1) - inv_sqrt2) <= 1e-9);
    CHECK(s3.margin == doctest::Approx(inv_sqrt2).epsilon(1e-9));
    CHECK(s3.support == std::vector<int>{0, 1, 2});
}

TEST_CASE("enumeration refuses non-separable data") {
    Dataset xo;
    xo.x = Matrix(4, 2);
    xo.x << 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0, 1.0;
    xo.y = Vector(4);
    xo.y << 1.0, 1.0, -1.0, -1.0;  // XOR labels
    CHECK_THROWS_AS(oracle::hard_margin_direction(xo), InfeasibleError);

    DataSpec ring;
    ring.source = "ring-vs-center";
    ring.d = 2;
    ring.n = 16;
    ring.seed = 9;
    CHECK_THROWS_AS(oracle::hard_margin_direction(make_dataset(ring)), InfeasibleError);
}

TEST_CASE("depth-two grid search backstop") {
    Dataset axis;
    axis.x = Matrix(2, 2);
    axis.x << 2.0, 0.0, -1.0, 0.0;
    axis.y = Vector(2);
    axis.y << 1.0, -1.0;
    const oracle::DeepGridResult g = oracle::deep_margin_grid(axis, 2, 0.05);
    CHECK(g.near_ties >= 1);
    CHECK(g.margin > 0.0);
    // The reported margin is what its own parameters achieve.
    const NetworkParams net = dirs_net(g.params);
    double recomputed = std::numeric_limits<double>::infinity();
    for (int n = 0; n < axis.n(); ++n)
        recomputed =
            std::min(recomputed, axis.y(n) * forward(net, axis.x.row(n).transpose()));
    CHECK(g.margin == doctest::Approx(recomputed).epsilon(1e-12));
}
