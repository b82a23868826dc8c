#include <cstdio>
#include <fstream>
#include <string>

#include "doctest.h"
#include "marginflow/datasets.hpp"
#include "marginflow/oracles.hpp"

using namespace mf;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/mf_test_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("gaussian blobs: seeded, separated, sided") {
    DataSpec spec;
    spec.d = 3;
    spec.n = 14;
    spec.gap = 1.5;
    spec.seed = 42;
    const Dataset a = make_dataset(spec);
    const Dataset b = make_dataset(spec);
    CHECK(a.n() == 14);
    CHECK(a.dim() == 3);
    CHECK(dataset_to_csv(a) == dataset_to_csv(b));

    // Every point stays on its label's side of the first axis, so the first
    // coordinate alone separates.
    for (int n = 0; n < a.n(); ++n) CHECK(a.y(n) * a.x(n, 0) > 0.0);

    spec.seed = 43;
    CHECK(dataset_to_csv(make_dataset(spec)) != dataset_to_csv(a));

    spec.bias = true;
    const Dataset withb = make_dataset(spec);
    CHECK(withb.dim() == 4);
    for (int n = 0; n < withb.n(); ++n) CHECK(withb.x(n, 3) == 1.0);
}

TEST_CASE("two-point 1d contents") {
    DataSpec spec;
    spec.source = "two-point-1d";
    spec.x1 = 1.0;
    spec.x2 = 2.0;
    const Dataset d = make_dataset(spec);
    REQUIRE(d.n() == 2);
    CHECK(d.dim() == 1);
    CHECK(d.x(0, 0) == 1.0);
    CHECK(d.y(0) == -1.0);
    CHECK(d.x(1, 0) == 2.0);
    CHECK(d.y(1) == 1.0);

    spec.x1 = -1.0;
    CHECK_THROWS_AS(make_dataset(spec), ConfigError);
}

TEST_CASE("ring vs center is labelled and balanced") {
    DataSpec spec;
    spec.source = "ring-vs-center";
    spec.d = 2;
    spec.n = 12;
    spec.seed = 3;
    const Dataset d = make_dataset(spec);
    CHECK(d.n() == 12);
    int pos = 0;
    for (int n = 0; n < d.n(); ++n) {
        CHECK(std::abs(d.y(n)) == 1.0);
        if (d.y(n) > 0) ++pos;
    }
    CHECK(pos > 0);
    CHECK(pos < d.n());
}

TEST_CASE("csv round trip") {
    DataSpec spec;
    spec.d = 2;
    spec.n = 6;
    spec.seed = 77;
    const Dataset d = make_dataset(spec);

    TempFile f("roundtrip.csv");
    write_dataset_csv(d, f.path);
    const Dataset back = load_csv(f.path, "y", "1");
    REQUIRE(back.n() == d.n());
    REQUIRE(back.dim() == d.dim());
    CHECK((back.x - d.x).norm() == 0.0);
    CHECK((back.y - d.y).norm() == 0.0);

    // Column by numeric index and a row subset.
    const Dataset sub = load_csv(f.path, "2", "1", {0, 2, 4});
    REQUIRE(sub.n() == 3);
    CHECK(sub.x(1, 0) == d.x(2, 0));

    // Through the declarative spec.
    DataSpec csv_spec;
    csv_spec.source = "csv";
    csv_spec.path = f.path;
    csv_spec.label_col = "y";
    const Dataset again = make_dataset(csv_spec);
    CHECK((again.x - d.x).norm() == 0.0);
}

TEST_CASE("csv errors carry line numbers") {
    TempFile f("bad.csv");
    {
        std::ofstream os(f.path);
        os << "a,b,y\n1,2,1\n1,oops,-1\n";
    }
    try {
        load_csv(f.path, "y", "1");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find(":3") != std::string::npos);
    }

    TempFile g("ragged.csv");
    {
        std::ofstream os(g.path);
        os << "a,b,y\n1,2,1\n3,4\n";
    }
    CHECK_THROWS_AS(load_csv(g.path, "y", "1"), ParseError);
    CHECK_THROWS_AS(load_csv("/tmp/mf_test_does_not_exist.csv", "y", "1"), ParseError);
}

TEST_CASE("spec validation") {
    DataSpec spec;
    spec.source = "no-such-source";
    CHECK_THROWS_AS(make_dataset(spec), ConfigError);

    DataSpec tiny;
    tiny.n = 0;
    CHECK_THROWS_AS(make_dataset(tiny), ConfigError);

    DataSpec label_missing;
    label_missing.source = "csv";
    label_missing.path = "/tmp/whatever.csv";
    label_missing.label_col = "";
    CHECK_THROWS_AS(make_dataset(label_missing), ConfigError);
}
