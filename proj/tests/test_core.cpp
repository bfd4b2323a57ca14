#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "survcal/data.hpp"
#include "survcal/mathutil.hpp"
#include "survcal/params.hpp"
#include "survcal/rng.hpp"

using namespace survcal;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const std::string path = "tmp_" + name;
    std::ofstream out(path);
    out << content;
    return path;
}

Dataset tiny_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    Dataset d;
    d.dim = dim;
    d.observations.resize(n);
    for (auto& obs : d.observations) {
        obs.covariates.resize(dim);
        for (double& x : obs.covariates) x = rng.normal();
        obs.time = std::exp(rng.normal());
        obs.event = rng.uniform() < 0.7;
    }
    return d;
}

}  // namespace

TEST_CASE("csv rows map to observations") {
    const auto path = write_temp("load.csv", "u,delta,x1,x2\n3.5,1,0.1,-0.2\n2.0,0,1.5,2.5\n");
    const Dataset d = load_dataset(path);
    REQUIRE(d.size() == 2);
    CHECK(d.dim == 2);
    CHECK(d.observations[0].time == 3.5);
    CHECK(d.observations[0].event);
    CHECK(d.observations[0].covariates == std::vector<double>{0.1, -0.2});
    CHECK_FALSE(d.observations[1].event);
    std::remove(path.c_str());
}

TEST_CASE("csv loader rejects bad rows") {
    CHECK_THROWS_AS(load_dataset(write_temp("neg.csv", "u,delta,x1\n-1.0,1,0.5\n")), DataError);
    CHECK_THROWS_AS(load_dataset(write_temp("cols.csv", "u,delta,x1\n1.0,1\n")), DataError);
    CHECK_THROWS_AS(load_dataset(write_temp("text.csv", "u,delta,x1\nabc,1,0.5\n")), DataError);
    CHECK_THROWS_AS(load_dataset(write_temp("delta.csv", "u,delta,x1\n1.0,2,0.5\n")), DataError);
    CHECK_THROWS_AS(load_dataset("tmp_load.csv", "parquet"), DataError);
    for (const char* f : {"tmp_neg.csv", "tmp_cols.csv", "tmp_text.csv", "tmp_delta.csv"}) {
        std::remove(f);
    }
}

TEST_CASE("dataset save/load round trip is bit exact") {
    const Dataset d = tiny_dataset(64, 3, 11);
    const std::string path = "tmp_roundtrip.csv";
    save_dataset(d, path);
    const Dataset back = load_dataset(path);
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back.observations[i].time == d.observations[i].time);
        CHECK(back.observations[i].event == d.observations[i].event);
        CHECK(back.observations[i].covariates == d.observations[i].covariates);
    }
    std::remove(path.c_str());
}

TEST_CASE("split sizes are floor-rounded with the remainder in train") {
    const Dataset d = tiny_dataset(200000, 1, 5);
    const Split s = split_dataset(d, {0.5, 0.25, 0.25}, 1);
    CHECK(s.train.size() == 100000);
    CHECK(s.validation.size() == 50000);
    CHECK(s.test.size() == 50000);
}

TEST_CASE("split is deterministic per seed and rejects empty parts") {
    const Dataset d = tiny_dataset(4, 1, 5);
    const Split a = split_dataset(d, {0.5, 0.25, 0.25}, 9);
    const Split b = split_dataset(d, {0.5, 0.25, 0.25}, 9);
    CHECK(a.train_indices == b.train_indices);
    CHECK(a.validation_indices == b.validation_indices);
    CHECK(a.test_indices == b.test_indices);

    const Dataset small = tiny_dataset(3, 1, 5);
    CHECK_THROWS_AS(split_dataset(small, {1.0, 0.0, 0.0}, 0), DataError);
    CHECK_THROWS_AS(split_dataset(d, {0.5, 0.2, 0.2}, 0), DataError);  // fractions != 1
}

TEST_CASE("batches partition the epoch") {
    const auto batches = make_batches(10, 4, 3, 0);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);

    std::set<std::size_t> seen;
    for (const auto& b : batches) seen.insert(b.begin(), b.end());
    CHECK(seen.size() == 10);  // every index exactly once

    CHECK(make_batches(10, 4, 3, 0) == batches);           // same (seed, epoch)
    CHECK(make_batches(10, 4, 3, 1) != batches);           // fresh shuffle per epoch
    CHECK_THROWS_AS(make_batches(10, 1, 3, 0), std::invalid_argument);
}

TEST_CASE("equal bin scheme widths and hard membership") {
    const BinScheme bins = BinScheme::equal(20);
    REQUIRE(bins.bins() == 20);
    for (std::size_t i = 0; i < bins.bins(); ++i) {
        CHECK(bins.width(i) == doctest::Approx(0.05).epsilon(1e-12));
    }
    CHECK(bins.hard_bin(0.0) == 0);
    CHECK(bins.hard_bin(0.5) == 10);   // half-open: 0.5 belongs to [0.5, 0.55)
    CHECK(bins.hard_bin(0.999) == 19);
    CHECK(bins.hard_bin(1.0) == 19);   // last bin closed
}

TEST_CASE("rng streams are deterministic and tag-separated") {
    Rng a(7, 1), b(7, 1), c(7, 2);
    bool all_equal = true;
    bool any_equal_cross = false;
    for (int i = 0; i < 64; ++i) {
        const auto x = a.next_u64();
        all_equal &= (x == b.next_u64());
        any_equal_cross |= (x == c.next_u64());
    }
    CHECK(all_equal);
    CHECK_FALSE(any_equal_cross);
}

TEST_CASE("normal draws have the right moments") {
    Rng rng(13);
    const std::size_t n = 100000;
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("sigmoid derivative stays positive deep into saturation") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid_deriv(0.0) == doctest::Approx(0.25));
    // The factored form matters: s*(1-s) would round to 0 long before 600.
    CHECK(sigmoid_deriv(600.0) > 0.0);
    CHECK(sigmoid_deriv(-600.0) > 0.0);
    CHECK(sigmoid_deriv(37.0) > 0.0);
    CHECK(sigmoid_deriv(600.0) == sigmoid_deriv(-600.0));
}

TEST_CASE("percentile interpolates order statistics") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i + 1.0;
    CHECK(percentile_sorted(v, 90.0) == doctest::Approx(90.1).epsilon(1e-12));
    CHECK(percentile_sorted(v, 0.0) == 1.0);
    CHECK(percentile_sorted(v, 100.0) == 100.0);
    CHECK(percentile_sorted(v, 50.0) == doctest::Approx(50.5));
}

TEST_CASE("ks distance against the uniform") {
    std::vector<double> grid(1000);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = (i + 0.5) / grid.size();
    CHECK(ks_distance_uniform01(grid) < 1e-3);
    CHECK(ks_distance_uniform01(std::vector<double>(100, 0.5)) == doctest::Approx(0.5));
}

TEST_CASE("fnv1a64 matches the published vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("format_double round-trips") {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -0.0, 2.0}) {
        CHECK(std::stod(format_double(v)) == v);
    }
    CHECK(format_double(1.0) == "1");
}

// ---- parameter engine ----

TEST_CASE("linear map with zero parameters is the zero map") {
    const MlpSpec spec{2, {}, 3};
    const std::vector<double> theta(spec.layout().total, 0.0);
    const auto out = mlp_forward(spec, theta, std::vector<double>{1.0, -2.0});
    CHECK(out == std::vector<double>{0.0, 0.0, 0.0});
}

TEST_CASE("identity layer passes positive inputs through") {
    const MlpSpec spec{2, {2}, 2};
    const ParamLayout layout = spec.layout();
    std::vector<double> theta(layout.total, 0.0);
    const auto& w0 = layout.find("w0");
    const auto& w1 = layout.find("w1");
    for (std::size_t r = 0; r < 2; ++r) {
        theta[w0.offset + r * w0.cols + r] = 1.0;
        theta[w1.offset + r * w1.cols + r] = 1.0;
    }
    const auto out = mlp_forward(spec, theta, std::vector<double>{1.0, 2.0});
    CHECK(out == std::vector<double>{1.0, 2.0});
}

TEST_CASE("forward matches a straight-line re-implementation") {
    const MlpSpec spec{3, {5, 4}, 2};
    const std::vector<double> theta = init_params(spec, 99);
    const std::vector<double> x = {0.3, -1.2, 0.8};

    // Second evaluator, written directly from the affine/rectifier definition.
    const ParamLayout layout = spec.layout();
    std::vector<double> cur = x;
    std::vector<std::size_t> dims = spec.hidden;
    dims.push_back(spec.output_dim);
    for (std::size_t layer = 0; layer < dims.size(); ++layer) {
        const auto& w = layout.find("w" + std::to_string(layer));
        const auto& b = layout.find("b" + std::to_string(layer));
        std::vector<double> next(dims[layer]);
        for (std::size_t r = 0; r < dims[layer]; ++r) {
            double acc = theta[b.offset + r];
            for (std::size_t c = 0; c < cur.size(); ++c) {
                acc += theta[w.offset + r * w.cols + c] * cur[c];
            }
            next[r] = (layer + 1 < dims.size() && acc < 0.0) ? 0.0 : acc;
        }
        cur = std::move(next);
    }

    const auto out = mlp_forward(spec, theta, x);
    REQUIRE(out.size() == cur.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i] == doctest::Approx(cur[i]).epsilon(1e-12));
    }
}

TEST_CASE("linear-map jacobian rows") {
    const MlpSpec spec{3, {}, 2};
    const ParamLayout layout = spec.layout();
    std::vector<double> theta(layout.total, 0.5);
    const std::vector<double> x = {1.0, 2.0, 3.0};

    MlpTrace trace;
    mlp_forward(spec, theta, x, &trace);
    std::vector<double> grad(layout.total, 0.0);
    mlp_backward(spec, theta, trace, std::vector<double>{0.0, 1.0}, grad);

    const auto& w0 = layout.find("w0");
    const auto& b0 = layout.find("b0");
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(grad[w0.offset + 0 * w0.cols + c] == 0.0);       // row 0 untouched
        CHECK(grad[w0.offset + 1 * w0.cols + c] == x[c]);      // row 1 gets x
    }
    CHECK(grad[b0.offset + 0] == 0.0);
    CHECK(grad[b0.offset + 1] == 1.0);
}

TEST_CASE("backward matches finite differences") {
    const MlpSpec spec{3, {4}, 2};
    const std::vector<double> theta = init_params(spec, 7);
    const std::vector<double> x = {0.5, -0.3, 1.1};
    const std::vector<double> upstream = {1.3, -0.7};

    MlpTrace trace;
    mlp_forward(spec, theta, x, &trace);
    std::vector<double> grad(theta.size(), 0.0);
    mlp_backward(spec, theta, trace, upstream, grad);

    const auto f = [&](std::span<const double> th) {
        const auto out = mlp_forward(spec, th, x);
        return upstream[0] * out[0] + upstream[1] * out[1];
    };
    const auto fd = finite_difference_gradient(f, theta, 1e-5);
    for (std::size_t i = 0; i < grad.size(); ++i) {
        CHECK(grad[i] == doctest::Approx(fd[i]).epsilon(1e-5));
    }
}

TEST_CASE("rectifier kink uses subgradient zero") {
    const MlpSpec spec{1, {1}, 1};
    const ParamLayout layout = spec.layout();
    std::vector<double> theta(layout.total, 0.0);
    theta[layout.find("w1").offset] = 2.0;  // head weight; hidden pre-activation stays 0

    MlpTrace trace;
    mlp_forward(spec, theta, std::vector<double>{1.0}, &trace);
    std::vector<double> grad(theta.size(), 0.0);
    mlp_backward(spec, theta, trace, std::vector<double>{1.0}, grad);

    const auto& w0 = layout.find("w0");
    const auto& b0 = layout.find("b0");
    CHECK(grad[w0.offset] == 0.0);
    CHECK(grad[b0.offset] == 0.0);
}

TEST_CASE("finite differences on closed forms") {
    const auto square = [](std::span<const double> t) { return t[0] * t[0]; };
    const auto fd1 = finite_difference_gradient(square, std::vector<double>{3.0}, 1e-4);
    CHECK(fd1[0] == doctest::Approx(6.0).epsilon(1e-6));

    const auto constant = [](std::span<const double>) { return 4.2; };
    const auto fd2 = finite_difference_gradient(constant, std::vector<double>{1.0, 2.0}, 1e-4);
    CHECK(fd2 == std::vector<double>{0.0, 0.0});

    const auto sine = [](std::span<const double> t) { return std::sin(t[0]); };
    const auto fd3 = finite_difference_gradient(sine, std::vector<double>{0.0}, 1e-4);
    CHECK(fd3[0] == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("initialization is seeded glorot with zero biases") {
    const MlpSpec spec{128, {64}, 1};
    const std::vector<double> a = init_params(spec, 4);
    CHECK(a == init_params(spec, 4));
    CHECK(a != init_params(spec, 5));

    const ParamLayout layout = spec.layout();
    const auto& w0 = layout.find("w0");
    const double bound = std::sqrt(6.0 / (128 + 64));
    double max_w = 0.0;
    for (std::size_t i = 0; i < w0.count(); ++i) {
        CHECK(std::abs(a[w0.offset + i]) <= bound);
        max_w = std::max(max_w, std::abs(a[w0.offset + i]));
    }
    CHECK(max_w > 0.8 * bound);  // the range is actually used
    const auto& b0 = layout.find("b0");
    for (std::size_t i = 0; i < b0.count(); ++i) CHECK(a[b0.offset + i] == 0.0);
}

TEST_CASE("dropout masks are a pure function of (seed, sample)") {
    const MlpSpec spec{2, {16}, 1};
    const std::vector<double> theta = init_params(spec, 21);
    const std::vector<double> x = {0.4, -0.9};
    const DropoutPlan plan{0.5, 77};

    const auto out1 = mlp_forward(spec, theta, x, nullptr, &plan, 3);
    const auto out2 = mlp_forward(spec, theta, x, nullptr, &plan, 3);
    CHECK(out1 == out2);  // same sample tag, same mask

    MlpTrace t3, t4;
    mlp_forward(spec, theta, x, &t3, &plan, 3);
    mlp_forward(spec, theta, x, &t4, &plan, 4);
    CHECK(t3.mask[0] != t4.mask[0]);  // tags index different masks

    // Inverted scaling: kept units carry 1/(1-rate).
    for (double m : t3.mask[0]) CHECK((m == 0.0 || m == doctest::Approx(2.0)));

    const DropoutPlan off{0.0, 77};
    CHECK(mlp_forward(spec, theta, x, nullptr, &off, 3) == mlp_forward(spec, theta, x));
}

TEST_CASE("head is positively homogeneous in last-layer weights") {
    const MlpSpec spec{2, {4}, 2};
    const ParamLayout layout = spec.layout();
    std::vector<double> theta = init_params(spec, 31);
    const auto& b1 = layout.find("b1");
    for (std::size_t i = 0; i < b1.count(); ++i) theta[b1.offset + i] = 0.0;

    const std::vector<double> x = {1.2, -0.4};
    const auto base = mlp_forward(spec, theta, x);
    const auto& w1 = layout.find("w1");
    for (std::size_t i = 0; i < w1.count(); ++i) theta[w1.offset + i] *= 3.0;
    const auto scaled = mlp_forward(spec, theta, x);
    for (std::size_t i = 0; i < base.size(); ++i) {
        CHECK(scaled[i] == doctest::Approx(3.0 * base[i]).epsilon(1e-12));
    }
}
