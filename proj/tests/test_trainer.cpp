#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "survcal/metrics.hpp"
#include "survcal/simulate.hpp"
#include "survcal/trainer.hpp"
#include "survcal/xcal.hpp"

using namespace survcal;

namespace {

Split gamma_split(std::size_t n, std::uint64_t seed, bool censoring) {
    GammaSimConfig cfg;
    cfg.n = n;
    cfg.seed = seed;
    cfg.censoring = censoring;
    auto [data, oracle] = simulate_gamma(cfg);
    return split_dataset(data, {0.7, 0.15, 0.15}, seed);
}

std::size_t argmin(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("adam first step moves by roughly the learning rate") {
    std::vector<double> theta = {0.0};
    AdamState st(1);
    adam_step(theta, std::vector<double>{3.0}, st, 1e-2, 0.0);
    // Bias correction makes m_hat/sqrt(v_hat) = 1 up to eps on step one.
    CHECK(theta[0] == doctest::Approx(-1e-2).epsilon(1e-6));
    CHECK(st.step == 1);
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
    std::vector<double> theta = {1.5, -2.0};
    AdamState st(2);
    for (int i = 0; i < 5; ++i) adam_step(theta, std::vector<double>{0.0, 0.0}, st, 1e-2, 0.0);
    CHECK(theta[0] == 1.5);
    CHECK(theta[1] == -2.0);
}

TEST_CASE("adam drains a quadratic bowl") {
    std::vector<double> theta = {1.0, -1.0, 0.5};
    AdamState st(3);
    for (int i = 0; i < 2000; ++i) adam_step(theta, theta, st, 1e-2, 0.0);
    for (double v : theta) CHECK(std::abs(v) < 1e-3);
}

TEST_CASE("adam skips non-finite gradients without touching state") {
    std::vector<double> theta = {0.7};
    AdamState st(1);
    adam_step(theta, std::vector<double>{1.0}, st, 1e-3, 0.0);
    const double after_one = theta[0];
    const double m = st.m[0], v = st.v[0];
    adam_step(theta, std::vector<double>{std::numeric_limits<double>::quiet_NaN()}, st, 1e-3, 0.0);
    CHECK(theta[0] == after_one);
    CHECK(st.m[0] == m);
    CHECK(st.v[0] == v);
    CHECK(st.skipped == 1);
    CHECK(st.step == 1);
}

TEST_CASE("weight decay is decoupled from the gradient") {
    std::vector<double> theta = {2.0};
    AdamState st(1);
    adam_step(theta, std::vector<double>{0.0}, st, 1e-2, 0.1);
    CHECK(theta[0] == doctest::Approx(2.0 * (1.0 - 1e-2 * 0.1)).epsilon(1e-14));
}

TEST_CASE("training improves validation loss and records the argmin epoch") {
    const Split split = gamma_split(6000, 17, false);
    TrainConfig cfg;
    cfg.family = Family::lognormal;
    cfg.epochs = 20;
    cfg.batch_size = 512;
    cfg.learning_rate = 1e-2;
    cfg.seed = 1;
    auto [model, hist] = train(cfg, split);
    REQUIRE(hist.val_loss.size() == cfg.epochs);
    REQUIRE(hist.train_loss.size() == cfg.epochs);
    REQUIRE(hist.val_dcal.size() == cfg.epochs);
    CHECK(*std::min_element(hist.val_loss.begin(), hist.val_loss.end()) < hist.initial_val_loss);
    CHECK(hist.selected_epoch == argmin(hist.val_loss));
    CHECK_FALSE(hist.diverged);
    CHECK(hist.skipped_steps == 0);
}

TEST_CASE("training is bitwise deterministic per config and split") {
    const Split split = gamma_split(2000, 5, true);
    TrainConfig cfg;
    cfg.family = Family::mtlr;
    cfg.hidden = {8};
    cfg.lambda = 10.0;
    cfg.time_bins = 12;
    cfg.epochs = 4;
    cfg.batch_size = 256;
    cfg.seed = 7;
    auto [m1, h1] = train(cfg, split);
    auto [m2, h2] = train(cfg, split);
    CHECK(m1.theta == m2.theta);
    CHECK(h1.train_loss == h2.train_loss);
    CHECK(h1.val_loss == h2.val_loss);
    CHECK(h1.val_dcal == h2.val_dcal);
    CHECK(h1.selected_epoch == h2.selected_epoch);
}

TEST_CASE("lambda zero never evaluates the penalty") {
    const Split split = gamma_split(1200, 9, false);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 400;

    reset_xcal_penalty_eval_count();
    cfg.lambda = 0.0;
    train(cfg, split);
    CHECK(xcal_penalty_eval_count() == 0);

    reset_xcal_penalty_eval_count();
    cfg.lambda = 1.0;
    train(cfg, split);
    CHECK(xcal_penalty_eval_count() > 0);
}

TEST_CASE("absurd learning rates are reported as divergence") {
    const Split split = gamma_split(1200, 3, false);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.learning_rate = 1e12;
    auto [model, hist] = train(cfg, split);
    CHECK(hist.diverged);
}

TEST_CASE("the penalty trades likelihood for calibration at desk scale") {
    const Split split = gamma_split(4000, 21, true);
    TrainConfig cfg;
    cfg.family = Family::categorical;
    cfg.interpolate = true;  // the staircase CDF floor would mask the gain
    cfg.time_bins = 20;
    cfg.epochs = 30;
    cfg.batch_size = 256;
    cfg.learning_rate = 1e-2;
    cfg.seed = 2;

    cfg.lambda = 0.0;
    auto [m0, h0] = train(cfg, split);
    cfg.lambda = 100.0;
    auto [m1, h1] = train(cfg, split);
    REQUIRE_FALSE(h0.diverged);
    REQUIRE_FALSE(h1.diverged);

    const MetricsReport r0 = evaluate(m0, split.test, cfg.bins);
    const MetricsReport r1 = evaluate(m1, split.test, cfg.bins);
    CHECK(r1.dcal < r0.dcal);
    // The likelihood side of the tradeoff: the penalized run cannot beat the
    // unpenalized one on base loss.
    CHECK(r0.test_nll <= r1.test_nll + 1e-9);
}

TEST_CASE("train config validation and JSON round trip") {
    TrainConfig cfg;
    cfg.lambda = -1.0;
    CHECK_THROWS(cfg.validate());
    cfg.lambda = 2.5;
    cfg.epochs = 0;
    CHECK_THROWS(cfg.validate());
    cfg.epochs = 3;
    cfg.family = Family::weibull;
    cfg.loss = LossKind::scrps;
    CHECK_THROWS(cfg.validate());
    cfg.loss = LossKind::nll;
    cfg.hidden = {16, 8};
    cfg.validate();

    const TrainConfig back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.family == cfg.family);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.gamma == cfg.gamma);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.seed == cfg.seed);
    CHECK(back.select_with_penalty == cfg.select_with_penalty);
}

TEST_CASE("sweep produces one row per (lambda, seed) and resumes from disk") {
    const Split split = gamma_split(800, 13, false);
    TrainConfig base;
    base.epochs = 3;
    base.batch_size = 200;

    const std::string csv = "tmp_sweep.csv";
    std::remove(csv.c_str());
    const std::vector<double> lambdas = {0.0, 10.0};
    const std::vector<std::uint64_t> seeds = {0, 1};
    const auto rows = run_sweep(base, lambdas, seeds, split, csv);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) CHECK(r.error.empty());

    const std::string first = slurp(csv);
    CHECK(first.rfind(kSweepHeader, 0) == 0);

    // Rerunning reuses every cached row: file content is unchanged.
    run_sweep(base, lambdas, seeds, split, csv);
    CHECK(slurp(csv) == first);

    // Extending the grid keeps the original lines verbatim.
    const std::vector<double> wider = {0.0, 10.0, 50.0};
    const auto more = run_sweep(base, wider, seeds, split, csv);
    REQUIRE(more.size() == 6);
    const std::string extended = slurp(csv);
    std::istringstream a(first), b(extended);
    std::string la, lb;
    std::getline(b, lb);  // header
    std::getline(a, la);
    CHECK(la == lb);
    std::size_t matched = 0;
    std::vector<std::string> old_lines;
    while (std::getline(a, la)) old_lines.push_back(la);
    while (std::getline(b, lb)) {
        matched += std::count(old_lines.begin(), old_lines.end(), lb) > 0;
    }
    CHECK(matched == old_lines.size());
    std::remove(csv.c_str());
}

TEST_CASE("sweep rows match a standalone train and evaluate") {
    const Split split = gamma_split(800, 19, false);
    TrainConfig base;
    base.epochs = 3;
    base.batch_size = 200;

    const std::string csv = "tmp_sweep_repro.csv";
    std::remove(csv.c_str());
    const std::vector<double> lambdas = {5.0};
    const std::vector<std::uint64_t> seeds = {4};
    const auto rows = run_sweep(base, lambdas, seeds, split, csv);
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].error.empty());

    TrainConfig solo = base;
    solo.lambda = 5.0;
    solo.seed = 4;
    auto [model, hist] = train(solo, split);
    const MetricsReport rep = evaluate(model, split.test, solo.bins);
    CHECK(rows[0].nll == rep.test_nll);
    CHECK(rows[0].dcal == rep.dcal);
    CHECK(rows[0].concordance == rep.concordance);
    CHECK(rows[0].run_hash == sweep_run_hash(solo));
    std::remove(csv.c_str());
}

TEST_CASE("sweep keeps going after a failing configuration") {
    const Split split = gamma_split(500, 23, false);
    TrainConfig base;
    base.family = Family::categorical;
    base.time_bins = 10000;  // impossible quantile grid for 350 training rows
    base.epochs = 2;

    const std::string csv = "tmp_sweep_err.csv";
    std::remove(csv.c_str());
    const std::vector<double> lambdas = {0.0};
    const std::vector<std::uint64_t> seeds = {0, 1};
    const auto rows = run_sweep(base, lambdas, seeds, split, csv);
    REQUIRE(rows.size() == 2);
    for (const auto& r : rows) {
        CHECK_FALSE(r.error.empty());
        CHECK(std::isnan(r.nll));
    }
    std::remove(csv.c_str());
}
