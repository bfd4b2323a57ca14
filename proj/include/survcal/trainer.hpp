#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "survcal/data.hpp"
#include "survcal/losses.hpp"
#include "survcal/models.hpp"

namespace survcal {

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
    std::uint64_t skipped = 0;  // non-finite gradients rejected

    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// Bias-corrected Adam (beta1 0.9, beta2 0.999, eps 1e-8) with decoupled
/// weight decay lr*wd*theta. A non-finite gradient skips the step entirely.
void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& state,
               double learning_rate, double weight_decay);

struct TrainConfig {
    Family family = Family::lognormal;
    std::vector<std::size_t> hidden;  // empty = linear parameterization
    LossKind loss = LossKind::nll;
    double lambda = 0.0;
    double gamma = 1e4;
    BinScheme bins = BinScheme::equal(20);
    bool interpolate = false;
    std::size_t time_bins = 50;  // discrete families
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double dropout = 0.0;
    std::size_t batch_size = 1000;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    // Validation selection includes the lambda-weighted penalty by default;
    // turning this off selects on the base loss alone.
    bool select_with_penalty = true;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& doc);
};

struct TrainHistory {
    double initial_val_loss = 0.0;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> val_dcal;
    std::size_t selected_epoch = 0;
    bool diverged = false;
    std::uint64_t skipped_steps = 0;

    nlohmann::json to_json() const;
};

/// Minibatch training with per-epoch validation; returns the parameters from
/// the epoch with the smallest recorded validation loss. Deterministic per
/// (config, split).
std::pair<SurvivalModel, TrainHistory> train(const TrainConfig& cfg, const Split& split);

struct SweepRow {
    std::string family;
    std::string loss;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double nll = std::numeric_limits<double>::quiet_NaN();
    double dcal = std::numeric_limits<double>::quiet_NaN();
    double concordance = std::numeric_limits<double>::quiet_NaN();
    std::string run_hash;  // content hash of the resolved config
    std::string error;     // empty on success

    std::string csv_line() const;
};

inline constexpr const char* kSweepHeader =
    "family,loss,lambda,nll,dcal,concordance,seed,run_hash,error";

std::string sweep_run_hash(const TrainConfig& resolved);

/// One train+evaluate per (lambda, seed). Rows already present in csv_path
/// (matched by run_hash) are kept, not rerun; the file is rewritten in plan
/// order after every completed run. Failures land in the error column and
/// the sweep continues. jobs > 1 runs the remaining rows concurrently.
std::vector<SweepRow> run_sweep(const TrainConfig& base, std::span<const double> lambdas,
                                std::span<const std::uint64_t> seeds, const Split& split,
                                const std::string& csv_path, std::size_t jobs = 1);

}  // namespace survcal
