#include "survcal/trainer.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "survcal/mathutil.hpp"
#include "survcal/metrics.hpp"
#include "survcal/rng.hpp"
#include "survcal/xcal.hpp"

namespace survcal {

void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& state,
               double learning_rate, double weight_decay) {
    if (grad.size() != theta.size() || state.m.size() != theta.size()) {
        throw std::invalid_argument("adam_step: shape mismatch");
    }
    for (const double g : grad) {
        if (!std::isfinite(g)) {
            ++state.skipped;
            return;
        }
    }
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        theta[i] -= learning_rate * (m_hat / (std::sqrt(v_hat) + eps) + weight_decay * theta[i]);
    }
}

void TrainConfig::validate() const {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    if (gamma <= 0.0) throw std::invalid_argument("gamma must be positive");
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (batch_size < 2) throw std::invalid_argument("batch size must be at least 2");
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be nonnegative");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must be in [0,1)");
    if ((family == Family::categorical || family == Family::mtlr) && time_bins < 2) {
        throw std::invalid_argument("discrete families need at least two time bins");
    }
    if (loss == LossKind::scrps && family == Family::weibull) {
        throw std::invalid_argument(
            "the squared-CDF score has no closed tail integral for the weibull head");
    }
    bins.validate();
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json doc;
    doc["family"] = family_name(family);
    doc["hidden"] = hidden;
    doc["loss"] = loss_name(loss);
    doc["lambda"] = lambda;
    doc["gamma"] = gamma;
    doc["bin_edges"] = bins.edges;
    doc["soft_lower"] = bins.soft_lower_extension;
    doc["soft_upper"] = bins.soft_upper_extension;
    doc["interpolate"] = interpolate;
    doc["time_bins"] = time_bins;
    doc["learning_rate"] = learning_rate;
    doc["weight_decay"] = weight_decay;
    doc["dropout"] = dropout;
    doc["batch_size"] = batch_size;
    doc["epochs"] = epochs;
    doc["seed"] = seed;
    doc["select_with_penalty"] = select_with_penalty;
    return doc;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc) {
    TrainConfig cfg;
    cfg.family = family_from_name(doc.at("family").get<std::string>());
    cfg.hidden = doc.at("hidden").get<std::vector<std::size_t>>();
    cfg.loss = loss_from_name(doc.at("loss").get<std::string>());
    cfg.lambda = doc.at("lambda").get<double>();
    cfg.gamma = doc.at("gamma").get<double>();
    cfg.bins.edges = doc.at("bin_edges").get<std::vector<double>>();
    cfg.bins.soft_lower_extension = doc.at("soft_lower").get<double>();
    cfg.bins.soft_upper_extension = doc.at("soft_upper").get<double>();
    cfg.interpolate = doc.at("interpolate").get<bool>();
    cfg.time_bins = doc.at("time_bins").get<std::size_t>();
    cfg.learning_rate = doc.at("learning_rate").get<double>();
    cfg.weight_decay = doc.at("weight_decay").get<double>();
    cfg.dropout = doc.at("dropout").get<double>();
    cfg.batch_size = doc.at("batch_size").get<std::size_t>();
    cfg.epochs = doc.at("epochs").get<std::size_t>();
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.select_with_penalty = doc.at("select_with_penalty").get<bool>();
    return cfg;
}

nlohmann::json TrainHistory::to_json() const {
    nlohmann::json doc;
    doc["initial_val_loss"] = initial_val_loss;
    doc["train_loss"] = train_loss;
    doc["val_loss"] = val_loss;
    doc["val_dcal"] = val_dcal;
    doc["selected_epoch"] = selected_epoch;
    doc["diverged"] = diverged;
    doc["skipped_steps"] = skipped_steps;
    return doc;
}

namespace {

double validation_loss(const SurvivalModel& model, const Dataset& val, const TrainConfig& cfg,
                       const SoftConfig& soft, std::span<const std::size_t> idx) {
    const double lambda = cfg.select_with_penalty ? cfg.lambda : 0.0;
    return combined_objective(model, val, idx, cfg.loss, lambda, soft, false).value;
}

double validation_dcal(const SurvivalModel& model, const Dataset& val, const BinScheme& bins) {
    std::vector<double> cdf(val.size());
    std::vector<bool> events(val.size());
    for (std::size_t j = 0; j < val.size(); ++j) {
        const Observation& obs = val.observations[j];
        cdf[j] = model.eval_at(model.head(obs.covariates), obs.time, false).cdf;
        events[j] = obs.event;
    }
    return val.has_censoring() ? censored_exact_dcal(cdf, events, bins)
                               : exact_dcal(cdf, bins);
}

}  // namespace

std::pair<SurvivalModel, TrainHistory> train(const TrainConfig& cfg, const Split& split) {
    cfg.validate();
    split.train.validate();
    split.validation.validate();

    const bool discrete = cfg.family == Family::categorical || cfg.family == Family::mtlr;
    TimeGrid grid;
    if (discrete) grid = quantile_bin_edges(split.train, cfg.time_bins);
    SurvivalModel model = SurvivalModel::make(cfg.family, split.train.dim, cfg.hidden, cfg.seed,
                                              grid, cfg.interpolate);

    const SoftConfig soft{cfg.gamma, cfg.bins};
    const std::size_t n_train = split.train.size();
    std::vector<std::size_t> val_idx(split.validation.size());
    std::iota(val_idx.begin(), val_idx.end(), 0);

    TrainHistory history;
    history.initial_val_loss = validation_loss(model, split.validation, cfg, soft, val_idx);

    AdamState state(model.n_params());
    std::vector<double> best_theta = model.theta;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t nonfinite_streak = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = make_batches(n_train, cfg.batch_size, cfg.seed, epoch);
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            DropoutPlan plan{cfg.dropout,
                             mix_seed(cfg.seed, 0xd70full ^ mix64(epoch * 0x10000ull + b))};
            const DropoutPlan* dropout = cfg.dropout > 0.0 ? &plan : nullptr;
            const LossValue loss = combined_objective(model, split.train, batches[b], cfg.loss,
                                                      cfg.lambda, soft, true, dropout);
            adam_step(model.theta, loss.grad, state, cfg.learning_rate, cfg.weight_decay);
            epoch_loss += loss.value * static_cast<double>(batches[b].size());
        }
        history.train_loss.push_back(epoch_loss / static_cast<double>(n_train));

        const double val = validation_loss(model, split.validation, cfg, soft, val_idx);
        history.val_loss.push_back(val);
        history.val_dcal.push_back(validation_dcal(model, split.validation, cfg.bins));

        if (std::isfinite(val)) {
            nonfinite_streak = 0;
            if (val < best_val) {
                best_val = val;
                best_theta = model.theta;
                history.selected_epoch = epoch;
            }
        } else if (++nonfinite_streak >= 2) {
            history.diverged = true;
            break;
        }
    }
    history.skipped_steps = state.skipped;
    model.theta = std::move(best_theta);
    return {std::move(model), std::move(history)};
}

std::string sweep_run_hash(const TrainConfig& resolved) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(resolved.to_json().dump())));
    return buf;
}

std::string SweepRow::csv_line() const {
    auto field = [](double v) { return std::isfinite(v) ? format_double(v) : std::string(); };
    std::string clean_error = error;
    for (char& c : clean_error) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return family + "," + loss + "," + format_double(lambda) + "," + field(nll) + "," +
           field(dcal) + "," + field(concordance) + "," + std::to_string(seed) + "," + run_hash +
           "," + clean_error;
}

namespace {

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows,
                     const std::vector<bool>& done) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write sweep table: " + path);
    out << kSweepHeader << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (done[i]) out << rows[i].csv_line() << '\n';
    }
}

// Existing rows keyed by run_hash (the second-to-last CSV field).
void load_existing_rows(const std::string& path, std::vector<SweepRow>& rows,
                        std::vector<bool>& done) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (std::size_t p = 0; p <= line.size(); ++p) {
            if (p == line.size() || line[p] == ',') {
                fields.push_back(line.substr(start, p - start));
                start = p + 1;
            }
        }
        if (fields.size() != 9) continue;
        const std::string& hash = fields[7];
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (done[i] || rows[i].run_hash != hash) continue;
            rows[i].nll = fields[3].empty() ? std::numeric_limits<double>::quiet_NaN()
                                            : std::stod(fields[3]);
            rows[i].dcal = fields[4].empty() ? std::numeric_limits<double>::quiet_NaN()
                                             : std::stod(fields[4]);
            rows[i].concordance = fields[5].empty() ? std::numeric_limits<double>::quiet_NaN()
                                                    : std::stod(fields[5]);
            rows[i].error = fields[8];
            done[i] = true;
            break;
        }
    }
}

}  // namespace

std::vector<SweepRow> run_sweep(const TrainConfig& base, std::span<const double> lambdas,
                                std::span<const std::uint64_t> seeds, const Split& split,
                                const std::string& csv_path, std::size_t jobs) {
    if (lambdas.empty() || seeds.empty()) {
        throw std::invalid_argument("run_sweep: lambda and seed lists must be nonempty");
    }
    if (jobs == 0) jobs = 1;

    std::vector<SweepRow> rows;
    std::vector<TrainConfig> configs;
    for (const double lambda : lambdas) {
        for (const std::uint64_t seed : seeds) {
            TrainConfig cfg = base;
            cfg.lambda = lambda;
            cfg.seed = seed;
            SweepRow row;
            row.family = family_name(cfg.family);
            row.loss = loss_name(cfg.loss);
            row.lambda = lambda;
            row.seed = seed;
            row.run_hash = sweep_run_hash(cfg);
            rows.push_back(std::move(row));
            configs.push_back(std::move(cfg));
        }
    }
    std::vector<bool> done(rows.size(), false);
    load_existing_rows(csv_path, rows, done);
    write_sweep_csv(csv_path, rows, done);

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!done[i]) pending.push_back(i);
    }

    std::mutex io_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t p = next.fetch_add(1);
            if (p >= pending.size()) return;
            const std::size_t i = pending[p];
            SweepRow& row = rows[i];
            try {
                auto [model, history] = train(configs[i], split);
                if (history.diverged) {
                    row.error = "diverged";
                } else {
                    const MetricsReport report = evaluate(model, split.test, configs[i].bins);
                    row.nll = report.test_nll;
                    row.dcal = report.dcal;
                    row.concordance = report.concordance;
                }
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            const std::lock_guard<std::mutex> lock(io_mutex);
            done[i] = true;
            write_sweep_csv(csv_path, rows, done);
        }
    };

    if (jobs == 1 || pending.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        const std::size_t n_threads = std::min(jobs, pending.size());
        threads.reserve(n_threads);
        for (std::size_t k = 0; k < n_threads; ++k) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    return rows;
}

}  // namespace survcal
