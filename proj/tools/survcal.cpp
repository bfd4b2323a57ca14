// Experiment driver: simulate synthetic survival data, train calibrated
// models, evaluate metrics, and run lambda sweeps with resumable output.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 training divergence.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "survcal/data.hpp"
#include "survcal/losses.hpp"
#include "survcal/mathutil.hpp"
#include "survcal/metrics.hpp"
#include "survcal/models.hpp"
#include "survcal/simulate.hpp"
#include "survcal/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace survcal;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

// Applies a flat JSON object to an already-parsed subcommand. Keys are the
// long option names without dashes; arrays become repeated values. Options
// the user passed explicitly keep their command-line value.
void apply_json_config(CLI::App* cmd, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CLI::FileError("cannot open config file: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw CLI::FileError(path + ": " + e.what());
    }
    if (!doc.is_object()) throw CLI::FileError(path + ": config root must be a JSON object");
    const auto scalar = [](const json& v) -> std::string {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    };
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        CLI::Option* opt = cmd->get_option_no_throw("--" + it.key());
        if (opt == nullptr) throw CLI::ConfigError("unknown config key: " + it.key());
        if (opt->count() > 0) continue;
        if (it.value().is_array()) {
            for (const auto& v : it.value()) opt->add_result(scalar(v));
        } else {
            opt->add_result(scalar(it.value()));
        }
        opt->run_callback();
    }
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return hash_hex(fnv1a64(ss.str()));
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        const auto d = std::chrono::steady_clock::now() - start_;
        return std::chrono::duration<double, std::milli>(d).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const std::string& content_hash, const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& outputs, double duration_ms) {
    for (const auto& out : outputs) {
        if (!fs::exists(out)) throw DataError("manifest lists a missing output: " + out);
    }
    json doc;
    doc["command"] = command;
    doc["config"] = config;
    doc["content_hash"] = content_hash;
    doc["seeds"] = seeds;
    doc["outputs"] = outputs;
    doc["duration_ms"] = duration_ms;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << doc.dump(2) << '\n';
}

struct TrainFlags {
    std::string data_path;
    std::string out_dir;
    std::string config_path;
    std::string family = "lognormal";
    std::string loss = "nll";
    double lambda = 0.0;
    double gamma = 1e4;
    std::size_t cal_bins = 20;
    std::size_t time_bins = 50;
    bool interpolate = false;
    std::vector<std::size_t> hidden;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double dropout = 0.0;
    std::size_t batch_size = 1000;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    std::vector<double> split = {0.7, 0.15, 0.15};
    std::uint64_t split_seed = 0;
    bool select_base_only = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
    cmd->add_option("--data", f.data_path, "dataset CSV (u,delta,x1..xd)");
    cmd->add_option("--family", f.family, "lognormal|weibull|categorical|mtlr")
        ->check(CLI::IsMember({"lognormal", "weibull", "categorical", "mtlr"}));
    cmd->add_option("--loss", f.loss, "nll|scrps")->check(CLI::IsMember({"nll", "scrps"}));
    cmd->add_option("--gamma", f.gamma, "soft-indicator sharpness")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--bins", f.cal_bins, "calibration bins over [0,1]")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
    cmd->add_option("--time-bins", f.time_bins, "discrete-family time bins");
    cmd->add_flag("--interpolate", f.interpolate, "within-bin CDF interpolation");
    cmd->add_option("--hidden", f.hidden, "hidden layer sizes, comma separated")
        ->delimiter(',');
    cmd->add_option("--lr", f.learning_rate, "learning rate")->check(CLI::PositiveNumber);
    cmd->add_option("--wd", f.weight_decay, "decoupled weight decay")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--dropout", f.dropout, "hidden dropout rate")
        ->check(CLI::Range(0.0, 0.999));
    cmd->add_option("--batch", f.batch_size, "minibatch size")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
    cmd->add_option("--epochs", f.epochs, "training epochs")
        ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
    cmd->add_option("--split", f.split, "train,val,test fractions")
        ->delimiter(',')
        ->expected(3);
    cmd->add_option("--split-seed", f.split_seed, "shuffle seed for the split");
    cmd->add_flag("--select-base-only", f.select_base_only,
                  "select on validation base loss without the penalty term");
    cmd->add_option("--config", f.config_path, "JSON config file; explicit flags win");
}

// --data and --out may come from the config file, so presence is checked
// here instead of with required().
void require_paths(const std::string& data_path, const std::string& out) {
    if (data_path.empty()) throw CLI::RequiredError("--data");
    if (out.empty()) throw CLI::RequiredError("--out");
}

TrainConfig resolve_config(const TrainFlags& f, double lambda, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.family = family_from_name(f.family);
    cfg.hidden = f.hidden;
    cfg.loss = loss_from_name(f.loss);
    cfg.lambda = lambda;
    cfg.gamma = f.gamma;
    cfg.bins = BinScheme::equal(f.cal_bins);
    cfg.interpolate = f.interpolate;
    cfg.time_bins = f.time_bins;
    cfg.learning_rate = f.learning_rate;
    cfg.weight_decay = f.weight_decay;
    cfg.dropout = f.dropout;
    cfg.batch_size = f.batch_size;
    cfg.epochs = f.epochs;
    cfg.seed = seed;
    cfg.select_with_penalty = !f.select_base_only;
    return cfg;
}

void check_loss_family(const TrainFlags& f) {
    if (f.loss == "scrps" && f.family == "weibull") {
        throw CLI::ValidationError("--loss scrps is not wired for the weibull family");
    }
}

Split make_split(const TrainFlags& f, Dataset data) {
    data.name = fs::path(f.data_path).stem().string();
    return split_dataset(data, {f.split[0], f.split[1], f.split[2]}, f.split_seed);
}

int cmd_simulate(const std::string& generator, std::size_t n, std::size_t d, bool censoring,
                 std::uint64_t seed, const std::string& out_dir) {
    const Stopwatch clock;
    fs::create_directories(out_dir);

    Dataset data;
    OracleHandle oracle;
    json config;
    if (generator == "gamma") {
        GammaSimConfig cfg;
        cfg.n = n;
        cfg.d = d;
        cfg.censoring = censoring;
        cfg.seed = seed;
        std::tie(data, oracle) = simulate_gamma(cfg);
        config = {{"generator", "gamma"}, {"n", n},    {"d", d},
                  {"censoring", censoring}, {"seed", seed}};
    } else {
        std::tie(data, oracle) = simulate_risk_groups(n, seed, censoring);
        config = {{"generator", "risk-groups"}, {"n", n}, {"censoring", censoring},
                  {"seed", seed}};
    }

    std::string name = generator == "gamma" ? "gamma" : "risk_groups";
    name += "_n" + std::to_string(n) + "_seed" + std::to_string(seed);
    if (censoring) name += "_cens";
    data.name = name;

    const fs::path dir(out_dir);
    const std::string data_path = (dir / (name + ".csv")).string();
    const std::string oracle_path = (dir / (name + "_oracle.csv")).string();
    const std::string manifest_path = (dir / (name + "_manifest.json")).string();
    save_dataset(data, data_path);
    save_oracle_sidecar(oracle, data, oracle_path);
    write_manifest(manifest_path, "simulate", config, hash_hex(fnv1a64(config.dump())), {seed},
                   {data_path, oracle_path}, clock.ms());
    std::cout << "dataset=" << data_path << '\n'
              << "oracle=" << oracle_path << '\n'
              << "manifest=" << manifest_path << '\n';
    return 0;
}

int cmd_train(const TrainFlags& f) {
    const Stopwatch clock;
    check_loss_family(f);
    const Dataset data = load_dataset(f.data_path);
    const Split split = make_split(f, data);
    const TrainConfig cfg = resolve_config(f, f.lambda, f.seed);

    fs::create_directories(f.out_dir);
    const fs::path dir(f.out_dir);
    auto [model, history] = train(cfg, split);

    const std::string ckpt_path = (dir / "checkpoint.json").string();
    const std::string history_path = (dir / "history.json").string();
    const std::string split_path = (dir / "split_indices.json").string();
    const std::string manifest_path = (dir / "manifest.json").string();
    model.save(ckpt_path);
    {
        std::ofstream out(history_path);
        out << history.to_json().dump(2) << '\n';
    }
    save_split_indices(split, split_path);

    json config = cfg.to_json();
    config["data"] = f.data_path;
    config["split"] = f.split;
    config["split_seed"] = f.split_seed;
    write_manifest(manifest_path, "train", config,
                   hash_hex(fnv1a64(config.dump() + file_hash(f.data_path))), {f.seed},
                   {ckpt_path, history_path, split_path}, clock.ms());

    if (history.diverged) {
        std::cerr << "training diverged; history written to " << history_path << '\n';
        return kExitDiverged;
    }
    std::cout << "selected_epoch=" << history.selected_epoch << '\n'
              << "val_loss=" << format_double(history.val_loss[history.selected_epoch]) << '\n'
              << "val_dcal=" << format_double(history.val_dcal[history.selected_epoch]) << '\n'
              << "checkpoint=" << ckpt_path << '\n';
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& oracle_path, std::size_t cal_bins, const std::string& label,
                 const std::string& out_dir) {
    const Stopwatch clock;
    const SurvivalModel model = SurvivalModel::load(ckpt_path);
    Dataset data = load_dataset(data_path);
    data.name = label.empty() ? fs::path(data_path).stem().string() : label;
    if (data.dim != model.net.input_dim) {
        throw DataError("checkpoint expects " + std::to_string(model.net.input_dim) +
                        " covariates, dataset has " + std::to_string(data.dim));
    }

    const BinScheme bins = BinScheme::equal(cal_bins);
    const MetricsReport report = evaluate(model, data, bins);
    json doc = report.to_json();

    if (!oracle_path.empty()) {
        const std::vector<OracleRow> rows = load_oracle_sidecar(oracle_path);
        if (rows.size() != data.size()) {
            throw DataError("oracle sidecar row count does not match the dataset");
        }
        std::vector<double> cdf_true(rows.size());
        std::vector<double> cdf_obs(rows.size());
        std::vector<bool> events(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            cdf_true[i] = rows[i].cdf_true;
            cdf_obs[i] = rows[i].cdf_obs;
            events[i] = data.observations[i].event;
        }
        doc["oracle_dcal"] = exact_dcal(cdf_true, bins);
        if (data.has_censoring()) {
            doc["oracle_dcal_censored"] = censored_exact_dcal(cdf_obs, events, bins);
        }
    }

    if (out_dir.empty()) {
        std::cout << doc.dump(2) << '\n';
        return 0;
    }
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const std::string metrics_path = (dir / "metrics.json").string();
    {
        std::ofstream out(metrics_path);
        out << doc.dump(2) << '\n';
    }
    json config = {{"checkpoint", ckpt_path}, {"data", data_path},
                   {"oracle", oracle_path},   {"bins", cal_bins},
                   {"label", data.name}};
    write_manifest((dir / "manifest.json").string(), "evaluate", config,
                   hash_hex(fnv1a64(config.dump() + file_hash(data_path))), {},
                   {metrics_path}, clock.ms());
    std::cout << "metrics=" << metrics_path << '\n';
    return 0;
}

int cmd_sweep(const TrainFlags& f, const std::vector<double>& lambdas,
              const std::vector<std::uint64_t>& seeds, const std::string& csv_path,
              std::size_t jobs) {
    const Stopwatch clock;
    check_loss_family(f);
    const Dataset data = load_dataset(f.data_path);
    const Split split = make_split(f, data);
    const TrainConfig base = resolve_config(f, 0.0, 0);

    if (csv_path.find('/') != std::string::npos) {
        fs::create_directories(fs::path(csv_path).parent_path());
    }
    const std::vector<SweepRow> rows = run_sweep(base, lambdas, seeds, split, csv_path, jobs);

    std::size_t failures = 0;
    for (const auto& row : rows) {
        if (!row.error.empty()) ++failures;
    }
    json config = base.to_json();
    config["data"] = f.data_path;
    config["lambdas"] = lambdas;
    config["sweep_seeds"] = seeds;
    const std::string manifest_path = csv_path + ".manifest.json";
    write_manifest(manifest_path, "sweep", config,
                   hash_hex(fnv1a64(config.dump() + file_hash(f.data_path))), seeds, {csv_path},
                   clock.ms());
    // Per-run failures land in the error column; the sweep itself still succeeded.
    std::cout << "rows=" << rows.size() << '\n' << "errors=" << failures << '\n'
              << "table=" << csv_path << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parametric survival models with a differentiable calibration penalty"};
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset with oracle sidecar");
    sim->require_subcommand(1);
    std::size_t sim_n = 0;
    std::size_t sim_d = 32;
    bool sim_cens = false;
    std::uint64_t sim_seed = 0;
    std::string sim_out;
    for (const char* gen : {"gamma", "risk-groups"}) {
        auto* sub = sim->add_subcommand(gen);
        sub->add_option("--n", sim_n, "number of points")
            ->required()
            ->check(CLI::Range(std::size_t{1}, std::size_t{100000000}));
        if (std::string(gen) == "gamma") {
            sub->add_option("--d", sim_d, "covariate dimension")
                ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
        }
        sub->add_flag("--censoring", sim_cens, "right-censor the failure times");
        sub->add_option("--seed", sim_seed, "generator seed");
        sub->add_option("--out", sim_out, "output directory")
            ->envname("SURVCAL_OUT")
            ->required();
    }

    // train
    auto* tr = app.add_subcommand("train", "fit one model and write a checkpoint");
    TrainFlags tf;
    add_train_flags(tr, tf);
    tr->add_option("--lambda", tf.lambda, "calibration penalty weight")
        ->check(CLI::NonNegativeNumber);
    tr->add_option("--seed", tf.seed, "training seed");
    tr->add_option("--out", tf.out_dir, "output directory")->envname("SURVCAL_OUT");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "metrics for a checkpoint on a dataset");
    std::string ev_ckpt;
    std::string ev_data;
    std::string ev_oracle;
    std::string ev_label;
    std::string ev_out;
    std::size_t ev_bins = 20;
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint JSON")->required();
    ev->add_option("--data", ev_data, "dataset CSV")->required();
    ev->add_option("--oracle", ev_oracle, "oracle sidecar CSV for truth comparison");
    ev->add_option("--bins", ev_bins, "calibration bins")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1000}));
    ev->add_option("--label", ev_label, "report label (defaults to the data file stem)");
    ev->add_option("--out", ev_out, "output directory (prints to stdout when omitted)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "train/evaluate a lambda-by-seed grid, resumably");
    TrainFlags sf;
    add_train_flags(sw, sf);
    std::vector<double> sw_lambdas;
    std::vector<std::uint64_t> sw_seeds;
    std::string sw_csv;
    std::size_t sw_jobs = 1;
    sw->add_option("--lambdas", sw_lambdas, "penalty weights, comma separated")
        ->delimiter(',')
        ->required();
    sw->add_option("--seeds", sw_seeds, "training seeds, comma separated")
        ->delimiter(',')
        ->required();
    sw->add_option("--out", sw_csv, "results CSV path")->envname("SURVCAL_OUT");
    sw->add_option("--jobs", sw_jobs, "concurrent runs")
        ->check(CLI::Range(std::size_t{1}, std::size_t{64}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        std::cerr << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (sim->parsed()) {
            const std::string gen = sim->get_subcommands().front()->get_name();
            return cmd_simulate(gen, sim_n, sim_d, sim_cens, sim_seed, sim_out);
        }
        if (tr->parsed()) {
            if (!tf.config_path.empty()) apply_json_config(tr, tf.config_path);
            require_paths(tf.data_path, tf.out_dir);
            return cmd_train(tf);
        }
        if (ev->parsed()) {
            return cmd_evaluate(ev_ckpt, ev_data, ev_oracle, ev_bins, ev_label, ev_out);
        }
        if (sw->parsed()) {
            if (!sf.config_path.empty()) apply_json_config(sw, sf.config_path);
            require_paths(sf.data_path, sw_csv);
            return cmd_sweep(sf, sw_lambdas, sw_seeds, sw_csv, sw_jobs);
        }
    } catch (const CLI::Error& e) {
        std::cerr << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
