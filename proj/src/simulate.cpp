#include "survcal/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/gamma.hpp>

#include "survcal/mathutil.hpp"

namespace survcal {

double gamma_cdf(double t, double alpha, double beta) {
    if (t <= 0.0) return 0.0;
    return boost::math::gamma_p(alpha, beta * t);
}

double OracleHandle::mean_of(std::span<const double> x) const {
    if (kind == Kind::gamma_loglinear) {
        if (x.size() != weights.size()) throw std::invalid_argument("oracle: dimension mismatch");
        double dot = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) dot += weights[i] * x[i];
        return std::exp(dot);
    }
    // One-hot class covariates index into the per-class mean table.
    if (x.size() != weights.size()) throw std::invalid_argument("oracle: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] == 1.0) return weights[i];
    }
    throw std::invalid_argument("oracle: covariates are not one-hot");
}

double OracleHandle::cdf(double t, std::span<const double> x) const {
    const double mu = mean_of(x);
    return gamma_cdf(t, mu * mu / mean_var, mu / mean_var);
}

std::pair<Dataset, OracleHandle> simulate_gamma(const GammaSimConfig& cfg) {
    if (cfg.n == 0 || cfg.d == 0) throw std::invalid_argument("simulate_gamma: n and d must be positive");
    if (cfg.cov_scale <= 0.0 || cfg.mean_var <= 0.0 || cfg.weight_range < 0.0) {
        throw std::invalid_argument("simulate_gamma: scales must be positive");
    }

    Rng rng_w(cfg.seed, 0x11u);
    Rng rng_data(cfg.seed, 0x22u);
    Rng rng_cens(cfg.seed, 0x33u);

    std::vector<double> w(cfg.d), w_cens(cfg.d);
    for (double& v : w) v = rng_w.uniform(-cfg.weight_range, cfg.weight_range);
    for (double& v : w_cens) v = rng_w.uniform(-cfg.weight_range, cfg.weight_range);

    const double sd = std::sqrt(cfg.cov_scale);
    Dataset data;
    data.dim = cfg.d;
    data.name = "gamma";
    data.observations.resize(cfg.n);
    OracleHandle oracle;
    oracle.kind = OracleHandle::Kind::gamma_loglinear;
    oracle.weights = w;
    oracle.mean_var = cfg.mean_var;
    oracle.true_times.resize(cfg.n);

    for (std::size_t i = 0; i < cfg.n; ++i) {
        Observation& obs = data.observations[i];
        obs.covariates.resize(cfg.d);
        double dot = 0.0;
        double dot_cens = 0.0;
        for (std::size_t k = 0; k < cfg.d; ++k) {
            const double x = rng_data.normal() * sd;
            obs.covariates[k] = x;
            dot += w[k] * x;
            dot_cens += w_cens[k] * x;
        }
        const double mu = std::exp(dot);
        const double t = gamma_sample(mu * mu / cfg.mean_var, mu / cfg.mean_var, rng_data);
        oracle.true_times[i] = t;
        if (cfg.censoring) {
            const double mu_c = std::exp(dot_cens);
            const double c =
                gamma_sample(mu_c * mu_c / cfg.mean_var, mu_c / cfg.mean_var, rng_cens);
            oracle.censor_times.push_back(c);
            obs.time = std::min(t, c);
            obs.event = t < c;
        } else {
            obs.time = t;
            obs.event = true;
        }
    }
    return {std::move(data), std::move(oracle)};
}

std::vector<double> uniform_censoring(const std::vector<double>& times, Rng& rng) {
    if (times.size() < 10) throw std::invalid_argument("uniform_censoring: need at least 10 times");
    std::vector<double> sorted(times);
    std::sort(sorted.begin(), sorted.end());
    const double lo = sorted.front();
    const double hi = percentile_sorted(sorted, 90.0);
    if (!(hi > lo)) throw DataError("uniform_censoring: degenerate range");
    std::vector<double> out(times.size());
    for (double& c : out) c = rng.uniform(lo, hi);
    return out;
}

namespace {
constexpr double kRiskTable[10] = {11.25, 2.25, 5.25, 5.0, 4.75, 8.0, 2.0, 11.0, 1.75, 10.75};
constexpr double kRiskVar = 1e-3;
}  // namespace

std::pair<Dataset, OracleHandle> simulate_risk_groups(std::size_t n, std::uint64_t seed,
                                                      bool censoring) {
    if (n < 10) throw std::invalid_argument("simulate_risk_groups: need n >= 10");
    Rng rng(seed, 0x44u);

    Dataset data;
    data.dim = 10;
    data.name = "risk_groups";
    data.observations.resize(n);
    OracleHandle oracle;
    oracle.kind = OracleHandle::Kind::risk_table;
    oracle.weights.assign(std::begin(kRiskTable), std::end(kRiskTable));
    oracle.mean_var = kRiskVar;
    oracle.true_times.resize(n);

    std::vector<double> times(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t label = rng.uniform_below(10);
        Observation& obs = data.observations[i];
        obs.covariates.assign(10, 0.0);
        obs.covariates[label] = 1.0;
        const double mu = kRiskTable[label];
        times[i] = gamma_sample(mu * mu / kRiskVar, mu / kRiskVar, rng);
        oracle.true_times[i] = times[i];
        obs.time = times[i];
        obs.event = true;
    }
    if (censoring) {
        Rng rng_c(seed, 0x55u);
        const std::vector<double> c = uniform_censoring(times, rng_c);
        oracle.censor_times = c;
        for (std::size_t i = 0; i < n; ++i) {
            Observation& obs = data.observations[i];
            obs.event = times[i] < c[i];
            obs.time = std::min(times[i], c[i]);
        }
    }
    return {std::move(data), std::move(oracle)};
}

void save_oracle_sidecar(const OracleHandle& oracle, const Dataset& data,
                         const std::string& path) {
    if (oracle.true_times.size() != data.size()) {
        throw std::invalid_argument("oracle sidecar: row count mismatch");
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write oracle sidecar: " + path);
    out << "true_time,cdf_true_time,cdf_observed_time\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Observation& obs = data.observations[i];
        const double t = oracle.true_times[i];
        out << format_double(t) << ',' << format_double(oracle.cdf(t, obs.covariates)) << ','
            << format_double(oracle.cdf(obs.time, obs.covariates)) << '\n';
    }
}

std::vector<OracleRow> load_oracle_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read oracle sidecar: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "true_time,cdf_true_time,cdf_observed_time") {
        throw DataError("oracle sidecar has an unexpected header: " + path);
    }
    std::vector<OracleRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        OracleRow row;
        char c1 = 0, c2 = 0;
        if (!(ss >> row.true_time >> c1 >> row.cdf_true >> c2 >> row.cdf_obs) || c1 != ',' ||
            c2 != ',') {
            throw DataError("oracle sidecar row " + std::to_string(line_no) + " is malformed");
        }
        rows.push_back(row);
    }
    return rows;
}

}  // namespace survcal
