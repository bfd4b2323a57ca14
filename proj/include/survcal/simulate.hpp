#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "survcal/data.hpp"
#include "survcal/rng.hpp"

namespace survcal {

/// Log-linear gamma generator: x ~ N(0, cov_scale*I), per-coordinate weights
/// Unif(+-weight_range), failure time Gamma with mean exp(w.x) and constant
/// variance mean_var. Censoring times come from an independent second weight
/// vector through the same construction.
struct GammaSimConfig {
    std::size_t n = 0;
    std::size_t d = 32;
    double cov_scale = 10.0;
    double mean_var = 1e-3;
    double weight_range = 0.1;
    bool censoring = false;
    std::uint64_t seed = 0;
};

/// Regularized lower incomplete gamma at shape alpha and rate beta; 0 for
/// t <= 0.
double gamma_cdf(double t, double alpha, double beta);

/// True conditional of a simulator, for calibration ground truth. Keeps the
/// uncensored failure times alongside so tests can transform them.
struct OracleHandle {
    enum class Kind { gamma_loglinear, risk_table };
    Kind kind = Kind::gamma_loglinear;
    std::vector<double> weights;  // log-linear weights, or the per-class means
    double mean_var = 1e-3;
    std::vector<double> true_times;
    std::vector<double> censor_times;  // empty when the generator did not censor

    double mean_of(std::span<const double> x) const;
    double cdf(double t, std::span<const double> x) const;
};

std::pair<Dataset, OracleHandle> simulate_gamma(const GammaSimConfig& cfg);

/// Ten equiprobable classes with fixed per-class mean times, one-hot
/// covariates, Gamma times at constant variance 1e-3; censoring uniform
/// between the smallest failure time and its 90th percentile.
std::pair<Dataset, OracleHandle> simulate_risk_groups(std::size_t n, std::uint64_t seed,
                                                      bool censoring);

/// i.i.d. Unif(min times, 90th percentile of times) draws, one per input.
std::vector<double> uniform_censoring(const std::vector<double>& times, Rng& rng);

struct OracleRow {
    double true_time = 0.0;
    double cdf_true = 0.0;  // F(true_time | x)
    double cdf_obs = 0.0;   // F(observed time | x)
};

void save_oracle_sidecar(const OracleHandle& oracle, const Dataset& data,
                         const std::string& path);
std::vector<OracleRow> load_oracle_sidecar(const std::string& path);

}  // namespace survcal
