#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "survcal/data.hpp"
#include "survcal/models.hpp"

namespace survcal {

/// Sum over bins of (empirical fraction in the bin - bin width)^2, hard
/// half-open membership.
double exact_dcal(std::span<const double> cdf_values, const BinScheme& bins);

/// Hard-indicator calibration with censoring: events contribute indicators;
/// a point censored at CDF value f spreads (b-f)/(1-f) into its own bin and
/// (b-a)/(1-f) into every later bin. Reduces to exact_dcal when all points
/// are events.
double censored_exact_dcal(std::span<const double> cdf_values, const std::vector<bool>& events,
                           const BinScheme& bins, std::size_t* cens_clamps = nullptr);

struct Chi2Group {
    std::size_t count = 0;
    double observed = 0.0;  // events in the group
    double expected = 0.0;  // sum of predicted probabilities
    double mean_p = 0.0;
};

struct Chi2Result {
    double statistic = 0.0;
    std::vector<Chi2Group> groups;
};

/// Classical per-time calibration statistic: quantile-group the predicted
/// event probabilities, then sum (O-E)^2 / (|g| p(1-p)). Scales linearly
/// under dataset duplication. The threshold decision is left to the caller.
Chi2Result chi2_calibration_test(std::span<const double> probabilities,
                                 const std::vector<bool>& events, std::size_t k_groups);

/// Harrell's concordance over pairs (i,j) with u_i < u_j and delta_i = 1;
/// risk ties earn half credit. The fast path and the quadratic oracle count
/// the same integers, so they agree bitwise.
double concordance(std::span<const double> times, const std::vector<bool>& events,
                   std::span<const double> risks);
double concordance_brute(std::span<const double> times, const std::vector<bool>& events,
                         std::span<const double> risks);

struct MetricsReport {
    double test_nll = 0.0;
    double dcal = 0.0;           // censored estimator when censoring is present
    double dcal_censored = 0.0;  // meaningful only when has_censoring
    bool has_censoring = false;
    double concordance = 0.0;
    std::size_t n_test = 0;
    std::size_t bins_used = 0;
    std::size_t grid_clamps = 0;
    std::string dataset;

    nlohmann::json to_json() const;
};

MetricsReport evaluate(const SurvivalModel& model, const Dataset& data, const BinScheme& bins);

}  // namespace survcal
