#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "survcal/data.hpp"
#include "survcal/losses.hpp"
#include "survcal/models.hpp"

namespace survcal {

struct SoftConfig {
    double gamma = 1e4;
    BinScheme bins;
};

/// Model CDF values at the observed times, with their event flags.
struct CdfBatch {
    std::vector<double> values;
    std::vector<bool> events;

    std::size_t size() const { return values.size(); }
};

/// Division guard for censored terms: 1 - F_u is kept at or above this.
inline constexpr double kCensGuard = 1e-6;

/// Soft membership of u in bin i: sigmoid(gamma*(u-a)(b-u)) with the scheme's
/// boundary extensions substituted into a and b.
double zeta(double u, const BinScheme& bins, std::size_t i, double gamma);
/// d zeta / du.
double zeta_deriv(double u, const BinScheme& bins, std::size_t i, double gamma);

/// Expected bin-i mass of a censored point whose conditional CDF value is
/// uniform on (f, 1): (b-f)*sigmoid(gamma*(f-a_s)(b_s-f))/(1-f) +
/// (b-a)*sigmoid(gamma*(a_s-f))/(1-f). Prefactors use the true edges; only
/// the sigmoid arguments see the extensions. Summed over a full scheme this
/// is 1 in the sharp limit.
double zeta_cens(double f, const BinScheme& bins, std::size_t i, double gamma,
                 bool* clamped = nullptr);
/// d zeta_cens / df (zero through the division-guard clamp).
double zeta_cens_deriv(double f, const BinScheme& bins, std::size_t i, double gamma);

/// Sum over bins of (mean soft membership - bin width)^2, censored points
/// contributing via zeta_cens.
double soft_dcal(const CdfBatch& batch, const SoftConfig& cfg);

struct SoftDcalGrads {
    double value = 0.0;
    std::vector<double> dvalue_du;  // per batch point
    std::size_t cens_clamps = 0;
};
SoftDcalGrads soft_dcal_with_grads(const CdfBatch& batch, const SoftConfig& cfg);

/// One inner term of the batch-averaged penalty: soft D-CAL of this batch's
/// model CDF values, with the gradient chained through the model parameters.
LossValue xcal_batch_penalty(const SurvivalModel& model, const Dataset& data,
                             std::span<const std::size_t> idx, const SoftConfig& cfg,
                             bool want_grad = true, const DropoutPlan* dropout = nullptr);

/// Number of xcal_batch_penalty evaluations since the last reset; lets tests
/// confirm the penalty path stays cold at lambda = 0.
std::uint64_t xcal_penalty_eval_count();
void reset_xcal_penalty_eval_count();

struct JensenRow {
    std::size_t batch_size = 0;
    double mean_bound = 0.0;  // Monte Carlo mean of per-batch penalties
    double pooled = 0.0;      // soft D-CAL of the full data
};

/// For each batch size: partition the data into floor(n/size) disjoint
/// batches per trial (remainder dropped), average the per-batch penalties
/// over all trials. The bound column upper-bounds the pooled column.
std::vector<JensenRow> jensen_slack_report(const CdfBatch& data, const SoftConfig& cfg,
                                           std::span<const std::size_t> batch_sizes,
                                           std::size_t trials, std::uint64_t seed);

}  // namespace survcal
