#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "survcal/data.hpp"
#include "survcal/models.hpp"

namespace survcal {

struct SoftConfig;  // xcal.hpp

enum class LossKind { nll, scrps };

std::string loss_name(LossKind k);
LossKind loss_from_name(const std::string& name);

struct LossValue {
    double value = 0.0;
    std::vector<double> grad;       // empty when gradients were not requested
    std::size_t floor_clamps = 0;   // survival floored before a log
    std::size_t grid_clamps = 0;    // discrete times beyond the grid
    std::size_t cens_clamps = 0;    // censored CDF values at the division guard
};

/// Mean over the batch of -[delta*log f + (1-delta)*log survival].
LossValue nll_loss(const SurvivalModel& model, const Dataset& data,
                   std::span<const std::size_t> idx, bool want_grad = true,
                   const DropoutPlan* dropout = nullptr);

/// Mean over the batch of the squared-CDF scoring rule: the integral of
/// CDF^2 below the observed time, plus (events only) the integral of
/// survival^2 above it.
LossValue scrps_loss(const SurvivalModel& model, const Dataset& data,
                     std::span<const std::size_t> idx, bool want_grad = true,
                     const DropoutPlan* dropout = nullptr);

/// Quadrature core for a single observation and an arbitrary CDF: 256-segment
/// trapezoid on [0,y] plus, for events, the substituted tail z = y + s/(1-s).
/// Exposed so tests can drive it with constructed CDFs.
double scrps_quadrature(const std::function<double(double)>& cdf, double y, bool event);

/// base loss + lambda * soft-calibration batch penalty, gradients summed.
/// When lambda is 0 the penalty path is not evaluated at all.
LossValue combined_objective(const SurvivalModel& model, const Dataset& data,
                             std::span<const std::size_t> idx, LossKind kind, double lambda,
                             const SoftConfig& cfg, bool want_grad = true,
                             const DropoutPlan* dropout = nullptr);

}  // namespace survcal
