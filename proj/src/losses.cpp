#include "survcal/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "survcal/xcal.hpp"

namespace survcal {

std::string loss_name(LossKind k) { return k == LossKind::nll ? "nll" : "scrps"; }

LossKind loss_from_name(const std::string& name) {
    if (name == "nll") return LossKind::nll;
    if (name == "scrps") return LossKind::scrps;
    throw DataError("unknown loss '" + name + "'");
}

LossValue nll_loss(const SurvivalModel& model, const Dataset& data,
                   std::span<const std::size_t> idx, bool want_grad, const DropoutPlan* dropout) {
    if (idx.empty()) throw std::invalid_argument("nll_loss: empty batch");
    LossValue out;
    if (want_grad) out.grad.assign(model.n_params(), 0.0);
    MlpTrace trace;
    std::vector<double> dhead;
    for (const std::size_t j : idx) {
        const Observation& obs = data.observations[j];
        const std::vector<double> h =
            model.head(obs.covariates, want_grad ? &trace : nullptr, dropout, j);
        const PointEval pe = model.eval_at(h, obs.time, want_grad);
        out.value -= obs.event ? pe.log_density : pe.log_survival;
        if (pe.floor_clamped && !obs.event) ++out.floor_clamps;
        if (pe.grid_clamped) ++out.grid_clamps;
        if (want_grad) {
            const std::vector<double>& d = obs.event ? pe.dlogf : pe.dlogsurv;
            dhead.resize(d.size());
            for (std::size_t q = 0; q < d.size(); ++q) dhead[q] = -d[q];
            model.accumulate_param_grad(trace, dhead, out.grad);
        }
    }
    const double m = static_cast<double>(idx.size());
    out.value /= m;
    for (double& g : out.grad) g /= m;
    return out;
}

namespace {

constexpr std::size_t kSegments = 256;

// Exact integrals of the squared staircase CDF of a discrete model: bins are
// constant pieces, so both terms reduce to sums over the grid.
void scrps_discrete_point(const SurvivalModel& model, std::span<const double> head, double y,
                          bool event, bool want_grad, double& value, std::vector<double>& dhead,
                          std::size_t& grid_clamps) {
    const TimeGrid& grid = model.grid;
    const std::size_t n = grid.n_bins();
    bool clamped = false;
    const std::size_t k = grid.bin_of(y, &clamped);
    if (clamped) ++grid_clamps;
    const double y_eff = clamped ? grid.edges.back() : y;

    for (std::size_t j = 0; j < n; ++j) {
        // Cumulative mass through bin j, with head gradient, via the
        // staircase CDF at the bin's closing edge.
        const PointEval pe = model.eval_at(head, grid.edges[j + 1], want_grad, false);
        const double c = pe.cdf;
        const double len = grid.edges[j + 1] - grid.edges[j];
        const double below = j < k ? len : j == k ? (y_eff - grid.edges[j]) : 0.0;
        const double above = !event ? 0.0
                             : j == k ? (grid.edges[j + 1] - y_eff)
                             : j > k  ? len
                                      : 0.0;
        value += below * c * c + above * (1.0 - c) * (1.0 - c);
        if (want_grad) {
            const double coeff = 2.0 * below * c - 2.0 * above * (1.0 - c);
            for (std::size_t q = 0; q < dhead.size(); ++q) dhead[q] += coeff * pe.dcdf[q];
        }
    }
    if (clamped) value += y - grid.edges.back();  // CDF is 1 past the grid
}

void scrps_continuous_point(const SurvivalModel& model, std::span<const double> head, double y,
                            bool event, bool want_grad, double& value,
                            std::vector<double>& dhead) {
    // Left segment: trapezoid over [0, y]; the CDF vanishes at 0.
    const double h = y / static_cast<double>(kSegments);
    for (std::size_t i = 1; i <= kSegments; ++i) {
        const double z = y * static_cast<double>(i) / static_cast<double>(kSegments);
        const PointEval pe = model.eval_at(head, z, want_grad);
        const double w = (i == kSegments ? 0.5 : 1.0) * h;
        value += w * pe.cdf * pe.cdf;
        if (want_grad) {
            const double coeff = 2.0 * w * pe.cdf;
            for (std::size_t q = 0; q < dhead.size(); ++q) dhead[q] += coeff * pe.dcdf[q];
        }
    }
    if (!event) return;
    // Tail: substitute z = y + s/(1-s); the integrand vanishes at s -> 1.
    const double hs = 1.0 / static_cast<double>(kSegments);
    for (std::size_t i = 0; i < kSegments; ++i) {
        const double s = static_cast<double>(i) / static_cast<double>(kSegments);
        const double z = y + s / (1.0 - s);
        const PointEval pe = model.eval_at(head, z, want_grad);
        const double jac = 1.0 / ((1.0 - s) * (1.0 - s));
        const double w = (i == 0 ? 0.5 : 1.0) * hs * jac;
        value += w * pe.survival * pe.survival;
        if (want_grad) {
            const double coeff = -2.0 * w * pe.survival;
            for (std::size_t q = 0; q < dhead.size(); ++q) dhead[q] += coeff * pe.dcdf[q];
        }
    }
}

}  // namespace

double scrps_quadrature(const std::function<double(double)>& cdf, double y, bool event) {
    const double h = y / static_cast<double>(kSegments);
    double value = 0.0;
    for (std::size_t i = 1; i <= kSegments; ++i) {
        const double z = y * static_cast<double>(i) / static_cast<double>(kSegments);
        const double f = cdf(z);
        value += (i == kSegments ? 0.5 : 1.0) * h * f * f;
    }
    if (!event) return value;
    const double hs = 1.0 / static_cast<double>(kSegments);
    for (std::size_t i = 0; i < kSegments; ++i) {
        const double s = static_cast<double>(i) / static_cast<double>(kSegments);
        const double z = y + s / (1.0 - s);
        const double surv = 1.0 - cdf(z);
        value += (i == 0 ? 0.5 : 1.0) * hs * surv * surv / ((1.0 - s) * (1.0 - s));
    }
    return value;
}

LossValue scrps_loss(const SurvivalModel& model, const Dataset& data,
                     std::span<const std::size_t> idx, bool want_grad,
                     const DropoutPlan* dropout) {
    if (idx.empty()) throw std::invalid_argument("scrps_loss: empty batch");
    const bool discrete =
        model.family == Family::categorical || model.family == Family::mtlr;
    LossValue out;
    if (want_grad) out.grad.assign(model.n_params(), 0.0);
    MlpTrace trace;
    std::vector<double> dhead;
    for (const std::size_t j : idx) {
        const Observation& obs = data.observations[j];
        const std::vector<double> h =
            model.head(obs.covariates, want_grad ? &trace : nullptr, dropout, j);
        double value = 0.0;
        dhead.assign(want_grad ? model.head_dim() : 0, 0.0);
        if (discrete) {
            scrps_discrete_point(model, h, obs.time, obs.event, want_grad, value, dhead,
                                 out.grid_clamps);
        } else {
            scrps_continuous_point(model, h, obs.time, obs.event, want_grad, value, dhead);
        }
        if (!std::isfinite(value)) throw std::runtime_error("scrps quadrature is not finite");
        out.value += value;
        if (want_grad) model.accumulate_param_grad(trace, dhead, out.grad);
    }
    const double m = static_cast<double>(idx.size());
    out.value /= m;
    for (double& g : out.grad) g /= m;
    return out;
}

LossValue combined_objective(const SurvivalModel& model, const Dataset& data,
                             std::span<const std::size_t> idx, LossKind kind, double lambda,
                             const SoftConfig& cfg, bool want_grad, const DropoutPlan* dropout) {
    if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
    LossValue base = kind == LossKind::nll ? nll_loss(model, data, idx, want_grad, dropout)
                                           : scrps_loss(model, data, idx, want_grad, dropout);
    if (lambda == 0.0) return base;
    const LossValue pen = xcal_batch_penalty(model, data, idx, cfg, want_grad, dropout);
    base.value += lambda * pen.value;
    for (std::size_t i = 0; i < base.grad.size(); ++i) base.grad[i] += lambda * pen.grad[i];
    base.grid_clamps += pen.grid_clamps;
    base.cens_clamps += pen.cens_clamps;
    return base;
}

}  // namespace survcal
