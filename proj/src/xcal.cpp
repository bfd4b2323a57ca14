#include "survcal/xcal.hpp"

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "survcal/mathutil.hpp"
#include "survcal/rng.hpp"

namespace survcal {

double zeta(double u, const BinScheme& bins, std::size_t i, double gamma) {
    const double a = bins.soft_lower(i);
    const double b = bins.soft_upper(i);
    return sigmoid(gamma * (u - a) * (b - u));
}

double zeta_deriv(double u, const BinScheme& bins, std::size_t i, double gamma) {
    const double a = bins.soft_lower(i);
    const double b = bins.soft_upper(i);
    return gamma * (a + b - 2.0 * u) * sigmoid_deriv(gamma * (u - a) * (b - u));
}

double zeta_cens(double f, const BinScheme& bins, std::size_t i, double gamma, bool* clamped) {
    if (clamped != nullptr) *clamped = false;
    if (f > 1.0 - kCensGuard) {
        f = 1.0 - kCensGuard;
        if (clamped != nullptr) *clamped = true;
    }
    const double a = bins.lower(i);
    const double b = bins.upper(i);
    const double as = bins.soft_lower(i);
    const double bs = bins.soft_upper(i);
    const double rem = 1.0 - f;
    const double inside = sigmoid(gamma * (f - as) * (bs - f));
    const double below = sigmoid(gamma * (as - f));
    return ((b - f) * inside + (b - a) * below) / rem;
}

double zeta_cens_deriv(double f, const BinScheme& bins, std::size_t i, double gamma) {
    if (f > 1.0 - kCensGuard) return 0.0;
    const double a = bins.lower(i);
    const double b = bins.upper(i);
    const double as = bins.soft_lower(i);
    const double bs = bins.soft_upper(i);
    const double rem = 1.0 - f;
    const double inside = sigmoid(gamma * (f - as) * (bs - f));
    const double d_inside = gamma * (as + bs - 2.0 * f) * sigmoid_deriv(gamma * (f - as) * (bs - f));
    const double below = sigmoid(gamma * (as - f));
    const double d_below = -gamma * sigmoid_deriv(gamma * (as - f));
    const double num = (b - f) * inside + (b - a) * below;
    const double d_num = -inside + (b - f) * d_inside + (b - a) * d_below;
    return d_num / rem + num / (rem * rem);
}

namespace {

double point_contrib(double f, bool event, const BinScheme& bins, std::size_t i, double gamma,
                     bool* clamped) {
    if (event) return zeta(f, bins, i, gamma);
    return zeta_cens(f, bins, i, gamma, clamped);
}

double point_contrib_deriv(double f, bool event, const BinScheme& bins, std::size_t i,
                           double gamma) {
    if (event) return zeta_deriv(f, bins, i, gamma);
    return zeta_cens_deriv(f, bins, i, gamma);
}

}  // namespace

double soft_dcal(const CdfBatch& batch, const SoftConfig& cfg) {
    if (batch.size() == 0) throw std::invalid_argument("soft_dcal: empty batch");
    const std::size_t n_bins = cfg.bins.bins();
    const double m = static_cast<double>(batch.size());
    double total = 0.0;
    for (std::size_t i = 0; i < n_bins; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < batch.size(); ++j) {
            acc += point_contrib(batch.values[j], batch.events[j], cfg.bins, i, cfg.gamma, nullptr);
        }
        const double r = acc / m - cfg.bins.width(i);
        total += r * r;
    }
    return total;
}

SoftDcalGrads soft_dcal_with_grads(const CdfBatch& batch, const SoftConfig& cfg) {
    if (batch.size() == 0) throw std::invalid_argument("soft_dcal: empty batch");
    const std::size_t n_bins = cfg.bins.bins();
    const std::size_t m = batch.size();
    const double md = static_cast<double>(m);

    SoftDcalGrads out;
    out.dvalue_du.assign(m, 0.0);
    std::vector<double> residual(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            bool clamped = false;
            acc += point_contrib(batch.values[j], batch.events[j], cfg.bins, i, cfg.gamma,
                                 &clamped);
            if (clamped && i == 0) ++out.cens_clamps;
        }
        residual[i] = acc / md - cfg.bins.width(i);
        out.value += residual[i] * residual[i];
    }
    for (std::size_t i = 0; i < n_bins; ++i) {
        const double scale = 2.0 * residual[i] / md;
        if (scale == 0.0) continue;
        for (std::size_t j = 0; j < m; ++j) {
            out.dvalue_du[j] +=
                scale * point_contrib_deriv(batch.values[j], batch.events[j], cfg.bins, i,
                                            cfg.gamma);
        }
    }
    return out;
}

namespace {
std::atomic<std::uint64_t> g_penalty_evals{0};
}

std::uint64_t xcal_penalty_eval_count() { return g_penalty_evals.load(); }
void reset_xcal_penalty_eval_count() { g_penalty_evals.store(0); }

LossValue xcal_batch_penalty(const SurvivalModel& model, const Dataset& data,
                             std::span<const std::size_t> idx, const SoftConfig& cfg,
                             bool want_grad, const DropoutPlan* dropout) {
    if (idx.size() < 2) throw std::invalid_argument("penalty batch needs at least two points");
    g_penalty_evals.fetch_add(1);

    const std::size_t m = idx.size();
    CdfBatch batch;
    batch.values.resize(m);
    batch.events.resize(m);
    std::vector<MlpTrace> traces(want_grad ? m : 0);
    std::vector<std::vector<double>> dcdfs(want_grad ? m : 0);

    LossValue out;
    for (std::size_t j = 0; j < m; ++j) {
        const Observation& obs = data.observations[idx[j]];
        MlpTrace* trace = want_grad ? &traces[j] : nullptr;
        const std::vector<double> h = model.head(obs.covariates, trace, dropout, idx[j]);
        PointEval pe = model.eval_at(h, obs.time, want_grad);
        batch.values[j] = pe.cdf;
        batch.events[j] = obs.event;
        if (pe.grid_clamped) ++out.grid_clamps;
        if (want_grad) dcdfs[j] = std::move(pe.dcdf);
    }

    SoftDcalGrads sg = soft_dcal_with_grads(batch, cfg);
    out.value = sg.value;
    out.cens_clamps = sg.cens_clamps;
    if (want_grad) {
        out.grad.assign(model.n_params(), 0.0);
        std::vector<double> dhead;
        for (std::size_t j = 0; j < m; ++j) {
            const double du = sg.dvalue_du[j];
            dhead.assign(dcdfs[j].size(), 0.0);
            for (std::size_t q = 0; q < dhead.size(); ++q) dhead[q] = du * dcdfs[j][q];
            model.accumulate_param_grad(traces[j], dhead, out.grad);
        }
    }
    return out;
}

std::vector<JensenRow> jensen_slack_report(const CdfBatch& data, const SoftConfig& cfg,
                                           std::span<const std::size_t> batch_sizes,
                                           std::size_t trials, std::uint64_t seed) {
    const std::size_t n = data.size();
    const std::size_t n_bins = cfg.bins.bins();
    for (const std::size_t bs : batch_sizes) {
        if (bs == 0 || bs > n) throw std::invalid_argument("batch size outside [1, n]");
    }

    // Per-point per-bin contributions, computed once.
    std::vector<double> contrib(n * n_bins);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n_bins; ++i) {
            contrib[j * n_bins + i] =
                point_contrib(data.values[j], data.events[j], cfg.bins, i, cfg.gamma, nullptr);
        }
    }
    const double pooled = soft_dcal(data, cfg);

    std::vector<JensenRow> rows;
    Rng rng(seed, 0x1e5u);
    std::vector<std::size_t> order(n);
    for (std::size_t j = 0; j < n; ++j) order[j] = j;
    std::vector<double> bin_acc(n_bins);

    for (const std::size_t bs : batch_sizes) {
        const std::size_t n_batches = n / bs;
        double acc = 0.0;
        for (std::size_t trial = 0; trial < trials; ++trial) {
            rng.shuffle(order.begin(), order.end());
            for (std::size_t b = 0; b < n_batches; ++b) {
                std::fill(bin_acc.begin(), bin_acc.end(), 0.0);
                for (std::size_t p = 0; p < bs; ++p) {
                    const double* row = contrib.data() + order[b * bs + p] * n_bins;
                    for (std::size_t i = 0; i < n_bins; ++i) bin_acc[i] += row[i];
                }
                double penalty = 0.0;
                for (std::size_t i = 0; i < n_bins; ++i) {
                    const double r = bin_acc[i] / static_cast<double>(bs) - cfg.bins.width(i);
                    penalty += r * r;
                }
                acc += penalty;
            }
        }
        rows.push_back({bs, acc / static_cast<double>(trials * n_batches), pooled});
    }
    return rows;
}

}  // namespace survcal
