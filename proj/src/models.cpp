#include "survcal/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "survcal/mathutil.hpp"

namespace survcal {

std::string family_name(Family f) {
    switch (f) {
        case Family::lognormal: return "lognormal";
        case Family::weibull: return "weibull";
        case Family::categorical: return "categorical";
        case Family::mtlr: return "mtlr";
    }
    throw std::logic_error("unknown family");
}

Family family_from_name(const std::string& name) {
    if (name == "lognormal") return Family::lognormal;
    if (name == "weibull") return Family::weibull;
    if (name == "categorical") return Family::categorical;
    if (name == "mtlr") return Family::mtlr;
    throw DataError("unknown model family '" + name + "'");
}

std::size_t TimeGrid::bin_of(double t, bool* clamped) const {
    if (clamped != nullptr) *clamped = false;
    const std::size_t n = n_bins();
    if (t > edges.back()) {
        if (clamped != nullptr) *clamped = true;
        return n - 1;
    }
    // Bins are left-open (a, b], so an edge value belongs to the bin it closes.
    const auto it = std::lower_bound(edges.begin(), edges.end(), t);
    if (it == edges.begin()) return 0;
    const std::size_t idx = static_cast<std::size_t>(it - edges.begin());
    return std::min(idx - 1, n - 1);
}

void TimeGrid::validate() const {
    if (edges.size() < 2) throw DataError("time grid needs at least two edges");
    if (edges.front() != 0.0) throw DataError("time grid must start at 0");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!std::isfinite(edges[i]) || edges[i] <= edges[i - 1]) {
            throw DataError("time grid edges must be finite and strictly ascending");
        }
    }
}

TimeGrid quantile_bin_edges(const Dataset& data, std::size_t n_bins) {
    if (n_bins < 2) throw DataError("time grid needs at least two bins");
    std::vector<double> times;
    times.reserve(data.size());
    for (const auto& obs : data.observations) {
        if (obs.event) times.push_back(obs.time);
    }
    if (times.size() < n_bins) {
        throw DataError("fewer uncensored times (" + std::to_string(times.size()) +
                        ") than requested bins (" + std::to_string(n_bins) + ")");
    }
    std::sort(times.begin(), times.end());
    if (times.front() == times.back()) throw DataError("degenerate time grid: all event times equal");

    TimeGrid grid;
    grid.edges.resize(n_bins + 1);
    grid.edges[0] = 0.0;
    for (std::size_t j = 1; j < n_bins; ++j) {
        grid.edges[j] = percentile_sorted(times, 100.0 * static_cast<double>(j) /
                                                     static_cast<double>(n_bins));
    }
    grid.edges[n_bins] = times.back();
    // Collapse duplicate percentiles with an epsilon-scale right nudge.
    for (std::size_t j = 1; j <= n_bins; ++j) {
        const double prev = grid.edges[j - 1];
        const double bump = std::max(prev * 4.0 * std::numeric_limits<double>::epsilon(), 1e-300);
        if (grid.edges[j] <= prev) grid.edges[j] = prev + bump;
    }
    grid.validate();
    return grid;
}

PointEval lognormal_point(double mu, double log_sigma, double t, bool want_grad) {
    if (!(t > 0.0)) throw std::invalid_argument("lognormal evaluation needs t > 0");
    const double sigma = std::exp(log_sigma);
    const double z = (std::log(t) - mu) / sigma;
    PointEval out;
    out.cdf = normal_cdf(z);
    out.survival = 0.5 * std::erfc(z / std::sqrt(2.0));
    out.log_density = log_normal_pdf_z(z) - log_sigma - std::log(t);
    out.floor_clamped = out.survival < kSurvivalFloor;
    out.log_survival = std::log(std::max(out.survival, kSurvivalFloor));
    if (want_grad) {
        const double phi = normal_pdf(z);
        out.dcdf = {-phi / sigma, -z * phi};
        out.dlogf = {z / sigma, z * z - 1.0};
        if (out.floor_clamped) {
            out.dlogsurv = {0.0, 0.0};
        } else {
            out.dlogsurv = {phi / (sigma * out.survival), z * phi / out.survival};
        }
    }
    return out;
}

PointEval weibull_direct(double scale, double concentration, double t) {
    if (!(t > 0.0)) throw std::invalid_argument("weibull evaluation needs t > 0");
    const double log_ratio = std::log(t / scale);
    const double a = std::exp(concentration * log_ratio);  // (t/scale)^concentration
    PointEval out;
    out.cdf = -std::expm1(-a);
    out.survival = std::exp(-a);
    out.log_density = std::log(concentration / scale) + (concentration - 1.0) * log_ratio - a;
    out.floor_clamped = out.survival < kSurvivalFloor;
    out.log_survival = std::log(std::max(out.survival, kSurvivalFloor));
    return out;
}

PointEval weibull_point(double beta_head, double kappa, double t, bool want_grad) {
    const double scale = std::exp(beta_head) + 1.0;
    const double sig = sigmoid(kappa);
    const double k = 1.0 + sig;
    PointEval out = weibull_direct(scale, k, t);
    if (want_grad) {
        const double log_ratio = std::log(t / scale);
        const double a = std::exp(k * log_ratio);
        const double s_exp = std::exp(-a);
        const double dscale_dh = scale - 1.0;  // d(exp(h)+1)/dh
        const double dk_dkappa = sig * (1.0 - sig);
        const double da_dscale = -k * a / scale;
        const double da_dk = a * log_ratio;
        out.dcdf = {s_exp * da_dscale * dscale_dh, s_exp * da_dk * dk_dkappa};
        const double dlogf_dscale = k * (a - 1.0) / scale;
        const double dlogf_dk = 1.0 / k + log_ratio * (1.0 - a);
        out.dlogf = {dlogf_dscale * dscale_dh, dlogf_dk * dk_dkappa};
        if (out.floor_clamped) {
            out.dlogsurv = {0.0, 0.0};
        } else {
            out.dlogsurv = {-da_dscale * dscale_dh, -da_dk * dk_dkappa};
        }
    }
    return out;
}

std::vector<double> softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double norm = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - top);
        norm += out[i];
    }
    for (double& v : out) v /= norm;
    return out;
}

std::vector<double> suffix_sum_masses(std::span<const double> scores) {
    std::vector<double> logits(scores.size() + 1, 0.0);
    for (std::size_t k = scores.size(); k-- > 0;) logits[k] = logits[k + 1] + scores[k];
    return softmax(logits);
}

namespace {

// Shared discrete-family evaluation given bin logits. Gradients come back in
// logit space; MTLR prefix-sums them into score space afterwards.
PointEval discrete_eval(std::span<const double> logits, const TimeGrid& grid, double t,
                        bool interpolate, bool want_grad) {
    PointEval out;
    const std::size_t n = grid.n_bins();
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> mass(n);
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mass[i] = std::exp(logits[i] - top);
        norm += mass[i];
    }
    for (double& v : mass) v /= norm;

    const std::size_t k = grid.bin_of(t, &out.grid_clamped);
    out.bin = k;
    const double t_eff = out.grid_clamped ? grid.edges.back() : std::max(t, 0.0);
    const double w = interpolate ? (t_eff - grid.edges[k]) / (grid.edges[k + 1] - grid.edges[k])
                                 : 1.0;

    double cum_before = 0.0;
    for (std::size_t j = 0; j < k; ++j) cum_before += mass[j];
    double stair_surv = 0.0;
    for (std::size_t j = n; j-- > k + 1;) stair_surv += mass[j];

    // Partial sums of the normalized masses can land an ulp above 1.
    out.cdf = std::min(1.0, std::max(0.0, cum_before + w * mass[k]));
    out.survival = 1.0 - out.cdf;
    out.log_density = (logits[k] - top) - std::log(norm);
    out.floor_clamped = stair_surv < kSurvivalFloor;
    out.log_survival = std::log(std::max(stair_surv, kSurvivalFloor));

    if (want_grad) {
        out.dcdf.resize(n);
        out.dlogf.resize(n);
        out.dlogsurv.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            const double coeff = j < k ? 1.0 : (j == k ? w : 0.0);
            out.dcdf[j] = mass[j] * (coeff - out.cdf);
            out.dlogf[j] = (j == k ? 1.0 : 0.0) - mass[j];
            out.dlogsurv[j] = out.floor_clamped
                                  ? 0.0
                                  : mass[j] * ((j > k ? 1.0 : 0.0) - stair_surv) / stair_surv;
        }
    }
    return out;
}

void prefix_sum_into_scores(std::vector<double>& grad_logits) {
    // dL/dscore_j = sum of dL/dlogit_m for m <= j; the last logit is constant.
    double acc = 0.0;
    for (std::size_t j = 0; j + 1 < grad_logits.size(); ++j) {
        acc += grad_logits[j];
        grad_logits[j] = acc;
    }
    grad_logits.pop_back();
}

}  // namespace

SurvivalModel SurvivalModel::make(Family family, std::size_t input_dim,
                                  const std::vector<std::size_t>& hidden, std::uint64_t init_seed,
                                  const TimeGrid& grid, bool interpolate) {
    SurvivalModel m;
    m.family = family;
    m.net.input_dim = input_dim;
    m.net.hidden = hidden;
    switch (family) {
        case Family::lognormal: m.net.output_dim = 2; break;
        case Family::weibull: m.net.output_dim = 1; break;
        case Family::categorical:
        case Family::mtlr:
            grid.validate();
            m.grid = grid;
            m.interpolate = interpolate;
            m.net.output_dim =
                family == Family::categorical ? grid.n_bins() : grid.n_bins() - 1;
            if (m.net.output_dim < 1) throw DataError("discrete family needs at least two bins");
            break;
    }
    m.theta = init_params(m.net, init_seed);
    if (family == Family::weibull) m.theta.push_back(0.0);  // concentration starts at 1.5
    return m;
}

std::size_t SurvivalModel::head_dim() const {
    switch (family) {
        case Family::lognormal:
        case Family::weibull: return 2;
        case Family::categorical: return grid.n_bins();
        case Family::mtlr: return grid.n_bins() - 1;
    }
    throw std::logic_error("unknown family");
}

std::vector<double> SurvivalModel::head(std::span<const double> x, MlpTrace* trace,
                                        const DropoutPlan* dropout,
                                        std::uint64_t sample_tag) const {
    const std::size_t net_params = net.layout().total;
    std::vector<double> out = mlp_forward(net, std::span<const double>(theta).first(net_params), x,
                                          trace, dropout, sample_tag);
    if (family == Family::weibull) out.push_back(theta.back());
    return out;
}

PointEval SurvivalModel::eval_at(std::span<const double> head_values, double t,
                                 bool want_grad) const {
    return eval_at(head_values, t, want_grad, interpolate);
}

PointEval SurvivalModel::eval_at(std::span<const double> head_values, double t, bool want_grad,
                                 bool interpolate_override) const {
    if (head_values.size() != head_dim()) {
        throw std::invalid_argument("head vector size does not match family");
    }
    switch (family) {
        case Family::lognormal:
            return lognormal_point(head_values[0], head_values[1], t, want_grad);
        case Family::weibull:
            return weibull_point(head_values[0], head_values[1], t, want_grad);
        case Family::categorical:
            return discrete_eval(head_values, grid, t, interpolate_override, want_grad);
        case Family::mtlr: {
            std::vector<double> logits(head_values.size() + 1, 0.0);
            for (std::size_t k = head_values.size(); k-- > 0;) {
                logits[k] = logits[k + 1] + head_values[k];
            }
            PointEval out = discrete_eval(logits, grid, t, interpolate_override, want_grad);
            if (want_grad) {
                prefix_sum_into_scores(out.dcdf);
                prefix_sum_into_scores(out.dlogf);
                prefix_sum_into_scores(out.dlogsurv);
            }
            return out;
        }
    }
    throw std::logic_error("unknown family");
}

void SurvivalModel::accumulate_param_grad(const MlpTrace& trace, std::span<const double> dhead,
                                          std::span<double> grad) const {
    const std::size_t net_params = net.layout().total;
    const auto theta_net = std::span<const double>(theta).first(net_params);
    const auto grad_net = grad.first(net_params);
    if (family == Family::weibull) {
        const double upstream[1] = {dhead[0]};
        mlp_backward(net, theta_net, trace, upstream, grad_net);
        grad[grad.size() - 1] += dhead[1];
    } else {
        mlp_backward(net, theta_net, trace, dhead, grad_net);
    }
}

double SurvivalModel::risk_score(std::span<const double> x) const {
    const std::vector<double> h = head(x);
    switch (family) {
        case Family::lognormal: return -std::exp(h[0]);
        case Family::weibull: {
            const double scale = std::exp(h[0]) + 1.0;
            const double k = 1.0 + sigmoid(h[1]);
            return -(scale * std::pow(std::numbers::ln2, 1.0 / k));
        }
        case Family::categorical:
        case Family::mtlr: {
            const std::vector<double> mass = family == Family::categorical
                                                 ? softmax(h)
                                                 : suffix_sum_masses(h);
            double cum = 0.0;
            for (std::size_t k = 0; k < mass.size(); ++k) {
                const double next = cum + mass[k];
                if (next >= 0.5) {
                    if (interpolate && mass[k] > 0.0) {
                        const double frac = (0.5 - cum) / mass[k];
                        return -(grid.edges[k] + frac * (grid.edges[k + 1] - grid.edges[k]));
                    }
                    return -grid.edges[k + 1];
                }
                cum = next;
            }
            return -grid.edges.back();
        }
    }
    throw std::logic_error("unknown family");
}

ModelPointEval evaluate_point(const SurvivalModel& model, std::span<const double> x, double t,
                              bool want_grad) {
    MlpTrace trace;
    const std::vector<double> h = model.head(x, want_grad ? &trace : nullptr);
    const PointEval pe = model.eval_at(h, t, want_grad);
    ModelPointEval out;
    out.cdf = pe.cdf;
    out.survival = pe.survival;
    out.log_density = pe.log_density;
    out.log_survival = pe.log_survival;
    out.grid_clamped = pe.grid_clamped;
    if (want_grad) {
        out.dcdf_dtheta.assign(model.n_params(), 0.0);
        out.dlogf_dtheta.assign(model.n_params(), 0.0);
        model.accumulate_param_grad(trace, pe.dcdf, out.dcdf_dtheta);
        model.accumulate_param_grad(trace, pe.dlogf, out.dlogf_dtheta);
    }
    return out;
}

void SurvivalModel::save(const std::string& path) const {
    nlohmann::json doc;
    doc["family"] = family_name(family);
    doc["interpolate"] = interpolate;
    doc["grid"] = grid.edges;
    doc["net"] = {{"input_dim", net.input_dim}, {"hidden", net.hidden},
                  {"output_dim", net.output_dim}};
    doc["theta"] = theta;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << doc.dump(2) << '\n';
}

SurvivalModel SurvivalModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupted checkpoint " + path + ": " + e.what());
    }
    SurvivalModel m;
    try {
        m.family = family_from_name(doc.at("family").get<std::string>());
        m.interpolate = doc.at("interpolate").get<bool>();
        m.grid.edges = doc.at("grid").get<std::vector<double>>();
        m.net.input_dim = doc.at("net").at("input_dim").get<std::size_t>();
        m.net.hidden = doc.at("net").at("hidden").get<std::vector<std::size_t>>();
        m.net.output_dim = doc.at("net").at("output_dim").get<std::size_t>();
        m.theta = doc.at("theta").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupted checkpoint " + path + ": " + e.what());
    }
    const std::size_t expected =
        m.net.layout().total + (m.family == Family::weibull ? 1 : 0);
    if (m.theta.size() != expected) throw DataError("checkpoint parameter count mismatch");
    if (m.family == Family::categorical || m.family == Family::mtlr) {
        m.grid.validate();
        const std::size_t want =
            m.family == Family::categorical ? m.grid.n_bins() : m.grid.n_bins() - 1;
        if (m.net.output_dim != want) throw DataError("checkpoint grid/head mismatch");
    }
    return m;
}

}  // namespace survcal
