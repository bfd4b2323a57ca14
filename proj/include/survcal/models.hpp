#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "survcal/data.hpp"
#include "survcal/params.hpp"

namespace survcal {

enum class Family { lognormal, weibull, categorical, mtlr };

std::string family_name(Family f);
Family family_from_name(const std::string& name);

/// Discrete time bins: B_t+1 strictly ascending edges, first edge 0.
struct TimeGrid {
    std::vector<double> edges;

    std::size_t n_bins() const { return edges.empty() ? 0 : edges.size() - 1; }
    /// Bin of t (half-open bins, last closed). Times beyond the last edge
    /// clamp to the last bin; *clamped reports that.
    std::size_t bin_of(double t, bool* clamped = nullptr) const;
    void validate() const;
};

/// Edge j is the (100*j/B_t)-th percentile of the uncensored times; edge 0 is
/// 0 and the last edge is the largest uncensored time. Duplicate percentiles
/// are nudged right by an epsilon-scale step.
TimeGrid quantile_bin_edges(const Dataset& data, std::size_t n_bins);

/// One model evaluation at (head outputs, t). Gradients are with respect to
/// the head vector (see SurvivalModel::head for its layout per family).
struct PointEval {
    double cdf = 0.0;
    double survival = 0.0;      // 1 - cdf
    double log_density = 0.0;   // log pdf (continuous) or log bin mass (discrete)
    double log_survival = 0.0;  // log survival used by the likelihood; staircase for discrete
    std::size_t bin = 0;        // discrete families
    bool grid_clamped = false;  // t beyond the last grid edge
    bool floor_clamped = false; // log_survival hit the 1e-12 floor (gradient zeroed)
    std::vector<double> dcdf;
    std::vector<double> dlogf;
    std::vector<double> dlogsurv;
};

/// Likelihood-survival floor: log arguments are clamped here and the clamp is
/// reported, with a zero gradient through the clamped branch.
inline constexpr double kSurvivalFloor = 1e-12;

struct SurvivalModel {
    Family family = Family::lognormal;
    MlpSpec net;
    std::vector<double> theta;  // net parameters; Weibull appends the free concentration scalar
    bool interpolate = false;   // discrete families: within-bin linear CDF
    TimeGrid grid;              // discrete families only

    static SurvivalModel make(Family family, std::size_t input_dim,
                              const std::vector<std::size_t>& hidden, std::uint64_t init_seed,
                              const TimeGrid& grid = {}, bool interpolate = false);

    std::size_t n_params() const { return theta.size(); }
    /// Dimension of the head vector consumed by eval_at: 2 for the continuous
    /// families (Weibull's second entry is the concentration scalar), B_t for
    /// categorical, B_t-1 for MTLR.
    std::size_t head_dim() const;

    /// Head outputs for covariates x. Pass a trace to enable
    /// accumulate_param_grad afterwards.
    std::vector<double> head(std::span<const double> x, MlpTrace* trace = nullptr,
                             const DropoutPlan* dropout = nullptr,
                             std::uint64_t sample_tag = 0) const;

    /// CDF / survival / log-density at time t given head outputs. want_grad
    /// fills the d*/dhead vectors. interpolate_override forces the discrete
    /// CDF convention (the likelihood always uses the staircase).
    PointEval eval_at(std::span<const double> head_values, double t, bool want_grad) const;
    PointEval eval_at(std::span<const double> head_values, double t, bool want_grad,
                      bool interpolate_override) const;

    /// Routes a d/dhead vector into d/dtheta through the recorded trace.
    void accumulate_param_grad(const MlpTrace& trace, std::span<const double> dhead,
                               std::span<double> grad) const;

    /// Negated predicted median time; higher score means higher risk.
    double risk_score(std::span<const double> x) const;

    void save(const std::string& path) const;
    static SurvivalModel load(const std::string& path);
};

/// Convenience eval with full parameter gradients (one backward per call).
struct ModelPointEval {
    double cdf = 0.0;
    double survival = 0.0;
    double log_density = 0.0;
    double log_survival = 0.0;
    bool grid_clamped = false;
    std::vector<double> dcdf_dtheta;
    std::vector<double> dlogf_dtheta;
};
ModelPointEval evaluate_point(const SurvivalModel& model, std::span<const double> x, double t,
                              bool want_grad = true);

// Head-level closed forms, exposed for direct checks against hand values.
PointEval lognormal_point(double mu, double log_sigma, double t, bool want_grad);
PointEval weibull_point(double beta_head, double kappa, double t, bool want_grad);
/// Weibull CDF/log-pdf/survival at raw (scale, concentration), bypassing the
/// head mappings scale = exp(h)+1 and concentration = 1+sigmoid(kappa).
PointEval weibull_direct(double scale, double concentration, double t);

std::vector<double> softmax(std::span<const double> logits);
/// Bin masses of the suffix-sum parameterization: logit k is the sum of
/// scores k..K-2, the last logit is 0.
std::vector<double> suffix_sum_masses(std::span<const double> scores);

}  // namespace survcal
