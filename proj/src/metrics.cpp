#include "survcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "survcal/losses.hpp"
#include "survcal/xcal.hpp"

namespace survcal {

namespace {

void check_unit_interval(std::span<const double> values) {
    for (const double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw std::invalid_argument("CDF value outside [0,1]");
        }
    }
}

}  // namespace

double exact_dcal(std::span<const double> cdf_values, const BinScheme& bins) {
    if (cdf_values.empty()) throw std::invalid_argument("exact_dcal: empty input");
    check_unit_interval(cdf_values);
    std::vector<double> count(bins.bins(), 0.0);
    for (const double v : cdf_values) count[bins.hard_bin(v)] += 1.0;
    const double n = static_cast<double>(cdf_values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < bins.bins(); ++i) {
        const double r = count[i] / n - bins.width(i);
        total += r * r;
    }
    return total;
}

double censored_exact_dcal(std::span<const double> cdf_values, const std::vector<bool>& events,
                           const BinScheme& bins, std::size_t* cens_clamps) {
    if (cdf_values.empty()) throw std::invalid_argument("censored_exact_dcal: empty input");
    if (events.size() != cdf_values.size()) {
        throw std::invalid_argument("censored_exact_dcal: flag count mismatch");
    }
    check_unit_interval(cdf_values);
    if (cens_clamps != nullptr) *cens_clamps = 0;

    std::vector<double> mass(bins.bins(), 0.0);
    for (std::size_t j = 0; j < cdf_values.size(); ++j) {
        if (events[j]) {
            mass[bins.hard_bin(cdf_values[j])] += 1.0;
            continue;
        }
        double f = cdf_values[j];
        if (f > 1.0 - kCensGuard) {
            f = 1.0 - kCensGuard;
            if (cens_clamps != nullptr) ++*cens_clamps;
        }
        const double rem = 1.0 - f;
        const std::size_t own = bins.hard_bin(f);
        mass[own] += (bins.upper(own) - f) / rem;
        for (std::size_t i = own + 1; i < bins.bins(); ++i) mass[i] += bins.width(i) / rem;
    }
    const double n = static_cast<double>(cdf_values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < bins.bins(); ++i) {
        const double r = mass[i] / n - bins.width(i);
        total += r * r;
    }
    return total;
}

Chi2Result chi2_calibration_test(std::span<const double> probabilities,
                                 const std::vector<bool>& events, std::size_t k_groups) {
    const std::size_t n = probabilities.size();
    if (k_groups < 2) throw std::invalid_argument("chi2 test needs at least two groups");
    if (n < k_groups) throw std::invalid_argument("chi2 test: more groups than points");
    if (events.size() != n) throw std::invalid_argument("chi2 test: flag count mismatch");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probabilities[a] < probabilities[b]; });

    Chi2Result out;
    for (std::size_t k = 0; k < k_groups; ++k) {
        const std::size_t lo = k * n / k_groups;
        const std::size_t hi = (k + 1) * n / k_groups;
        Chi2Group g;
        g.count = hi - lo;
        for (std::size_t p = lo; p < hi; ++p) {
            const std::size_t j = order[p];
            g.observed += events[j] ? 1.0 : 0.0;
            g.expected += probabilities[j];
        }
        g.mean_p = g.expected / static_cast<double>(g.count);
        if (g.mean_p <= 0.0 || g.mean_p >= 1.0) {
            throw std::invalid_argument("chi2 test: degenerate group probability");
        }
        const double diff = g.observed - g.expected;
        out.statistic += diff * diff / (static_cast<double>(g.count) * g.mean_p * (1.0 - g.mean_p));
        out.groups.push_back(g);
    }
    return out;
}

namespace {

struct PairCounts {
    unsigned long long concordant2 = 0;  // 2*concordant + ties
    unsigned long long pairs = 0;
};

PairCounts count_pairs_brute(std::span<const double> times, const std::vector<bool>& events,
                             std::span<const double> risks) {
    PairCounts out;
    const std::size_t n = times.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (!(times[i] < times[j])) continue;
            ++out.pairs;
            if (risks[i] > risks[j]) out.concordant2 += 2;
            else if (risks[i] == risks[j]) out.concordant2 += 1;
        }
    }
    return out;
}

class Fenwick {
public:
    explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
    void add(std::size_t pos) {
        for (std::size_t i = pos + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
    }
    // count of inserted ranks <= pos
    unsigned long long prefix(std::size_t pos) const {
        unsigned long long s = 0;
        for (std::size_t i = pos + 1; i > 0; i -= i & (~i + 1)) s += tree_[i];
        return s;
    }

private:
    std::vector<unsigned long long> tree_;
};

PairCounts count_pairs_fast(std::span<const double> times, const std::vector<bool>& events,
                            std::span<const double> risks) {
    const std::size_t n = times.size();
    std::vector<double> sorted_risks(risks.begin(), risks.end());
    std::sort(sorted_risks.begin(), sorted_risks.end());
    sorted_risks.erase(std::unique(sorted_risks.begin(), sorted_risks.end()),
                       sorted_risks.end());
    const auto rank_of = [&](double r) {
        return static_cast<std::size_t>(
            std::lower_bound(sorted_risks.begin(), sorted_risks.end(), r) -
            sorted_risks.begin());
    };

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

    Fenwick tree(sorted_risks.size());
    unsigned long long inserted_events = 0;
    PairCounts out;
    std::size_t pos = 0;
    while (pos < n) {
        std::size_t end = pos;
        while (end < n && times[order[end]] == times[order[pos]]) ++end;
        // Compare the whole equal-time group against strictly earlier events.
        for (std::size_t p = pos; p < end; ++p) {
            const std::size_t j = order[p];
            out.pairs += inserted_events;
            const std::size_t r = rank_of(risks[j]);
            const unsigned long long le = tree.prefix(r);
            const unsigned long long lt = r == 0 ? 0 : tree.prefix(r - 1);
            out.concordant2 += 2 * (inserted_events - le) + (le - lt);
        }
        for (std::size_t p = pos; p < end; ++p) {
            const std::size_t j = order[p];
            if (events[j]) {
                tree.add(rank_of(risks[j]));
                ++inserted_events;
            }
        }
        pos = end;
    }
    return out;
}

double pair_fraction(const PairCounts& c) {
    if (c.pairs == 0) throw std::invalid_argument("concordance: no comparable pairs");
    return static_cast<double>(c.concordant2) / (2.0 * static_cast<double>(c.pairs));
}

}  // namespace

double concordance(std::span<const double> times, const std::vector<bool>& events,
                   std::span<const double> risks) {
    if (times.size() != events.size() || times.size() != risks.size()) {
        throw std::invalid_argument("concordance: length mismatch");
    }
    return pair_fraction(count_pairs_fast(times, events, risks));
}

double concordance_brute(std::span<const double> times, const std::vector<bool>& events,
                         std::span<const double> risks) {
    if (times.size() != events.size() || times.size() != risks.size()) {
        throw std::invalid_argument("concordance: length mismatch");
    }
    return pair_fraction(count_pairs_brute(times, events, risks));
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json doc;
    doc["test_nll"] = test_nll;
    doc["dcal"] = dcal;
    if (has_censoring) doc["dcal_censored"] = dcal_censored;
    doc["has_censoring"] = has_censoring;
    doc["concordance"] = concordance;
    doc["n_test"] = n_test;
    doc["bins_used"] = bins_used;
    doc["grid_clamps"] = grid_clamps;
    doc["dataset"] = dataset;
    return doc;
}

MetricsReport evaluate(const SurvivalModel& model, const Dataset& data, const BinScheme& bins) {
    data.validate();
    const std::size_t n = data.size();
    std::vector<double> cdf(n);
    std::vector<double> times(n);
    std::vector<double> risks(n);
    std::vector<bool> events(n);

    MetricsReport report;
    for (std::size_t j = 0; j < n; ++j) {
        const Observation& obs = data.observations[j];
        const std::vector<double> h = model.head(obs.covariates);
        const PointEval pe = model.eval_at(h, obs.time, false);
        cdf[j] = pe.cdf;
        if (pe.grid_clamped) ++report.grid_clamps;
        times[j] = obs.time;
        events[j] = obs.event;
        risks[j] = model.risk_score(obs.covariates);
    }

    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    report.test_nll = nll_loss(model, data, all, false).value;
    report.has_censoring = data.has_censoring();
    if (report.has_censoring) {
        report.dcal_censored = censored_exact_dcal(cdf, events, bins);
        report.dcal = report.dcal_censored;
    } else {
        report.dcal = exact_dcal(cdf, bins);
        report.dcal_censored = report.dcal;
    }
    report.concordance = concordance(times, events, risks);
    report.n_test = n;
    report.bins_used = bins.bins();
    report.dataset = data.name;
    return report;
}

}  // namespace survcal
