#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace survcal {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One right-censored datapoint: covariates, observed time min(t, c), and the
/// event flag (true when the failure itself was observed).
struct Observation {
    std::vector<double> covariates;
    double time = 0.0;
    bool event = true;
};

struct Dataset {
    std::vector<Observation> observations;
    std::size_t dim = 0;
    std::string name;

    std::size_t size() const { return observations.size(); }
    bool has_censoring() const;

    /// Throws DataError on empty data, nonpositive/nonfinite times, or
    /// inconsistent covariate dimensions.
    void validate() const;
};

/// Disjoint contiguous cover of [0,1]. The soft extensions replace the first
/// interval's left edge and the last interval's right edge inside soft
/// membership arguments so that boundary CDF values keep a usable gradient.
struct BinScheme {
    std::vector<double> edges;            // ascending, edges.front()==0, edges.back()==1
    double soft_lower_extension = -1.0;   // < 0
    double soft_upper_extension = 2.0;    // > 1

    static BinScheme equal(std::size_t n_bins);

    std::size_t bins() const { return edges.size() - 1; }
    double lower(std::size_t i) const { return edges[i]; }
    double upper(std::size_t i) const { return edges[i + 1]; }
    double width(std::size_t i) const { return edges[i + 1] - edges[i]; }

    // Edges as seen by soft membership arguments. Mass prefactors keep the
    // true edges; only the sigmoid arguments use these.
    double soft_lower(std::size_t i) const { return i == 0 ? soft_lower_extension : edges[i]; }
    double soft_upper(std::size_t i) const {
        return i + 1 == bins() ? soft_upper_extension : edges[i + 1];
    }

    /// Hard-indicator bin of a value in [0,1]: half-open [a,b) everywhere
    /// except the last bin, which is closed.
    std::size_t hard_bin(double u) const;

    void validate() const;
};

struct Split {
    Dataset train;
    Dataset validation;
    Dataset test;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> validation_indices;
    std::vector<std::size_t> test_indices;
};

/// Supported on-disk schemas; "csv" is the `u,delta,x1,...,xd` table.
Dataset load_dataset(const std::string& path, const std::string& format = "csv");
void save_dataset(const Dataset& data, const std::string& path);

/// Seeded shuffle, then contiguous assignment. Validation/test sizes are
/// floor(fraction*n); the remainder goes to train. Throws if any part is empty.
Split split_dataset(const Dataset& data, const std::array<double, 3>& fractions,
                    std::uint64_t seed);

/// Fresh seeded permutation per (seed, epoch), sliced into batches; the final
/// short batch is retained. batch_size must be >= 2.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch);

void save_split_indices(const Split& split, const std::string& path);

}  // namespace survcal
