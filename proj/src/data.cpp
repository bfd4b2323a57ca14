#include "survcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "survcal/mathutil.hpp"
#include "survcal/rng.hpp"

namespace survcal {

bool Dataset::has_censoring() const {
    return std::any_of(observations.begin(), observations.end(),
                       [](const Observation& o) { return !o.event; });
}

void Dataset::validate() const {
    if (observations.empty()) throw DataError("dataset is empty");
    for (std::size_t i = 0; i < observations.size(); ++i) {
        const Observation& o = observations[i];
        if (!(o.time > 0.0) || !std::isfinite(o.time))
            throw DataError("nonpositive time at row " + std::to_string(i));
        if (o.covariates.size() != dim)
            throw DataError("covariate dimension mismatch at row " + std::to_string(i));
        for (double v : o.covariates)
            if (!std::isfinite(v))
                throw DataError("non-finite covariate at row " + std::to_string(i));
    }
}

BinScheme BinScheme::equal(std::size_t n_bins) {
    BinScheme s;
    s.edges.resize(n_bins + 1);
    for (std::size_t i = 0; i <= n_bins; ++i)
        s.edges[i] = static_cast<double>(i) / static_cast<double>(n_bins);
    s.edges.front() = 0.0;
    s.edges.back() = 1.0;
    s.validate();
    return s;
}

std::size_t BinScheme::hard_bin(double u) const {
    auto it = std::upper_bound(edges.begin(), edges.end(), u);
    std::size_t idx = static_cast<std::size_t>(it - edges.begin());
    if (idx == 0) return 0;                         // u < 0, clamp
    if (idx > bins()) return bins() - 1;            // u >= 1, last bin closed
    return idx - 1;
}

void BinScheme::validate() const {
    if (edges.size() < 3) throw DataError("bin scheme needs at least 2 bins");
    if (edges.front() != 0.0 || edges.back() != 1.0)
        throw DataError("bin edges must start at 0 and end at 1");
    for (std::size_t i = 1; i < edges.size(); ++i)
        if (!(edges[i] > edges[i - 1])) throw DataError("bin edges must be strictly ascending");
    if (!(soft_lower_extension < 0.0)) throw DataError("soft lower extension must be < 0");
    if (!(soft_upper_extension > 1.0)) throw DataError("soft upper extension must be > 1");
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_number(const std::string& field, std::size_t row) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(field, &used);
    } catch (const std::exception&) {
        throw DataError("non-numeric field '" + field + "' at row " + std::to_string(row));
    }
    if (used != field.size())
        throw DataError("non-numeric field '" + field + "' at row " + std::to_string(row));
    return v;
}

}  // namespace

Dataset load_dataset(const std::string& path, const std::string& format) {
    if (format != "csv") throw DataError("unknown dataset schema '" + format + "'");
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty dataset file: " + path);
    const auto header = split_line(line);
    if (header.size() < 3 || header[0] != "u" || header[1] != "delta")
        throw DataError("bad header, expected `u,delta,x1,...,xd`: " + path);
    const std::size_t dim = header.size() - 2;
    for (std::size_t j = 0; j < dim; ++j)
        if (header[2 + j] != "x" + std::to_string(j + 1))
            throw DataError("bad covariate column name '" + header[2 + j] + "'");

    Dataset out;
    out.dim = dim;
    out.name = path;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        const auto fields = split_line(line);
        if (fields.size() != dim + 2)
            throw DataError("wrong column count at row " + std::to_string(row));
        Observation o;
        o.time = parse_number(fields[0], row);
        if (!(o.time > 0.0)) throw DataError("nonpositive time at row " + std::to_string(row));
        const double delta = parse_number(fields[1], row);
        if (delta != 0.0 && delta != 1.0)
            throw DataError("delta must be 0 or 1 at row " + std::to_string(row));
        o.event = delta == 1.0;
        o.covariates.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) o.covariates[j] = parse_number(fields[2 + j], row);
        out.observations.push_back(std::move(o));
    }
    out.validate();
    return out;
}

void save_dataset(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    out << "u,delta";
    for (std::size_t j = 1; j <= data.dim; ++j) out << ",x" << j;
    out << '\n';
    for (const Observation& o : data.observations) {
        out << format_double(o.time) << ',' << (o.event ? 1 : 0);
        for (double v : o.covariates) out << ',' << format_double(v);
        out << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

Split split_dataset(const Dataset& data, const std::array<double, 3>& fractions,
                    std::uint64_t seed) {
    const double sum = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(sum - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");
    const std::size_t n = data.size();
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    const auto n_test = static_cast<std::size_t>(std::floor(fractions[2] * static_cast<double>(n)));
    if (n_val + n_test > n) throw DataError("split fractions exceed dataset");
    const std::size_t n_train = n - n_val - n_test;
    if (n_train == 0 || n_val == 0 || n_test == 0) throw DataError("empty part in split");

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed, /*tag=*/0x5eedu);
    rng.shuffle(perm.begin(), perm.end());

    Split s;
    auto take = [&](std::size_t lo, std::size_t hi, Dataset& part, std::vector<std::size_t>& idx) {
        idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                   perm.begin() + static_cast<std::ptrdiff_t>(hi));
        part.dim = data.dim;
        part.observations.reserve(hi - lo);
        for (std::size_t k : idx) part.observations.push_back(data.observations[k]);
    };
    take(0, n_train, s.train, s.train_indices);
    take(n_train, n_train + n_val, s.validation, s.validation_indices);
    take(n_train + n_val, n, s.test, s.test_indices);
    s.train.name = data.name + ":train";
    s.validation.name = data.name + ":validation";
    s.test.name = data.name + ":test";
    return s;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch) {
    if (batch_size < 2) throw std::invalid_argument("batch_size must be >= 2");
    if (n == 0) throw DataError("cannot batch an empty dataset");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed, 0xba7c000000000000ULL + epoch);
    rng.shuffle(perm.begin(), perm.end());

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t lo = 0; lo < n; lo += batch_size) {
        const std::size_t hi = std::min(n, lo + batch_size);
        batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                             perm.begin() + static_cast<std::ptrdiff_t>(hi));
    }
    return batches;
}

void save_split_indices(const Split& split, const std::string& path) {
    nlohmann::json j;
    j["train"] = split.train_indices;
    j["validation"] = split.validation_indices;
    j["test"] = split.test_indices;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write split manifest: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace survcal
