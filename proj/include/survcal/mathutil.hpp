#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace survcal {

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// d sigmoid / dx as sigmoid(x)*sigmoid(-x). The factored form keeps a
// nonzero subnormal-free value out to |x| ~ 700 where s*(1-s) would round
// to zero already near |x| ~ 37.
inline double sigmoid_deriv(double x) {
    return sigmoid(x) * sigmoid(-x);
}

inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z * 0.7071067811865475244);
}

inline double normal_pdf(double z) {
    return 0.3989422804014326779399461 * std::exp(-0.5 * z * z);
}

inline double log_normal_pdf_z(double z) {
    return -0.5 * z * z - 0.91893853320467274178032973640562;  // -log(sqrt(2*pi))
}

/// Percentile (q in 0..100) by linear interpolation of order statistics:
/// position (q/100)*(n-1) into the sorted sample.
double percentile_sorted(const std::vector<double>& sorted, double q);

/// Two-sample-free Kolmogorov-Smirnov distance of `values` against Unif(0,1).
double ks_distance_uniform01(std::vector<double> values);

std::uint64_t fnv1a64(std::string_view bytes);

/// exhaustive round-trip formatting of a double (shortest form)
std::string format_double(double v);

}  // namespace survcal
