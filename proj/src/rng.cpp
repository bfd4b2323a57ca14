#include "survcal/rng.hpp"

#include <stdexcept>

namespace survcal {

namespace {

// shape >= 1 case of Marsaglia-Tsang (2000)
double gamma_shape_ge1(double alpha, Rng& rng) {
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x;
        double v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace

double gamma_sample(double alpha, double beta, Rng& rng) {
    if (!(alpha > 0.0) || !(beta > 0.0))
        throw std::invalid_argument("gamma_sample: alpha and beta must be positive");
    if (alpha >= 1.0) return gamma_shape_ge1(alpha, rng) / beta;
    // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
    const double g = gamma_shape_ge1(alpha + 1.0, rng);
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    return g * std::pow(u, 1.0 / alpha) / beta;
}

}  // namespace survcal
