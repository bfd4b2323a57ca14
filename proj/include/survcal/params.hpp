#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace survcal {

/// Named slice view into a flat parameter vector.
struct ParamSlice {
    std::string name;
    std::size_t offset = 0;
    std::size_t rows = 0;  // output features (1 for bias/scalars)
    std::size_t cols = 0;  // input features (1 for bias/scalars)

    std::size_t count() const { return rows * cols; }
};

struct ParamLayout {
    std::vector<ParamSlice> slices;
    std::size_t total = 0;

    const ParamSlice& find(const std::string& name) const;
    std::size_t add(const std::string& name, std::size_t rows, std::size_t cols);
};

/// Feedforward rectifier network shape: affine layers with ReLU between them,
/// linear head. hidden may be empty (plain affine map).
struct MlpSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 0;

    ParamLayout layout() const;
    std::size_t n_layers() const { return hidden.size() + 1; }
};

/// Inverted dropout applied after each hidden activation. Masks are a pure
/// function of (seed, sample_tag), so repeated forwards of the same sample in
/// the same plan see identical masks.
struct DropoutPlan {
    double rate = 0.0;
    std::uint64_t seed = 0;
};

/// Activation record for one forward evaluation, consumed by mlp_backward.
struct MlpTrace {
    std::vector<double> input;
    std::vector<std::vector<double>> pre;    // per layer, before activation
    std::vector<std::vector<double>> post;   // per hidden layer, after relu+dropout
    std::vector<std::vector<double>> mask;   // dropout scale per hidden unit (empty = none)
};

std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed);

std::vector<double> mlp_forward(const MlpSpec& spec, std::span<const double> theta,
                                std::span<const double> x, MlpTrace* trace = nullptr,
                                const DropoutPlan* dropout = nullptr,
                                std::uint64_t sample_tag = 0);

/// Accumulates d(upstream . head)/dtheta into grad (grad must have layout size).
void mlp_backward(const MlpSpec& spec, std::span<const double> theta, const MlpTrace& trace,
                  std::span<const double> upstream, std::span<double> grad);

/// Central differences (f(t+eps e_i) - f(t-eps e_i)) / (2 eps) per coordinate.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double eps);

}  // namespace survcal
