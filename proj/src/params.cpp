#include "survcal/params.hpp"

#include <cmath>
#include <stdexcept>

#include "survcal/rng.hpp"

namespace survcal {

const ParamSlice& ParamLayout::find(const std::string& name) const {
    for (const auto& s : slices) {
        if (s.name == name) return s;
    }
    throw std::out_of_range("no parameter slice named '" + name + "'");
}

std::size_t ParamLayout::add(const std::string& name, std::size_t rows, std::size_t cols) {
    const std::size_t offset = total;
    slices.push_back({name, offset, rows, cols});
    total += rows * cols;
    return offset;
}

ParamLayout MlpSpec::layout() const {
    if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("mlp needs nonzero dims");
    ParamLayout out;
    std::size_t fan_in = input_dim;
    for (std::size_t l = 0; l < hidden.size(); ++l) {
        const std::string tag = std::to_string(l);
        out.add("w" + tag, hidden[l], fan_in);
        out.add("b" + tag, hidden[l], 1);
        fan_in = hidden[l];
    }
    const std::string tag = std::to_string(hidden.size());
    out.add("w" + tag, output_dim, fan_in);
    out.add("b" + tag, output_dim, 1);
    return out;
}

std::vector<double> init_params(const MlpSpec& spec, std::uint64_t seed) {
    const ParamLayout layout = spec.layout();
    std::vector<double> theta(layout.total, 0.0);
    Rng rng(seed, 0x1417u);
    for (const auto& s : layout.slices) {
        if (s.name[0] != 'w') continue;  // biases stay zero
        const double bound = std::sqrt(6.0 / static_cast<double>(s.rows + s.cols));
        for (std::size_t i = 0; i < s.count(); ++i) {
            theta[s.offset + i] = rng.uniform(-bound, bound);
        }
    }
    return theta;
}

namespace {

// Dropout scale for one hidden unit. Mixes the plan seed with the sample tag,
// layer and unit so masks are stable per sample across forwards.
double dropout_scale(const DropoutPlan& plan, std::uint64_t sample_tag, std::size_t layer,
                     std::size_t unit) {
    Rng rng(plan.seed, mix64(sample_tag + 0x9e37u) ^ mix64((layer << 32) | unit));
    return rng.uniform() < plan.rate ? 0.0 : 1.0 / (1.0 - plan.rate);
}

}  // namespace

std::vector<double> mlp_forward(const MlpSpec& spec, std::span<const double> theta,
                                std::span<const double> x, MlpTrace* trace,
                                const DropoutPlan* dropout, std::uint64_t sample_tag) {
    if (x.size() != spec.input_dim) throw std::invalid_argument("mlp_forward: input size mismatch");
    const ParamLayout layout = spec.layout();
    if (theta.size() != layout.total) throw std::invalid_argument("mlp_forward: theta size mismatch");

    if (trace != nullptr) {
        trace->input.assign(x.begin(), x.end());
        trace->pre.clear();
        trace->post.clear();
        trace->mask.clear();
    }

    std::vector<double> act(x.begin(), x.end());
    std::size_t cursor = 0;
    std::size_t fan_in = spec.input_dim;
    for (std::size_t l = 0; l < spec.n_layers(); ++l) {
        const bool last = l + 1 == spec.n_layers();
        const std::size_t fan_out = last ? spec.output_dim : spec.hidden[l];
        const double* w = theta.data() + cursor;
        const double* b = theta.data() + cursor + fan_out * fan_in;
        cursor += fan_out * fan_in + fan_out;

        std::vector<double> z(fan_out);
        for (std::size_t r = 0; r < fan_out; ++r) {
            double acc = b[r];
            const double* row = w + r * fan_in;
            for (std::size_t c = 0; c < fan_in; ++c) acc += row[c] * act[c];
            z[r] = acc;
        }
        if (trace != nullptr) trace->pre.push_back(z);
        if (last) return z;

        for (double& v : z) v = v > 0.0 ? v : 0.0;
        if (dropout != nullptr && dropout->rate > 0.0) {
            std::vector<double> mask(fan_out);
            for (std::size_t r = 0; r < fan_out; ++r) {
                mask[r] = dropout_scale(*dropout, sample_tag, l, r);
                z[r] *= mask[r];
            }
            if (trace != nullptr) trace->mask.push_back(std::move(mask));
        } else if (trace != nullptr) {
            trace->mask.emplace_back();
        }
        if (trace != nullptr) trace->post.push_back(z);
        act = std::move(z);
        fan_in = fan_out;
    }
    return act;  // unreachable
}

void mlp_backward(const MlpSpec& spec, std::span<const double> theta, const MlpTrace& trace,
                  std::span<const double> upstream, std::span<double> grad) {
    const ParamLayout layout = spec.layout();
    if (theta.size() != layout.total || grad.size() != layout.total) {
        throw std::invalid_argument("mlp_backward: size mismatch");
    }
    if (upstream.size() != spec.output_dim) {
        throw std::invalid_argument("mlp_backward: upstream size mismatch");
    }
    if (trace.pre.size() != spec.n_layers()) {
        throw std::invalid_argument("mlp_backward: trace does not match spec");
    }

    // Layer offsets into theta, front to back.
    std::vector<std::size_t> offsets(spec.n_layers());
    std::vector<std::size_t> fan_ins(spec.n_layers());
    {
        std::size_t cursor = 0;
        std::size_t fan_in = spec.input_dim;
        for (std::size_t l = 0; l < spec.n_layers(); ++l) {
            const std::size_t fan_out = l + 1 == spec.n_layers() ? spec.output_dim : spec.hidden[l];
            offsets[l] = cursor;
            fan_ins[l] = fan_in;
            cursor += fan_out * fan_in + fan_out;
            fan_in = fan_out;
        }
    }

    std::vector<double> delta(upstream.begin(), upstream.end());
    for (std::size_t li = spec.n_layers(); li-- > 0;) {
        const std::size_t fan_in = fan_ins[li];
        const std::size_t fan_out = li + 1 == spec.n_layers() ? spec.output_dim : spec.hidden[li];
        const std::vector<double>& in_act = li == 0 ? trace.input : trace.post[li - 1];
        const double* w = theta.data() + offsets[li];
        double* gw = grad.data() + offsets[li];
        double* gb = gw + fan_out * fan_in;

        for (std::size_t r = 0; r < fan_out; ++r) {
            const double d = delta[r];
            gb[r] += d;
            double* grow = gw + r * fan_in;
            for (std::size_t c = 0; c < fan_in; ++c) grow[c] += d * in_act[c];
        }
        if (li == 0) break;

        std::vector<double> next(fan_in, 0.0);
        for (std::size_t r = 0; r < fan_out; ++r) {
            const double d = delta[r];
            const double* row = w + r * fan_in;
            for (std::size_t c = 0; c < fan_in; ++c) next[c] += d * row[c];
        }
        // Pass through relu (and dropout scale) of the producing hidden layer.
        const std::vector<double>& z = trace.pre[li - 1];
        const std::vector<double>& mask = trace.mask[li - 1];
        for (std::size_t c = 0; c < fan_in; ++c) {
            double g = z[c] > 0.0 ? next[c] : 0.0;
            if (!mask.empty()) g *= mask[c];
            next[c] = g;
        }
        delta = std::move(next);
    }
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double eps) {
    std::vector<double> probe(theta.begin(), theta.end());
    std::vector<double> grad(theta.size());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double keep = probe[i];
        probe[i] = keep + eps;
        const double up = f(probe);
        probe[i] = keep - eps;
        const double down = f(probe);
        probe[i] = keep;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

}  // namespace survcal
