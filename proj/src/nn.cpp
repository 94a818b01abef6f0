#include "stopbed/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "stopbed/rng.hpp"

namespace stopbed {

DenseNet DenseNet::make(const std::vector<int>& layer_sizes, std::uint64_t seed) {
    if (layer_sizes.size() < 2) {
        throw std::invalid_argument("a network needs at least input and output layers");
    }
    for (int s : layer_sizes) {
        if (s < 1) throw std::invalid_argument("layer sizes must be >= 1");
    }
    DenseNet net;
    net.sizes = layer_sizes;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
        const int fan_in = layer_sizes[l];
        const int fan_out = layer_sizes[l + 1];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
        for (double& v : w) v = rng.uniform(-bound, bound);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(static_cast<std::size_t>(fan_out), 0.0);
    }
    return net;
}

std::vector<double> DenseNet::forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != input_size()) {
        throw std::invalid_argument("input size mismatch");
    }
    std::vector<double> act(x.begin(), x.end());
    std::vector<double> next;
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const int in = sizes[l];
        const int out = sizes[l + 1];
        const double* w = weights[l].data();
        next.assign(static_cast<std::size_t>(out), 0.0);
        for (int j = 0; j < out; ++j) {
            double z = biases[l][static_cast<std::size_t>(j)];
            const double* row = w + static_cast<std::size_t>(j) * in;
            for (int i = 0; i < in; ++i) z += row[i] * act[static_cast<std::size_t>(i)];
            const bool hidden = l + 1 < layer_count();
            next[static_cast<std::size_t>(j)] = hidden ? (z > 0.0 ? z : 0.0) : z;
        }
        act.swap(next);
    }
    return act;
}

bool DenseNet::finite() const {
    for (const auto& w : weights) {
        for (double v : w) {
            if (!std::isfinite(v)) return false;
        }
    }
    for (const auto& b : biases) {
        for (double v : b) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

ParamGradients ParamGradients::zeros_like(const DenseNet& net) {
    ParamGradients g;
    for (const auto& w : net.weights) g.weights.emplace_back(w.size(), 0.0);
    for (const auto& b : net.biases) g.biases.emplace_back(b.size(), 0.0);
    return g;
}

void ParamGradients::accumulate(const ParamGradients& other, double scale) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
        for (std::size_t i = 0; i < weights[l].size(); ++i) {
            weights[l][i] += scale * other.weights[l][i];
        }
        for (std::size_t i = 0; i < biases[l].size(); ++i) {
            biases[l][i] += scale * other.biases[l][i];
        }
    }
}

void ParamGradients::scale(double factor) {
    for (auto& w : weights) {
        for (double& v : w) v *= factor;
    }
    for (auto& b : biases) {
        for (double& v : b) v *= factor;
    }
}

double ParamGradients::l2_norm() const {
    double sq = 0.0;
    for (const auto& w : weights) {
        for (double v : w) sq += v * v;
    }
    for (const auto& b : biases) {
        for (double v : b) sq += v * v;
    }
    return std::sqrt(sq);
}

bool ParamGradients::finite() const {
    for (const auto& w : weights) {
        for (double v : w) {
            if (!std::isfinite(v)) return false;
        }
    }
    for (const auto& b : biases) {
        for (double v : b) {
            if (!std::isfinite(v)) return false;
        }
    }
    return true;
}

void backprop(const DenseNet& net, std::span<const double> x, std::span<const double> upstream,
              ParamGradients* param_grads, std::vector<double>* input_grad) {
    if (static_cast<int>(x.size()) != net.input_size()) {
        throw std::invalid_argument("input size mismatch");
    }
    if (static_cast<int>(upstream.size()) != net.output_size()) {
        throw std::invalid_argument("upstream size mismatch");
    }
    const std::size_t layers = net.layer_count();

    // Forward pass, keeping pre-activations per layer.
    std::vector<std::vector<double>> acts(layers + 1);
    std::vector<std::vector<double>> pre(layers);
    acts[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
        const int in = net.sizes[l];
        const int out = net.sizes[l + 1];
        const double* w = net.weights[l].data();
        pre[l].assign(static_cast<std::size_t>(out), 0.0);
        acts[l + 1].assign(static_cast<std::size_t>(out), 0.0);
        const bool hidden = l + 1 < layers;
        for (int j = 0; j < out; ++j) {
            double z = net.biases[l][static_cast<std::size_t>(j)];
            const double* row = w + static_cast<std::size_t>(j) * in;
            for (int i = 0; i < in; ++i) z += row[i] * acts[l][static_cast<std::size_t>(i)];
            pre[l][static_cast<std::size_t>(j)] = z;
            acts[l + 1][static_cast<std::size_t>(j)] = hidden ? (z > 0.0 ? z : 0.0) : z;
        }
    }

    // Reverse pass.
    std::vector<double> delta(upstream.begin(), upstream.end());
    std::vector<double> delta_prev;
    for (std::size_t l = layers; l-- > 0;) {
        const int in = net.sizes[l];
        const int out = net.sizes[l + 1];
        const bool hidden = l + 1 < layers;
        if (hidden) {
            for (int j = 0; j < out; ++j) {
                if (pre[l][static_cast<std::size_t>(j)] <= 0.0) {
                    delta[static_cast<std::size_t>(j)] = 0.0;
                }
            }
        }
        if (param_grads) {
            auto& gw = param_grads->weights[l];
            auto& gb = param_grads->biases[l];
            for (int j = 0; j < out; ++j) {
                const double d = delta[static_cast<std::size_t>(j)];
                gb[static_cast<std::size_t>(j)] += d;
                double* grow = gw.data() + static_cast<std::size_t>(j) * in;
                const double* arow = acts[l].data();
                for (int i = 0; i < in; ++i) grow[i] += d * arow[i];
            }
        }
        if (l > 0 || input_grad) {
            delta_prev.assign(static_cast<std::size_t>(in), 0.0);
            const double* w = net.weights[l].data();
            for (int j = 0; j < out; ++j) {
                const double d = delta[static_cast<std::size_t>(j)];
                if (d == 0.0) continue;
                const double* row = w + static_cast<std::size_t>(j) * in;
                for (int i = 0; i < in; ++i) delta_prev[static_cast<std::size_t>(i)] += d * row[i];
            }
            delta.swap(delta_prev);
        }
    }
    if (input_grad) *input_grad = std::move(delta);
}

ParamGradients grad_params(const DenseNet& net, std::span<const double> x,
                           std::span<const double> upstream) {
    ParamGradients g = ParamGradients::zeros_like(net);
    backprop(net, x, upstream, &g, nullptr);
    return g;
}

std::vector<double> grad_input(const DenseNet& net, std::span<const double> x) {
    if (net.output_size() != 1) {
        throw std::logic_error("grad_input requires a scalar-output network");
    }
    const double one = 1.0;
    std::vector<double> g;
    backprop(net, x, std::span<const double>(&one, 1), nullptr, &g);
    return g;
}

Optimizer Optimizer::sgd(double lr) {
    Optimizer o;
    o.kind = Kind::Sgd;
    o.learning_rate = lr;
    return o;
}

Optimizer Optimizer::adam(double lr) {
    Optimizer o;
    o.kind = Kind::Adam;
    o.learning_rate = lr;
    return o;
}

void apply_update(DenseNet& net, const ParamGradients& grads, Optimizer& opt,
                  UpdateDirection direction) {
    if (!(opt.learning_rate > 0.0)) {
        throw std::invalid_argument("learning rate must be > 0");
    }
    if (grads.weights.size() != net.weights.size()) {
        throw std::invalid_argument("gradient shape mismatch");
    }
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        if (grads.weights[l].size() != net.weights[l].size() ||
            grads.biases[l].size() != net.biases[l].size()) {
            throw std::invalid_argument("gradient shape mismatch");
        }
    }
    if (!grads.finite()) {
        throw std::invalid_argument("update rejected: non-finite gradient");
    }

    const double sign = direction == UpdateDirection::Ascent ? 1.0 : -1.0;
    opt.step_count += 1;

    if (opt.kind == Optimizer::Kind::Sgd) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            for (std::size_t i = 0; i < net.weights[l].size(); ++i) {
                net.weights[l][i] += sign * opt.learning_rate * grads.weights[l][i];
            }
            for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
                net.biases[l][i] += sign * opt.learning_rate * grads.biases[l][i];
            }
        }
        return;
    }

    if (opt.m_w.empty()) {
        for (const auto& w : net.weights) {
            opt.m_w.emplace_back(w.size(), 0.0);
            opt.v_w.emplace_back(w.size(), 0.0);
        }
        for (const auto& b : net.biases) {
            opt.m_b.emplace_back(b.size(), 0.0);
            opt.v_b.emplace_back(b.size(), 0.0);
        }
    }
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));
    auto adam_step = [&](double& param, double g, double& m, double& v) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        param += sign * opt.learning_rate * mhat / (std::sqrt(vhat) + opt.epsilon);
    };
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        for (std::size_t i = 0; i < net.weights[l].size(); ++i) {
            adam_step(net.weights[l][i], grads.weights[l][i], opt.m_w[l][i], opt.v_w[l][i]);
        }
        for (std::size_t i = 0; i < net.biases[l].size(); ++i) {
            adam_step(net.biases[l][i], grads.biases[l][i], opt.m_b[l][i], opt.v_b[l][i]);
        }
    }
}

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x53424e43;  // "SBNC"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const DenseNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    write_raw(out, kCheckpointMagic);
    write_raw(out, kCheckpointVersion);
    const std::uint32_t n_sizes = static_cast<std::uint32_t>(net.sizes.size());
    write_raw(out, n_sizes);
    for (int s : net.sizes) {
        const std::int32_t v = s;
        write_raw(out, v);
    }
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        out.write(reinterpret_cast<const char*>(net.weights[l].data()),
                  static_cast<std::streamsize>(net.weights[l].size() * sizeof(double)));
        out.write(reinterpret_cast<const char*>(net.biases[l].data()),
                  static_cast<std::streamsize>(net.biases[l].size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

DenseNet load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    std::uint32_t magic = 0, version = 0, n_sizes = 0;
    read_raw(in, magic);
    read_raw(in, version);
    if (!in || magic != kCheckpointMagic) {
        throw std::runtime_error("not a checkpoint file: " + path);
    }
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version in " + path);
    }
    read_raw(in, n_sizes);
    if (!in || n_sizes < 2 || n_sizes > 64) {
        throw std::runtime_error("corrupt checkpoint header: " + path);
    }
    DenseNet net;
    net.sizes.resize(n_sizes);
    for (auto& s : net.sizes) {
        std::int32_t v = 0;
        read_raw(in, v);
        if (!in || v < 1) throw std::runtime_error("corrupt checkpoint sizes: " + path);
        s = v;
    }
    for (std::size_t l = 0; l + 1 < net.sizes.size(); ++l) {
        const std::size_t in_n = static_cast<std::size_t>(net.sizes[l]);
        const std::size_t out_n = static_cast<std::size_t>(net.sizes[l + 1]);
        net.weights.emplace_back(in_n * out_n);
        net.biases.emplace_back(out_n);
        in.read(reinterpret_cast<char*>(net.weights.back().data()),
                static_cast<std::streamsize>(in_n * out_n * sizeof(double)));
        in.read(reinterpret_cast<char*>(net.biases.back().data()),
                static_cast<std::streamsize>(out_n * sizeof(double)));
    }
    if (!in) throw std::runtime_error("corrupt checkpoint payload: " + path);
    return net;
}

std::vector<double> BoxSquash::apply(std::span<const double> raw) const {
    if (raw.size() != lo.size() || lo.size() != hi.size()) {
        throw std::invalid_argument("squash dimension mismatch");
    }
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = lo[i] + (hi[i] - lo[i]) * 0.5 * (std::tanh(raw[i]) + 1.0);
    }
    return out;
}

std::vector<double> BoxSquash::derivative(std::span<const double> raw) const {
    if (raw.size() != lo.size() || lo.size() != hi.size()) {
        throw std::invalid_argument("squash dimension mismatch");
    }
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double t = std::tanh(raw[i]);
        out[i] = (hi[i] - lo[i]) * 0.5 * (1.0 - t * t);
    }
    return out;
}

}  // namespace stopbed
