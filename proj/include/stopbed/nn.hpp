#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace stopbed {

// Dense feed-forward network, ReLU on hidden layers, identity output.
// Weights are row-major (out x in). Initialization is uniform with
// 1/sqrt(fan_in) scaling, fully determined by the seed; biases start at 0.
struct DenseNet {
    std::vector<int> sizes;                     // layer widths, input first
    std::vector<std::vector<double>> weights;   // one block per layer
    std::vector<std::vector<double>> biases;

    static DenseNet make(const std::vector<int>& layer_sizes, std::uint64_t seed);

    int input_size() const { return sizes.front(); }
    int output_size() const { return sizes.back(); }
    std::size_t layer_count() const { return weights.size(); }

    std::vector<double> forward(std::span<const double> x) const;

    bool finite() const;
};

struct ParamGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    static ParamGradients zeros_like(const DenseNet& net);
    void accumulate(const ParamGradients& other, double scale = 1.0);
    void scale(double factor);
    double l2_norm() const;
    bool finite() const;
};

// Gradient of <upstream, net(x)> with respect to every parameter.
ParamGradients grad_params(const DenseNet& net, std::span<const double> x,
                           std::span<const double> upstream);

// d(output)/dx for scalar-output networks.
std::vector<double> grad_input(const DenseNet& net, std::span<const double> x);

// Both gradients from a single reverse pass.
void backprop(const DenseNet& net, std::span<const double> x, std::span<const double> upstream,
              ParamGradients* param_grads, std::vector<double>* input_grad);

enum class UpdateDirection { Ascent, Descent };

// Plain SGD or adaptive-moment first-order updates with one shared step
// counter; moment buffers are sized lazily on first use.
struct Optimizer {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step_count = 0;

    std::vector<std::vector<double>> m_w, v_w, m_b, v_b;

    static Optimizer sgd(double lr);
    static Optimizer adam(double lr);
};

// Applies one update step in the given direction. Throws on non-finite
// gradients; the network is left untouched in that case.
void apply_update(DenseNet& net, const ParamGradients& grads, Optimizer& opt,
                  UpdateDirection direction);

// Versioned binary checkpoint, bit-exact round trip.
void save_checkpoint(const DenseNet& net, const std::string& path);
DenseNet load_checkpoint(const std::string& path);

// Smooth map from unconstrained outputs into a per-axis box via scaled tanh.
struct BoxSquash {
    std::vector<double> lo, hi;

    std::vector<double> apply(std::span<const double> raw) const;
    // d(apply)/d(raw), diagonal.
    std::vector<double> derivative(std::span<const double> raw) const;
};

}  // namespace stopbed
