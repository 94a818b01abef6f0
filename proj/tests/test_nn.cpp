#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "stopbed/nn.hpp"
#include "stopbed/rng.hpp"
#include "stopbed/verify.hpp"

using namespace stopbed;

TEST_CASE("zero parameters give zero output") {
    DenseNet net = DenseNet::make({3, 4, 2}, 1);
    for (auto& w : net.weights) {
        for (double& v : w) v = 0.0;
    }
    const auto out = net.forward(std::vector<double>{1.0, -2.0, 3.0});
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("a single layer is an affine map") {
    DenseNet net = DenseNet::make({2, 2}, 2);
    net.weights[0] = {1.0, 2.0, 3.0, 4.0};  // rows (out x in)
    net.biases[0] = {0.5, -0.5};
    const auto out = net.forward(std::vector<double>{1.0, 1.0});
    CHECK(out[0] == doctest::Approx(3.5));
    CHECK(out[1] == doctest::Approx(6.5));
}

TEST_CASE("hidden ReLU clips negative pre-activations") {
    DenseNet net = DenseNet::make({1, 1, 1}, 3);
    net.weights[0] = {-1.0};
    net.weights[1] = {5.0};
    net.biases[0] = {0.0};
    net.biases[1] = {0.25};
    CHECK(net.forward(std::vector<double>{2.0})[0] == doctest::Approx(0.25));
    CHECK(net.forward(std::vector<double>{-2.0})[0] == doctest::Approx(10.25));
}

TEST_CASE("forward rejects dimension mismatches") {
    DenseNet net = DenseNet::make({3, 2}, 4);
    CHECK_THROWS_AS(net.forward(std::vector<double>{1.0}), std::invalid_argument);
}

TEST_CASE("initialization is reproducible from the seed") {
    const DenseNet a = DenseNet::make({5, 8, 1}, 42);
    const DenseNet b = DenseNet::make({5, 8, 1}, 42);
    const DenseNet c = DenseNet::make({5, 8, 1}, 43);
    CHECK(a.weights == b.weights);
    CHECK(a.biases == b.biases);
    CHECK(a.weights != c.weights);
}

TEST_CASE("gradients match central finite differences on 100 random nets") {
    const SuiteResult res = run_gradcheck_suite(2024, 100);
    INFO(res.detail);
    CHECK(res.pass);
}

TEST_CASE("zero upstream gives zero parameter gradients") {
    DenseNet net = DenseNet::make({3, 5, 2}, 5);
    const std::vector<double> x{0.3, -0.2, 0.9};
    const std::vector<double> upstream{0.0, 0.0};
    const ParamGradients g = grad_params(net, x, upstream);
    CHECK(g.l2_norm() == 0.0);
}

TEST_CASE("linear net gradients are the inputs and the weight row") {
    DenseNet net = DenseNet::make({3, 1}, 6);
    net.weights[0] = {0.5, -1.5, 2.0};
    net.biases[0] = {0.0};
    const std::vector<double> x{1.0, 2.0, 3.0};
    const std::vector<double> upstream{1.0};
    const ParamGradients g = grad_params(net, x, upstream);
    CHECK(g.weights[0][0] == doctest::Approx(1.0));
    CHECK(g.weights[0][1] == doctest::Approx(2.0));
    CHECK(g.weights[0][2] == doctest::Approx(3.0));
    CHECK(g.biases[0][0] == doctest::Approx(1.0));

    const auto gx = grad_input(net, x);
    CHECK(gx[0] == doctest::Approx(0.5));
    CHECK(gx[1] == doctest::Approx(-1.5));
    CHECK(gx[2] == doctest::Approx(2.0));
}

TEST_CASE("grad_input requires a scalar output") {
    DenseNet net = DenseNet::make({2, 3}, 7);
    CHECK_THROWS_AS(grad_input(net, std::vector<double>{0.0, 0.0}), std::logic_error);
}

TEST_CASE("an input behind dead ReLU paths gets zero gradient") {
    DenseNet net = DenseNet::make({2, 2, 1}, 8);
    // Second input feeds only units whose pre-activation stays negative.
    net.weights[0] = {1.0, 0.0, 0.0, 1.0};
    net.biases[0] = {0.0, -10.0};
    net.weights[1] = {1.0, 1.0};
    const auto gx = grad_input(net, std::vector<double>{1.0, 1.0});
    CHECK(gx[0] == doctest::Approx(1.0));
    CHECK(gx[1] == 0.0);
}

TEST_CASE("plain SGD moves parameters by lr * gradient in both directions") {
    DenseNet net = DenseNet::make({1, 1}, 9);
    net.weights[0] = {1.0};
    net.biases[0] = {0.0};
    ParamGradients g = ParamGradients::zeros_like(net);
    g.weights[0][0] = 2.0;
    Optimizer opt = Optimizer::sgd(0.1);
    apply_update(net, g, opt, UpdateDirection::Descent);
    CHECK(net.weights[0][0] == doctest::Approx(0.8));
    apply_update(net, g, opt, UpdateDirection::Ascent);
    CHECK(net.weights[0][0] == doctest::Approx(1.0));
    CHECK(opt.step_count == 2);

    ParamGradients zero = ParamGradients::zeros_like(net);
    apply_update(net, zero, opt, UpdateDirection::Descent);
    CHECK(net.weights[0][0] == doctest::Approx(1.0));
}

TEST_CASE("adaptive steps approach the learning rate on a constant gradient") {
    DenseNet net = DenseNet::make({1, 1}, 10);
    net.weights[0] = {0.0};
    ParamGradients g = ParamGradients::zeros_like(net);
    g.weights[0][0] = 0.37;
    Optimizer opt = Optimizer::adam(1e-2);
    double prev = net.weights[0][0];
    double step = 0.0;
    for (int i = 0; i < 200; ++i) {
        apply_update(net, g, opt, UpdateDirection::Descent);
        step = prev - net.weights[0][0];
        prev = net.weights[0][0];
    }
    CHECK(step == doctest::Approx(1e-2).epsilon(0.02));
}

TEST_CASE("updates reject non-finite gradients and leave the net untouched") {
    DenseNet net = DenseNet::make({2, 1}, 11);
    const auto saved = net.weights;
    ParamGradients g = ParamGradients::zeros_like(net);
    g.weights[0][0] = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt = Optimizer::sgd(0.1);
    CHECK_THROWS_AS(apply_update(net, g, opt, UpdateDirection::Descent), std::invalid_argument);
    CHECK(net.weights == saved);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const DenseNet net = DenseNet::make({7, 13, 5, 1}, 12345);
    const std::string path = std::filesystem::temp_directory_path() / "stopbed_ckpt_test.bin";
    save_checkpoint(net, path);
    const DenseNet loaded = load_checkpoint(path);
    CHECK(loaded.sizes == net.sizes);
    CHECK(loaded.weights == net.weights);
    CHECK(loaded.biases == net.biases);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), std::runtime_error);

    const std::string bad = std::filesystem::temp_directory_path() / "stopbed_ckpt_bad.bin";
    {
        std::ofstream out(bad, std::ios::binary);
        out << "garbage";
    }
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);

    save_checkpoint(net, bad);
    std::filesystem::resize_file(bad, std::filesystem::file_size(bad) / 2);
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
    std::filesystem::remove(bad);
}

TEST_CASE("box squash stays inside the box and its slope matches") {
    BoxSquash squash{{0.1, -0.25}, {3.0, 0.25}};
    Rng rng(15);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> raw{rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0)};
        const auto out = squash.apply(raw);
        CHECK(out[0] >= 0.1);
        CHECK(out[0] <= 3.0);
        CHECK(out[1] >= -0.25);
        CHECK(out[1] <= 0.25);
        const auto d = squash.derivative(raw);
        const double h = 1e-6;
        for (int a = 0; a < 2; ++a) {
            auto up = raw;
            up[static_cast<std::size_t>(a)] += h;
            auto dn = raw;
            dn[static_cast<std::size_t>(a)] -= h;
            const double fd = (squash.apply(up)[static_cast<std::size_t>(a)] -
                               squash.apply(dn)[static_cast<std::size_t>(a)]) /
                              (2.0 * h);
            CHECK(d[static_cast<std::size_t>(a)] == doctest::Approx(fd).epsilon(1e-5));
        }
    }
}

TEST_CASE("gradient ascent through the chain drives a quadratic to its peak") {
    // Objective f(out) = -(out - 2)^2 maximized by following upstream
    // -2 (out - 2) through grad_params, the same composition the policy
    // update uses.
    DenseNet net = DenseNet::make({1, 8, 1}, 77);
    Optimizer opt = Optimizer::adam(0.05);
    const std::vector<double> x{0.5};
    double out = 0.0;
    for (int i = 0; i < 400; ++i) {
        out = net.forward(x)[0];
        const std::vector<double> upstream{-2.0 * (out - 2.0)};
        apply_update(net, grad_params(net, x, upstream), opt, UpdateDirection::Ascent);
    }
    CHECK(net.forward(x)[0] == doctest::Approx(2.0).epsilon(1e-3));
}
