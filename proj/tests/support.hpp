#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include <unistd.h>

#include "tsq/qsim.hpp"

namespace tsq::testing {

/// Uniform random circuit over every gate kind with angles in [-2pi, 2pi).
inline qsim::Circuit random_circuit(std::size_t n_qubits, std::size_t length, std::mt19937_64 &gen) {
    using namespace qsim;
    std::uniform_real_distribution<double> angle(-2.0 * std::numbers::pi, 2.0 * std::numbers::pi);
    std::uniform_int_distribution<std::size_t> kind_pick(0, kAllGateKinds.size() - 1);
    std::uniform_int_distribution<std::size_t> qubit(0, n_qubits - 1);
    Circuit c{n_qubits, {}};
    while (c.ops.size() < length) {
        const GateKind kind = kAllGateKinds[kind_pick(gen)];
        if (qubit_arity(kind) == 2 && n_qubits < 2) {
            continue;
        }
        double a[3] = {angle(gen), angle(gen), angle(gen)};
        const std::span<const double> params(a, angle_arity(kind));
        if (qubit_arity(kind) == 1) {
            c.ops.push_back(GateOp::single(kind, qubit(gen), params));
        } else {
            const std::size_t control = qubit(gen);
            std::size_t target = qubit(gen);
            while (target == control) {
                target = qubit(gen);
            }
            c.ops.push_back(GateOp::controlled(kind, control, target, params));
        }
    }
    return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
    const auto dir = std::filesystem::temp_directory_path() /
                     ("tsq_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace tsq::testing

#include "tsq/nn.hpp"
#include "tsq/rng.hpp"

namespace tsq::testing {

/// Input 8x8x4 -> Conv(2) -> MaxPool -> Flatten -> Dense(8, relu) -> Dense(3).
inline nn::ModelSpec gradient_check_spec() {
    return {{8, 8, 4, false},
            {nn::Conv2D{2, nn::Activation::Relu}, nn::MaxPool2{}, nn::Flatten{},
             nn::Dense{8, nn::Activation::Relu}, nn::Dense{3, nn::Activation::None}}};
}

struct GradientCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t worst_param = 0, worst_index = 0;
};

/// Compares backprop against float64 central differences for every scalar
/// parameter. Where both values are below `floor` in magnitude the error is
/// divided by `floor * 1e3` rather than by the (near-zero) gradient itself.
inline GradientCheck gradient_check(std::uint64_t seed, double h = 1e-5, double floor = 1e-7) {
    const auto spec = gradient_check_spec();
    nn::Network<double> net(spec, seed);
    Xoshiro256pp rng(derive_seed(seed, 7));
    // Small random biases so no ReLU sits exactly at its kink.
    for (auto *p : net.params()) {
        if (p->shape.size() == 1) {
            for (Eigen::Index i = 0; i < p->value.size(); ++i) {
                p->value[i] = rng.uniform(-0.1, 0.1);
            }
        }
    }
    const std::size_t n = 3;
    nn::Tensor<double> x({n, 8, 8, 4});
    for (Eigen::Index i = 0; i < x.values.size(); ++i) {
        x.values[i] = rng.uniform(-1.0, 1.0);
    }
    nn::RowMatrix<double> onehot = nn::RowMatrix<double>::Zero(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
        onehot(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i % 3)) = 1.0;
    }
    auto loss_at = [&] { return nn::softmax_cross_entropy(net.infer(x), onehot).loss; };

    net.zero_grad();
    const auto logits = net.forward(x, true, 0);
    net.backward(nn::softmax_cross_entropy(logits, onehot).grad);

    GradientCheck out;
    auto params = net.params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto &p = *params[pi];
        for (Eigen::Index i = 0; i < p.value.size(); ++i) {
            const double keep = p.value[i];
            p.value[i] = keep + h;
            const double up = loss_at();
            p.value[i] = keep - h;
            const double down = loss_at();
            p.value[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double analytic = p.grad[i];
            const double scale = std::max(std::abs(numeric), std::abs(analytic));
            const double err = scale < floor ? std::abs(numeric - analytic) / (floor * 1e3)
                                             : std::abs(numeric - analytic) / scale;
            if (err > out.max_rel_error) {
                out.max_rel_error = err;
                out.worst_param = pi;
                out.worst_index = static_cast<std::size_t>(i);
            }
            ++out.checked;
        }
    }
    return out;
}

} // namespace tsq::testing
