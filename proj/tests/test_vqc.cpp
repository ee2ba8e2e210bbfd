// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "qlstm/vqc.hpp"

using namespace qlstm;

namespace {

constexpr double kPi = std::numbers::pi;

VqcParams random_params(const VqcConfig& cfg, RngStream& rng, double scale = kPi) {
    VqcParams p = VqcParams::zeros(cfg);
    for (auto& a : p.angles) {
        a = rng.uniform(-scale, scale);
    }
    return p;
}

EncodedAngles random_encoding(int n, RngStream& rng) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) {
        x = rng.uniform(-2.0, 2.0);
    }
    return encode_angles(v);
}

// Weighted circuit output as a function of one perturbed angle, for the
// finite-difference oracle. kind: 0 = variational, 1 = theta_y, 2 = theta_z.
double weighted_output(const VqcConfig& cfg, VqcParams params, EncodedAngles enc,
                       const std::vector<double>& upstream, int kind, std::size_t index,
                       double delta) {
    if (kind == 0) {
        params.angles[index] += delta;
    } else if (kind == 1) {
        enc.theta_y[index] += delta;
    } else {
        enc.theta_z[index] += delta;
    }
    const auto out = vqc_forward(cfg, params, enc);
    double acc = 0.0;
    for (std::size_t q = 0; q < out.size(); ++q) {
        acc += upstream[q] * out[q];
    }
    return acc;
}

} // namespace

TEST_CASE("encode_angles maps v to (atan v, atan v^2)") {
    const auto zero = encode_angles({0.0, 0.0});
    CHECK(zero.theta_y == std::vector<double>{0.0, 0.0});
    CHECK(zero.theta_z == std::vector<double>{0.0, 0.0});

    const auto one = encode_angles({1.0});
    CHECK(one.theta_y[0] == Catch::Approx(kPi / 4.0).margin(1e-15));
    CHECK(one.theta_z[0] == Catch::Approx(kPi / 4.0).margin(1e-15));

    const auto minus_two = encode_angles({-2.0});
    CHECK(minus_two.theta_y[0] == Catch::Approx(std::atan(-2.0)).margin(1e-15));
    CHECK(minus_two.theta_z[0] == Catch::Approx(std::atan(4.0)).margin(1e-15));
    CHECK(minus_two.theta_y[0] == Catch::Approx(-1.10715).margin(1e-5));
    CHECK(minus_two.theta_z[0] == Catch::Approx(1.32582).margin(1e-5));

    CHECK_THROWS_AS(encode_angles({std::nan("")}), std::invalid_argument);
}

TEST_CASE("vqc_forward zero circuit returns zero expectations") {
    VqcConfig cfg;
    cfg.n_qubits = 2;
    cfg.n_layers = 1;
    const auto params = VqcParams::zeros(cfg);
    const auto enc = encode_angles({0.0, 0.0});
    const auto out = vqc_forward(cfg, params, enc);
    REQUIRE(out.size() == 2);
    CHECK(std::abs(out[0]) < 1e-14);
    CHECK(std::abs(out[1]) < 1e-14);
}

TEST_CASE("vqc_forward rejects single-qubit ring configs and bad shapes") {
    VqcConfig cfg;
    cfg.n_qubits = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

    VqcConfig bad_noise;
    bad_noise.n_qubits = 2;
    bad_noise.noise = NoiseSpec{0.6, NoiseMode::ExactAtMeasurement,
                                NoisePlacement::BeforeMeasurement};
    CHECK_THROWS_AS(bad_noise.validate(), std::invalid_argument);
    bad_noise.noise = NoiseSpec{0.1, NoiseMode::Trajectory, NoisePlacement::BeforeMeasurement, 0};
    CHECK_THROWS_AS(bad_noise.validate(), std::invalid_argument);

    VqcConfig ok;
    ok.n_qubits = 2;
    auto params = VqcParams::zeros(ok);
    CHECK_THROWS_AS(vqc_forward(ok, params, encode_angles({0.0, 0.0, 0.0})),
                    std::invalid_argument);
    VqcConfig three = ok;
    three.n_qubits = 3;
    CHECK_THROWS_AS(vqc_forward(three, params, encode_angles({0.0, 0.0, 0.0})),
                    std::invalid_argument);
}

TEST_CASE("exact noise with p = 0.5 annihilates every expectation") {
    VqcConfig cfg;
    cfg.n_qubits = 2;
    cfg.noise = NoiseSpec{0.5, NoiseMode::ExactAtMeasurement, NoisePlacement::BeforeMeasurement};
    RngStream rng(5);
    const auto params = random_params(cfg, rng);
    const auto enc = random_encoding(2, rng);
    for (double z : vqc_forward(cfg, params, enc)) {
        CHECK(z == 0.0);
    }
}

TEST_CASE("vqc_forward matches a dense-matrix simulation of the same circuit") {
    RngStream rng(23);
    VqcConfig cfg;
    cfg.n_qubits = 3;
    cfg.n_layers = 2;
    const auto params = random_params(cfg, rng);
    std::vector<double> v{0.4, -1.3, 2.2};
    const auto enc = encode_angles(v);

    // Independent evolution using the dense oracle only.
    std::vector<oracle::cd> state(8, oracle::cd(0));
    state[0] = oracle::cd(1);
    auto apply = [&](const Gate1Q& g, int q) { state = oracle::dense_apply_1q(state, g.m, q); };
    for (int q = 0; q < 3; ++q) {
        apply(Gate1Q::h(), q);
        apply(Gate1Q::ry(enc.theta_y[static_cast<std::size_t>(q)]), q);
        apply(Gate1Q::rz(enc.theta_z[static_cast<std::size_t>(q)]), q);
    }
    for (int l = 0; l < 2; ++l) {
        for (int q = 0; q < 3; ++q) {
            state = oracle::dense_apply_cnot(state, q, (q + 1) % 3);
        }
        for (int q = 0; q < 3; ++q) {
            apply(Gate1Q::rz(params.at(l, q, 0)), q);
            apply(Gate1Q::ry(params.at(l, q, 1)), q);
            apply(Gate1Q::rz(params.at(l, q, 2)), q);
        }
    }
    std::vector<double> expected(3, 0.0);
    for (std::size_t i = 0; i < state.size(); ++i) {
        const double p = std::norm(state[i]);
        for (int q = 0; q < 3; ++q) {
            expected[static_cast<std::size_t>(q)] += ((i >> q) & 1) ? -p : p;
        }
    }

    const auto out = vqc_forward(cfg, params, enc);
    for (int q = 0; q < 3; ++q) {
        CHECK(out[static_cast<std::size_t>(q)] ==
              Catch::Approx(expected[static_cast<std::size_t>(q)]).margin(1e-12));
    }
}

TEST_CASE("parameter-shift rule reproduces the analytic cos derivative") {
    // <Z> of RY(theta)|0> is cos(theta); the shift rule must give -sin(theta).
    auto f = [](double theta) {
        auto s = zero_state(1);
        s.apply(Gate1Q::ry(theta), 0);
        return s.expect_z(0);
    };
    const double half_pi = kPi / 2.0;
    const double theta = kPi / 3.0;
    const double shift_grad = (f(theta + half_pi) - f(theta - half_pi)) / 2.0;
    CHECK(shift_grad == Catch::Approx(-std::sin(theta)).margin(1e-14));
    CHECK(shift_grad == Catch::Approx(-0.86603).margin(1e-5));

    const double at_zero = (f(half_pi) - f(-half_pi)) / 2.0;
    CHECK(at_zero == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("vqc_grad matches finite differences on a random 4-qubit instance") {
    RngStream rng(31);
    VqcConfig cfg;
    cfg.n_qubits = 4;
    cfg.n_layers = 1;
    const auto params = random_params(cfg, rng);
    const auto enc = random_encoding(4, rng);
    std::vector<double> upstream(4);
    for (auto& u : upstream) {
        u = rng.uniform(-1.0, 1.0);
    }

    const auto grad = vqc_grad(cfg, params, enc, upstream);
    const double step = 1e-5;

    for (std::size_t i = 0; i < params.angles.size(); ++i) {
        const double fd = oracle::central_diff(
            [&](double d) { return weighted_output(cfg, params, enc, upstream, 0, i, d); }, 0.0,
            step);
        CHECK(std::abs(grad.grad_params.angles[i] - fd) < 1e-6);
    }
    for (std::size_t q = 0; q < 4; ++q) {
        const double fd_y = oracle::central_diff(
            [&](double d) { return weighted_output(cfg, params, enc, upstream, 1, q, d); }, 0.0,
            step);
        const double fd_z = oracle::central_diff(
            [&](double d) { return weighted_output(cfg, params, enc, upstream, 2, q, d); }, 0.0,
            step);
        CHECK(std::abs(grad.grad_theta_y[q] - fd_y) < 1e-6);
        CHECK(std::abs(grad.grad_theta_z[q] - fd_z) < 1e-6);
    }
}

TEST_CASE("shift-rule exactness across random configs") {
    RngStream rng(47);
    for (int draw = 0; draw < 25; ++draw) {
        VqcConfig cfg;
        cfg.n_qubits = 2 + static_cast<int>(rng.uniform_below(3));
        cfg.n_layers = 1 + static_cast<int>(rng.uniform_below(2));
        const auto params = random_params(cfg, rng);
        const auto enc = random_encoding(cfg.n_qubits, rng);
        std::vector<double> upstream(static_cast<std::size_t>(cfg.n_qubits));
        for (auto& u : upstream) {
            u = rng.uniform(-1.0, 1.0);
        }
        const auto grad = vqc_grad(cfg, params, enc, upstream);
        // Spot-check a few random angles per draw against finite differences.
        for (int probe = 0; probe < 4; ++probe) {
            const std::size_t i = rng.uniform_below(params.angles.size());
            const double fd = oracle::central_diff(
                [&](double d) { return weighted_output(cfg, params, enc, upstream, 0, i, d); },
                0.0, 1e-5);
            CHECK(std::abs(grad.grad_params.angles[i] - fd) < 1e-6);
        }
    }
}

TEST_CASE("vqc_forward outputs stay in [-1, 1] and are deterministic") {
    RngStream rng(61);
    VqcConfig cfg;
    cfg.n_qubits = 3;
    cfg.n_layers = 2;
    for (int draw = 0; draw < 50; ++draw) {
        const auto params = random_params(cfg, rng);
        const auto enc = random_encoding(3, rng);
        const auto out1 = vqc_forward(cfg, params, enc);
        const auto out2 = vqc_forward(cfg, params, enc);
        for (std::size_t q = 0; q < out1.size(); ++q) {
            CHECK(out1[q] >= -1.0);
            CHECK(out1[q] <= 1.0);
            CHECK(out1[q] == out2[q]); // bit-identical
        }
    }
}

TEST_CASE("exact noise scales gradients by (1-2p)") {
    RngStream rng(71);
    VqcConfig clean;
    clean.n_qubits = 3;
    clean.n_layers = 1;
    const auto params = random_params(clean, rng);
    const auto enc = random_encoding(3, rng);
    const std::vector<double> upstream{0.7, -0.2, 1.1};

    const auto g0 = vqc_grad(clean, params, enc, upstream);
    for (double p : {0.01, 0.05, 0.3}) {
        VqcConfig noisy = clean;
        noisy.noise = NoiseSpec{p, NoiseMode::ExactAtMeasurement, NoisePlacement::BeforeMeasurement};
        const auto gp = vqc_grad(noisy, params, enc, upstream);
        const double factor = 1.0 - 2.0 * p;
        for (std::size_t i = 0; i < g0.grad_params.angles.size(); ++i) {
            CHECK(std::abs(gp.grad_params.angles[i] - factor * g0.grad_params.angles[i]) < 1e-12);
        }
        for (std::size_t q = 0; q < 3; ++q) {
            CHECK(std::abs(gp.grad_theta_y[q] - factor * g0.grad_theta_y[q]) < 1e-12);
            CHECK(std::abs(gp.grad_theta_z[q] - factor * g0.grad_theta_z[q]) < 1e-12);
        }
    }
}

TEST_CASE("vqc_grad uses exactly two shifted evaluations per angle") {
    RngStream rng(83);
    for (int layers : {1, 2}) {
        VqcConfig cfg;
        cfg.n_qubits = 3;
        cfg.n_layers = layers;
        const auto params = random_params(cfg, rng);
        const auto enc = random_encoding(3, rng);
        const std::vector<double> upstream{1.0, 1.0, 1.0};
        const auto grad = vqc_grad(cfg, params, enc, upstream);
        const long n_angles = cfg.n_variational_params() + 2 * cfg.n_qubits;
        CHECK(grad.n_shift_evals == 2 * n_angles);
    }
}

TEST_CASE("trajectory-mode forward converges to the exact channel") {
    RngStream rng(97);
    VqcConfig exact_cfg;
    exact_cfg.n_qubits = 2;
    exact_cfg.noise =
        NoiseSpec{0.05, NoiseMode::ExactAtMeasurement, NoisePlacement::BeforeMeasurement};
    const auto params = random_params(exact_cfg, rng);
    const auto enc = random_encoding(2, rng);
    const auto exact = vqc_forward(exact_cfg, params, enc);

    VqcConfig traj_cfg = exact_cfg;
    const int n_traj = 20000;
    traj_cfg.noise = NoiseSpec{0.05, NoiseMode::Trajectory, NoisePlacement::BeforeMeasurement,
                               n_traj, 1234};
    const auto sampled = vqc_forward(traj_cfg, params, enc);
    const double margin = 4.0 / std::sqrt(static_cast<double>(n_traj));
    for (std::size_t q = 0; q < 2; ++q) {
        CHECK(std::abs(sampled[q] - exact[q]) < margin);
    }

    // With one layer, flips injected after the variational layer are
    // equivalent to flips before measurement.
    VqcConfig after_cfg = traj_cfg;
    after_cfg.noise->placement = NoisePlacement::AfterEachVariationalLayer;
    const auto sampled_after = vqc_forward(after_cfg, params, enc);
    for (std::size_t q = 0; q < 2; ++q) {
        CHECK(std::abs(sampled_after[q] - exact[q]) < margin);
    }

    CHECK_THROWS_AS(vqc_grad(traj_cfg, params, enc, {1.0, 1.0}), std::invalid_argument);
}
