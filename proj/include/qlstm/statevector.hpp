// SPDX-License-Identifier: Apache-2.0
/**
 * @file statevector.hpp
 * Dense statevector simulation of small qubit registers.
 *
 * Amplitudes are stored little-endian: qubit 0 is the least significant
 * bit of the basis-state index. Registers are capped at 14 qubits, which
 * keeps the full state below 300 KB and makes exact simulation cheap.
 * Single-qubit gates, CNOT, Pauli-Z expectations and a bit-flip noise
 * channel (exact attenuation and Monte-Carlo trajectories) are provided.
 */

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/rng.hpp"

namespace qlstm {

using cdouble = std::complex<double>;

inline constexpr int kMaxQubits = 14;

enum class GateKind { H, RX, RY, RZ, Rot, X };

/**
 * A 2x2 unitary with a descriptive label. Factory functions guarantee
 * unitarity by construction; `from_matrix` validates arbitrary input.
 */
struct Gate1Q {
    std::array<cdouble, 4> m{}; // row-major: [m00 m01; m10 m11]
    GateKind kind = GateKind::H;

    static Gate1Q h() {
        const double s = 1.0 / std::sqrt(2.0);
        return {{cdouble(s), cdouble(s), cdouble(s), cdouble(-s)}, GateKind::H};
    }

    static Gate1Q x() { return {{cdouble(0), cdouble(1), cdouble(1), cdouble(0)}, GateKind::X}; }

    static Gate1Q rx(double theta) {
        const double c = std::cos(theta / 2.0);
        const double s = std::sin(theta / 2.0);
        return {{cdouble(c), cdouble(0, -s), cdouble(0, -s), cdouble(c)}, GateKind::RX};
    }

    static Gate1Q ry(double theta) {
        const double c = std::cos(theta / 2.0);
        const double s = std::sin(theta / 2.0);
        return {{cdouble(c), cdouble(-s), cdouble(s), cdouble(c)}, GateKind::RY};
    }

    static Gate1Q rz(double theta) {
        return {{std::polar(1.0, -theta / 2.0), cdouble(0), cdouble(0), std::polar(1.0, theta / 2.0)},
                GateKind::RZ};
    }

    /// Composite rotation: Rz(gamma) * Ry(beta) * Rz(alpha), rightmost applied first.
    static Gate1Q rot(double alpha, double beta, double gamma) {
        Gate1Q g = compose(rz(gamma), compose(ry(beta), rz(alpha)));
        g.kind = GateKind::Rot;
        return g;
    }

    /// Matrix product a*b (b acts first). Written in explicit real
    /// arithmetic so no inf/nan-recovering complex-multiply call is
    /// emitted in hot paths.
    static Gate1Q compose(const Gate1Q& a, const Gate1Q& b) {
        auto mul_add = [](cdouble x, cdouble y, cdouble z, cdouble w) {
            const double re = x.real() * y.real() - x.imag() * y.imag() + z.real() * w.real() -
                              z.imag() * w.imag();
            const double im = x.real() * y.imag() + x.imag() * y.real() + z.real() * w.imag() +
                              z.imag() * w.real();
            return cdouble(re, im);
        };
        Gate1Q out;
        out.m[0] = mul_add(a.m[0], b.m[0], a.m[1], b.m[2]);
        out.m[1] = mul_add(a.m[0], b.m[1], a.m[1], b.m[3]);
        out.m[2] = mul_add(a.m[2], b.m[0], a.m[3], b.m[2]);
        out.m[3] = mul_add(a.m[2], b.m[1], a.m[3], b.m[3]);
        out.kind = a.kind;
        return out;
    }

    /// Builds a gate from a raw matrix, rejecting non-unitary input.
    static Gate1Q from_matrix(const std::array<cdouble, 4>& m, double tol = 1e-12) {
        Gate1Q g{m, GateKind::H};
        if (g.unitarity_defect() > tol) {
            throw std::invalid_argument("Gate1Q::from_matrix: matrix is not unitary");
        }
        return g;
    }

    /// Max-norm of U^dagger U - I.
    double unitarity_defect() const {
        const cdouble a = std::conj(m[0]) * m[0] + std::conj(m[2]) * m[2];
        const cdouble b = std::conj(m[0]) * m[1] + std::conj(m[2]) * m[3];
        const cdouble c = std::conj(m[1]) * m[0] + std::conj(m[3]) * m[2];
        const cdouble d = std::conj(m[1]) * m[1] + std::conj(m[3]) * m[3];
        double defect = std::abs(a - cdouble(1));
        defect = std::max(defect, std::abs(b));
        defect = std::max(defect, std::abs(c));
        defect = std::max(defect, std::abs(d - cdouble(1)));
        return defect;
    }
};

namespace detail {

/**
 * In-place single-qubit gate application on a 2^n amplitude array.
 * The butterfly is written in explicit real arithmetic (std::complex
 * guarantees array-compatible layout), which keeps the compiler from
 * emitting the inf/nan-recovering complex-multiply runtime call.
 */
inline void apply_1q_kernel(cdouble* amps, std::size_t dim, const Gate1Q& g, int target) {
    const std::size_t stride = std::size_t{1} << target;
    const double m00r = g.m[0].real(), m00i = g.m[0].imag();
    const double m01r = g.m[1].real(), m01i = g.m[1].imag();
    const double m10r = g.m[2].real(), m10i = g.m[2].imag();
    const double m11r = g.m[3].real(), m11i = g.m[3].imag();
    double* s = reinterpret_cast<double*>(amps);
    for (std::size_t group = 0; group < dim; group += 2 * stride) {
        for (std::size_t i = group; i < group + stride; ++i) {
            const std::size_t a2 = 2 * i;
            const std::size_t b2 = 2 * (i + stride);
            const double ar = s[a2], ai = s[a2 + 1];
            const double br = s[b2], bi = s[b2 + 1];
            s[a2] = m00r * ar - m00i * ai + m01r * br - m01i * bi;
            s[a2 + 1] = m00r * ai + m00i * ar + m01r * bi + m01i * br;
            s[b2] = m10r * ar - m10i * ai + m11r * br - m11i * bi;
            s[b2 + 1] = m10r * ai + m10i * ar + m11r * bi + m11i * br;
        }
    }
}

} // namespace detail

/// Bit-flip channel configuration (see NoiseSpec usage in vqc.hpp).
enum class NoiseMode { ExactAtMeasurement, Trajectory };
enum class NoisePlacement { BeforeMeasurement, AfterEachVariationalLayer };

struct NoiseSpec {
    double p = 0.0;
    NoiseMode mode = NoiseMode::ExactAtMeasurement;
    NoisePlacement placement = NoisePlacement::BeforeMeasurement;
    int n_trajectories = 1;      // Trajectory mode only
    std::uint64_t seed = 0;      // Trajectory mode only

    void validate() const {
        if (p < 0.0 || p > 0.5) {
            throw std::invalid_argument("NoiseSpec: p must lie in [0, 0.5]");
        }
        if (mode == NoiseMode::Trajectory && n_trajectories < 1) {
            throw std::invalid_argument("NoiseSpec: n_trajectories must be >= 1");
        }
    }
};

class StateVector {
  public:
    explicit StateVector(int n_qubits) : n_qubits_(n_qubits) {
        if (n_qubits < 1 || n_qubits > kMaxQubits) {
            throw std::invalid_argument("StateVector: qubit count must lie in [1, " +
                                        std::to_string(kMaxQubits) + "], got " +
                                        std::to_string(n_qubits));
        }
        amps_.assign(std::size_t{1} << n_qubits, cdouble(0));
        amps_[0] = cdouble(1);
    }

    int n_qubits() const { return n_qubits_; }
    std::size_t dim() const { return amps_.size(); }
    const std::vector<cdouble>& amplitudes() const { return amps_; }
    std::vector<cdouble>& amplitudes() { return amps_; }

    /// Applies a single-qubit gate in place. The gate is assumed unitary
    /// (guaranteed by the Gate1Q factories / from_matrix).
    void apply(const Gate1Q& g, int target) {
        check_qubit(target);
        detail::apply_1q_kernel(amps_.data(), amps_.size(), g, target);
    }

    void apply_cnot(int control, int target) {
        check_qubit(control);
        check_qubit(target);
        if (control == target) {
            throw std::invalid_argument("apply_cnot: control and target must differ");
        }
        const std::size_t cbit = std::size_t{1} << control;
        const std::size_t tbit = std::size_t{1} << target;
        const std::size_t n = amps_.size();
        for (std::size_t i = 0; i < n; ++i) {
            if ((i & cbit) && !(i & tbit)) {
                std::swap(amps_[i], amps_[i | tbit]);
            }
        }
    }

    /// Pauli-Z expectation of qubit q; +1 for bit 0, -1 for bit 1.
    double expect_z(int q) const {
        check_qubit(q);
        const std::size_t bit = std::size_t{1} << q;
        double acc = 0.0;
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            const double p = std::norm(amps_[i]);
            acc += (i & bit) ? -p : p;
        }
        return acc;
    }

    /// Pauli-Z expectations of all qubits in one pass.
    std::vector<double> expect_z_all() const {
        std::vector<double> out(static_cast<std::size_t>(n_qubits_), 0.0);
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            const double p = std::norm(amps_[i]);
            for (int q = 0; q < n_qubits_; ++q) {
                out[static_cast<std::size_t>(q)] += (i >> q) & 1 ? -p : p;
            }
        }
        return out;
    }

    double norm_sq() const {
        double s = 0.0;
        for (const auto& a : amps_) {
            s += std::norm(a);
        }
        return s;
    }

    /// One bit-flip trajectory: independently per qubit, applies X with
    /// probability p. Averaging expect_z over many trajectories converges
    /// to the exact (1-2p) attenuation.
    void apply_bitflip_trajectory(double p, RngStream& rng) {
        if (p < 0.0 || p > 0.5) {
            throw std::invalid_argument("apply_bitflip_trajectory: p must lie in [0, 0.5]");
        }
        for (int q = 0; q < n_qubits_; ++q) {
            if (rng.bernoulli(p)) {
                apply(Gate1Q::x(), q);
            }
        }
    }

  private:
    void check_qubit(int q) const {
        if (q < 0 || q >= n_qubits_) {
            throw std::out_of_range("qubit index " + std::to_string(q) + " out of range for " +
                                    std::to_string(n_qubits_) + "-qubit register");
        }
    }

    int n_qubits_;
    std::vector<cdouble> amps_;
};

inline StateVector zero_state(int n_qubits) { return StateVector(n_qubits); }

/**
 * Exact effect of the bit-flip Kraus channel on Z expectations: each
 * channel application before measurement scales <Z> by (1-2p), since
 * X Z X = -Z. Applies the factor n_channels times.
 */
inline std::vector<double> bitflip_attenuate(const std::vector<double>& expectations, double p,
                                             int n_channels) {
    if (p < 0.0 || p > 0.5) {
        throw std::invalid_argument("bitflip_attenuate: p must lie in [0, 0.5]");
    }
    if (n_channels < 0) {
        throw std::invalid_argument("bitflip_attenuate: n_channels must be >= 0");
    }
    const double factor = std::pow(1.0 - 2.0 * p, n_channels);
    std::vector<double> out(expectations.size());
    for (std::size_t i = 0; i < expectations.size(); ++i) {
        out[i] = expectations[i] * factor;
    }
    return out;
}

} // namespace qlstm
