// SPDX-License-Identifier: Apache-2.0
/**
 * @file vqc.hpp
 * Variational quantum circuit: angle encoding, hardware-efficient
 * variational layers, Pauli-Z measurement, and parameter-shift gradients.
 *
 * Circuit layout, per forward pass:
 *   1. encoding      - per qubit q: H, Ry(atan(v_q)), Rz(atan(v_q^2))
 *   2. per layer     - ring of CNOTs (q -> (q+1) mod n), then a
 *                      Rot(alpha, beta, gamma) on every qubit
 *   3. measurement   - <Z_q> for every qubit, each in [-1, 1]
 *
 * Gradients with respect to every rotation angle (variational AND
 * encoding) use the parameter-shift rule
 *     df/dtheta = (f(theta + pi/2) - f(theta - pi/2)) / 2,
 * exactly two shifted circuit evaluations per scalar angle.
 *
 * VqcEngine is the workhorse: it caches prefix states so a shifted
 * evaluation resumes mid-circuit, applies the CNOT ring as one
 * precomputed basis permutation, and exploits locality for final-layer
 * rotations (a single-qubit rotation on another qubit cannot change
 * <Z_q>, so those suffix gates are provably identity on the measured
 * value and are skipped). None of this changes the rule's two
 * evaluations per angle; it only removes redundant simulation work.
 * Accumulation order is fixed, so results are bit-reproducible.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/statevector.hpp"

namespace qlstm {

enum class Entangler { RingCnot };

struct VqcConfig {
    int n_qubits = 4;
    int n_layers = 1;
    Entangler entangler = Entangler::RingCnot;
    std::optional<NoiseSpec> noise;

    void validate() const {
        if (n_qubits < 2 || n_qubits > kMaxQubits) {
            throw std::invalid_argument("VqcConfig: ring entanglement needs 2.." +
                                        std::to_string(kMaxQubits) + " qubits, got " +
                                        std::to_string(n_qubits));
        }
        if (n_layers < 1) {
            throw std::invalid_argument("VqcConfig: n_layers must be >= 1");
        }
        if (noise) {
            noise->validate();
        }
    }

    int n_variational_params() const { return n_layers * n_qubits * 3; }
};

/// Rotation angles (alpha, beta, gamma) per qubit per layer, stored flat.
struct VqcParams {
    int n_layers = 0;
    int n_qubits = 0;
    std::vector<double> angles; // [layer][qubit][3]

    static VqcParams zeros(const VqcConfig& cfg) {
        VqcParams p;
        p.n_layers = cfg.n_layers;
        p.n_qubits = cfg.n_qubits;
        p.angles.assign(static_cast<std::size_t>(cfg.n_variational_params()), 0.0);
        return p;
    }

    double& at(int layer, int qubit, int comp) {
        return angles[static_cast<std::size_t>((layer * n_qubits + qubit) * 3 + comp)];
    }
    double at(int layer, int qubit, int comp) const {
        return angles[static_cast<std::size_t>((layer * n_qubits + qubit) * 3 + comp)];
    }

    void check_shape(const VqcConfig& cfg) const {
        if (n_layers != cfg.n_layers || n_qubits != cfg.n_qubits ||
            angles.size() != static_cast<std::size_t>(cfg.n_variational_params())) {
            throw std::invalid_argument("VqcParams: shape does not match VqcConfig");
        }
        for (double a : angles) {
            if (!std::isfinite(a)) {
                throw std::invalid_argument("VqcParams: non-finite angle");
            }
        }
    }
};

struct EncodedAngles {
    std::vector<double> theta_y;
    std::vector<double> theta_z;
};

/// theta_y = atan(v), theta_z = atan(v^2); both bounded by pi/2.
inline EncodedAngles encode_angles(const std::vector<double>& v) {
    EncodedAngles enc;
    enc.theta_y.resize(v.size());
    enc.theta_z.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw std::invalid_argument("encode_angles: non-finite input");
        }
        enc.theta_y[i] = std::atan(v[i]);
        enc.theta_z[i] = std::atan(v[i] * v[i]);
    }
    return enc;
}

struct VqcGradient {
    VqcParams grad_params;            // upstream-weighted, same shape as params
    std::vector<double> grad_theta_y; // upstream-weighted, per qubit
    std::vector<double> grad_theta_z;
    long n_shift_evals = 0; // shifted circuit evaluations; exactly 2 per angle
};

/**
 * Reusable circuit evaluator for one (n_qubits, n_layers) geometry.
 * All buffers are preallocated; forward and grad are allocation-free in
 * steady state. Gate matrices are built once per call and shifted
 * evaluations reuse them composed with constant +-pi/2 rotations, so the
 * shift loops contain no trigonometry. Not thread-safe; use one engine
 * per thread/replica.
 */
class VqcEngine {
  public:
    explicit VqcEngine(const VqcConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        nq_ = cfg.n_qubits;
        dim_ = std::size_t{1} << nq_;
        // Basis permutation of the full CNOT ring q -> (q+1) mod n.
        ring_perm_.resize(dim_);
        for (std::size_t i = 0; i < dim_; ++i) {
            std::size_t s = i;
            for (int q = 0; q < nq_; ++q) {
                if ((s >> q) & 1) {
                    s ^= std::size_t{1} << ((q + 1) % nq_);
                }
            }
            ring_perm_[i] = s;
        }
        const std::size_t n_states = static_cast<std::size_t>(1 + cfg.n_layers) * dim_;
        checkpoints_.resize(n_states);
        scratch_.resize(dim_);
        scratch2_.resize(dim_);
        cur_.resize(dim_);
        weight_table_.resize(dim_);
        const std::size_t n_rot = static_cast<std::size_t>(cfg.n_layers * nq_);
        rot_front_.resize(n_rot);  // Rz(gamma) * Ry(beta)
        rot_back_.resize(n_rot);   // Rz(alpha)
        rot_base_.resize(n_rot);   // front * back
        enc_front_.resize(static_cast<std::size_t>(nq_)); // Rz(tz) * Ry(ty)
        enc_base_.resize(static_cast<std::size_t>(nq_));  // front * H
    }

    const VqcConfig& config() const { return cfg_; }

    /// Per-qubit <Z> into `out[n_qubits]` (exact-noise factor applied).
    void forward(const VqcParams& params, const EncodedAngles& enc, double* out) {
        check_shapes(params, enc);
        prepare_matrices(params, enc);
        run_prefix();
        std::copy(checkpoint(cfg_.n_layers), checkpoint(cfg_.n_layers) + dim_, scratch_.data());
        const int last = cfg_.n_layers - 1;
        for (int q = 0; q < nq_; ++q) {
            apply_gate(scratch_.data(), rot_base_[rot_index(last, q)], q);
        }
        const double factor = exact_noise_factor();
        for (int q = 0; q < nq_; ++q) {
            out[q] = 0.0;
        }
        for (std::size_t i = 0; i < dim_; ++i) {
            const double p = std::norm(scratch_[i]);
            for (int q = 0; q < nq_; ++q) {
                out[q] += ((i >> q) & 1) ? -p : p;
            }
        }
        for (int q = 0; q < nq_; ++q) {
            out[q] *= factor;
        }
    }

    /**
     * Upstream-weighted parameter-shift gradient. The noise factor for the
     * exact channel is folded in once at the end.
     */
    void grad(const VqcParams& params, const EncodedAngles& enc, const double* upstream,
              VqcGradient& out) {
        check_shapes(params, enc);
        if (cfg_.noise && cfg_.noise->mode == NoiseMode::Trajectory && cfg_.noise->p > 0.0) {
            throw std::invalid_argument(
                "vqc_grad: gradients require the exact noise mode (trajectory sampling is "
                "validation-only)");
        }
        out.grad_params.n_layers = cfg_.n_layers;
        out.grad_params.n_qubits = nq_;
        out.grad_params.angles.assign(static_cast<std::size_t>(cfg_.n_variational_params()), 0.0);
        out.grad_theta_y.assign(static_cast<std::size_t>(nq_), 0.0);
        out.grad_theta_z.assign(static_cast<std::size_t>(nq_), 0.0);
        out.n_shift_evals = 0;

        prepare_matrices(params, enc);
        run_prefix();
        for (std::size_t i = 0; i < dim_; ++i) {
            double w = 0.0;
            for (int q = 0; q < nq_; ++q) {
                w += ((i >> q) & 1) ? -upstream[q] : upstream[q];
            }
            weight_table_[i] = w;
        }
        const double factor = exact_noise_factor();

        // Variational angles in (layer, qubit, component) order.
        for (int l = 0; l < cfg_.n_layers; ++l) {
            const cdouble* entry = checkpoint(1 + l); // after ring l, before rots l
            const bool last_layer = l == cfg_.n_layers - 1;
            for (int q = 0; q < nq_; ++q) {
                const std::size_t r = rot_index(l, q);
                for (int comp = 0; comp < 3; ++comp) {
                    double g = 0.0;
                    for (int sign = 0; sign < 2; ++sign) {
                        const Gate1Q shifted = shifted_rot(r, comp, sign == 0);
                        double f;
                        if (last_layer) {
                            // Rotations on other qubits commute with Z_q and
                            // with this qubit's rotation: only rot_q matters.
                            std::copy(entry, entry + dim_, scratch_.data());
                            apply_gate(scratch_.data(), shifted, q);
                            f = upstream[q] * single_z(scratch_.data(), q);
                        } else {
                            std::copy(entry, entry + dim_, scratch_.data());
                            for (int qq = 0; qq < nq_; ++qq) {
                                apply_gate(scratch_.data(),
                                           qq == q ? shifted : rot_base_[rot_index(l, qq)], qq);
                            }
                            run_suffix_layers(scratch_.data(), l + 1);
                            f = weighted_readout(scratch_.data());
                        }
                        ++out.n_shift_evals;
                        g += sign == 0 ? f : -f;
                    }
                    out.grad_params.at(l, q, comp) = 0.5 * g * factor;
                }
            }
        }

        // Encoding angles: theta_y for every qubit, then theta_z. Encodes
        // act on distinct qubits and commute, so a shifted evaluation
        // resumes from the all-encodes checkpoint by undoing qubit q's
        // encode and applying the shifted one.
        for (int axis = 0; axis < 2; ++axis) {
            auto& dst = axis == 0 ? out.grad_theta_y : out.grad_theta_z;
            for (int q = 0; q < nq_; ++q) {
                const std::size_t qi = static_cast<std::size_t>(q);
                const Gate1Q& base = enc_base_[qi];
                const Gate1Q undo{{std::conj(base.m[0]), std::conj(base.m[2]),
                                   std::conj(base.m[1]), std::conj(base.m[3])},
                                  base.kind};
                double g = 0.0;
                for (int sign = 0; sign < 2; ++sign) {
                    const Gate1Q shifted = shifted_encode(qi, axis, sign == 0);
                    std::copy(checkpoint(0), checkpoint(0) + dim_, scratch_.data());
                    apply_gate(scratch_.data(), undo, q);
                    apply_gate(scratch_.data(), shifted, q);
                    run_suffix_layers(scratch_.data(), 0);
                    const double f = weighted_readout(scratch_.data());
                    ++out.n_shift_evals;
                    g += sign == 0 ? f : -f;
                }
                dst[qi] = 0.5 * g * factor;
            }
        }
    }

    double exact_noise_factor() const {
        if (!cfg_.noise || cfg_.noise->p == 0.0 || cfg_.noise->mode == NoiseMode::Trajectory) {
            return 1.0;
        }
        const int channels =
            cfg_.noise->placement == NoisePlacement::AfterEachVariationalLayer ? cfg_.n_layers : 1;
        return std::pow(1.0 - 2.0 * cfg_.noise->p, channels);
    }

  private:
    // Constant quarter-turn rotations used by the shift rule.
    static const Gate1Q& rz_quarter(bool plus) {
        static const Gate1Q pos = Gate1Q::rz(1.5707963267948966);
        static const Gate1Q neg = Gate1Q::rz(-1.5707963267948966);
        return plus ? pos : neg;
    }
    static const Gate1Q& ry_quarter(bool plus) {
        static const Gate1Q pos = Gate1Q::ry(1.5707963267948966);
        static const Gate1Q neg = Gate1Q::ry(-1.5707963267948966);
        return plus ? pos : neg;
    }

    void check_shapes(const VqcParams& params, const EncodedAngles& enc) const {
        params.check_shape(cfg_);
        if (enc.theta_y.size() != static_cast<std::size_t>(nq_) ||
            enc.theta_z.size() != enc.theta_y.size()) {
            throw std::invalid_argument("EncodedAngles: expected " + std::to_string(nq_) +
                                        " angles per axis");
        }
    }

    std::size_t rot_index(int layer, int q) const {
        return static_cast<std::size_t>(layer * nq_ + q);
    }

    cdouble* checkpoint(int index) {
        return checkpoints_.data() + static_cast<std::size_t>(index) * dim_;
    }

    // Builds all per-call gate matrices. Rot(a,b,g) = [Rz(g)Ry(b)] * Rz(a)
    // is split so shifted variants compose from constants:
    //   alpha +- pi/2: base * Rz(+-pi/2)     (Rz commutes with Rz(alpha))
    //   beta  +- pi/2: front * Ry(+-pi/2) * back
    //   gamma +- pi/2: Rz(+-pi/2) * base
    // and likewise for the encoding composite [Rz(tz)Ry(ty)] * H.
    void prepare_matrices(const VqcParams& params, const EncodedAngles& enc) {
        for (int l = 0; l < cfg_.n_layers; ++l) {
            for (int q = 0; q < nq_; ++q) {
                const std::size_t r = rot_index(l, q);
                rot_front_[r] = Gate1Q::compose(Gate1Q::rz(params.at(l, q, 2)),
                                                Gate1Q::ry(params.at(l, q, 1)));
                rot_back_[r] = Gate1Q::rz(params.at(l, q, 0));
                rot_base_[r] = Gate1Q::compose(rot_front_[r], rot_back_[r]);
                rot_base_[r].kind = GateKind::Rot;
            }
        }
        for (int q = 0; q < nq_; ++q) {
            const std::size_t qi = static_cast<std::size_t>(q);
            enc_front_[qi] = Gate1Q::compose(Gate1Q::rz(enc.theta_z[qi]),
                                             Gate1Q::ry(enc.theta_y[qi]));
            enc_base_[qi] = Gate1Q::compose(enc_front_[qi], Gate1Q::h());
        }
    }

    Gate1Q shifted_rot(std::size_t r, int comp, bool plus) const {
        switch (comp) {
        case 0: return Gate1Q::compose(rot_base_[r], rz_quarter(plus));
        case 1:
            return Gate1Q::compose(rot_front_[r],
                                   Gate1Q::compose(ry_quarter(plus), rot_back_[r]));
        default: return Gate1Q::compose(rz_quarter(plus), rot_base_[r]);
        }
    }

    Gate1Q shifted_encode(std::size_t qi, int axis, bool plus) const {
        if (axis == 0) {
            return Gate1Q::compose(enc_front_[qi],
                                   Gate1Q::compose(ry_quarter(plus), Gate1Q::h()));
        }
        return Gate1Q::compose(rz_quarter(plus), enc_base_[qi]);
    }

    void apply_gate(cdouble* state, const Gate1Q& g, int target) const {
        detail::apply_1q_kernel(state, dim_, g, target);
    }

    void apply_ring(cdouble* state) {
        for (std::size_t i = 0; i < dim_; ++i) {
            scratch2_[ring_perm_[i]] = state[i];
        }
        std::copy(scratch2_.begin(), scratch2_.end(), state);
    }

    // Evolves |0..0> through the circuit, caching the state after the
    // encoding block (checkpoint 0) and after each layer's ring but BEFORE
    // that layer's rotations (checkpoint 1+l). The final layer's rotations
    // never enter a checkpoint so the rotation fast path can branch there.
    void run_prefix() {
        std::fill(cur_.begin(), cur_.end(), cdouble(0));
        cur_[0] = cdouble(1);
        for (int q = 0; q < nq_; ++q) {
            apply_gate(cur_.data(), enc_base_[static_cast<std::size_t>(q)], q);
        }
        std::copy(cur_.begin(), cur_.end(), checkpoint(0));
        for (int l = 0; l < cfg_.n_layers; ++l) {
            apply_ring(cur_.data());
            std::copy(cur_.begin(), cur_.end(), checkpoint(1 + l));
            if (l + 1 < cfg_.n_layers) {
                for (int q = 0; q < nq_; ++q) {
                    apply_gate(cur_.data(), rot_base_[rot_index(l, q)], q);
                }
            }
        }
    }

    // Rings and rotations for layers >= from_layer.
    void run_suffix_layers(cdouble* state, int from_layer) {
        for (int l = from_layer; l < cfg_.n_layers; ++l) {
            apply_ring(state);
            for (int q = 0; q < nq_; ++q) {
                apply_gate(state, rot_base_[rot_index(l, q)], q);
            }
        }
    }

    double weighted_readout(const cdouble* state) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < dim_; ++i) {
            acc += std::norm(state[i]) * weight_table_[i];
        }
        return acc;
    }

    double single_z(const cdouble* state, int q) const {
        double z = 0.0;
        const std::size_t bit = std::size_t{1} << q;
        for (std::size_t i = 0; i < dim_; ++i) {
            const double p = std::norm(state[i]);
            z += (i & bit) ? -p : p;
        }
        return z;
    }

    VqcConfig cfg_;
    int nq_ = 0;
    std::size_t dim_ = 0;
    std::vector<std::size_t> ring_perm_;
    std::vector<cdouble> checkpoints_; // (1 + n_layers) states
    std::vector<cdouble> scratch_;
    std::vector<cdouble> scratch2_; // ring permutation buffer
    std::vector<cdouble> cur_;
    std::vector<double> weight_table_; // upstream-weighted sign per basis state
    std::vector<Gate1Q> rot_front_, rot_back_, rot_base_;
    std::vector<Gate1Q> enc_front_, enc_base_;
};

/**
 * Runs the circuit and returns per-qubit <Z>, each in [-1, 1].
 *
 * Exact noise attenuates the expectations by (1-2p) per channel
 * application; trajectory noise averages Monte-Carlo bit-flip runs using
 * sub-streams of the spec's seed (validation mode, not used in training).
 */
inline std::vector<double> vqc_forward(const VqcConfig& cfg, const VqcParams& params,
                                       const EncodedAngles& enc) {
    cfg.validate();
    if (cfg.noise && cfg.noise->mode == NoiseMode::Trajectory && cfg.noise->p > 0.0) {
        params.check_shape(cfg);
        if (enc.theta_y.size() != static_cast<std::size_t>(cfg.n_qubits) ||
            enc.theta_z.size() != enc.theta_y.size()) {
            throw std::invalid_argument("EncodedAngles: expected " +
                                        std::to_string(cfg.n_qubits) + " angles per axis");
        }
        const NoiseSpec& ns = *cfg.noise;
        std::vector<double> mean(static_cast<std::size_t>(cfg.n_qubits), 0.0);
        for (int t = 0; t < ns.n_trajectories; ++t) {
            RngStream rng = RngStream::substream(ns.seed, static_cast<std::uint64_t>(t));
            StateVector st(cfg.n_qubits);
            for (int q = 0; q < cfg.n_qubits; ++q) {
                st.apply(Gate1Q::h(), q);
                st.apply(Gate1Q::ry(enc.theta_y[static_cast<std::size_t>(q)]), q);
                st.apply(Gate1Q::rz(enc.theta_z[static_cast<std::size_t>(q)]), q);
            }
            for (int l = 0; l < cfg.n_layers; ++l) {
                for (int q = 0; q < cfg.n_qubits; ++q) {
                    st.apply_cnot(q, (q + 1) % cfg.n_qubits);
                }
                for (int q = 0; q < cfg.n_qubits; ++q) {
                    st.apply(Gate1Q::rot(params.at(l, q, 0), params.at(l, q, 1),
                                         params.at(l, q, 2)),
                             q);
                }
                if (ns.placement == NoisePlacement::AfterEachVariationalLayer) {
                    st.apply_bitflip_trajectory(ns.p, rng);
                }
            }
            if (ns.placement == NoisePlacement::BeforeMeasurement) {
                st.apply_bitflip_trajectory(ns.p, rng);
            }
            const auto z = st.expect_z_all();
            for (std::size_t q = 0; q < z.size(); ++q) {
                mean[q] += z[q];
            }
        }
        for (auto& v : mean) {
            v /= static_cast<double>(ns.n_trajectories);
        }
        return mean;
    }

    VqcEngine engine(cfg);
    std::vector<double> out(static_cast<std::size_t>(cfg.n_qubits), 0.0);
    engine.forward(params, enc, out.data());
    return out;
}

/**
 * Parameter-shift gradient of sum_q upstream[q] * <Z_q> with respect to
 * every variational and encoding angle. Accumulation runs in ascending
 * parameter-index order (variational angles first, then theta_y, theta_z)
 * so results are bit-reproducible.
 */
inline VqcGradient vqc_grad(const VqcConfig& cfg, const VqcParams& params, const EncodedAngles& enc,
                            const std::vector<double>& upstream) {
    if (upstream.size() != static_cast<std::size_t>(cfg.n_qubits)) {
        throw std::invalid_argument("vqc_grad: upstream size must equal n_qubits");
    }
    VqcEngine engine(cfg);
    VqcGradient out;
    engine.grad(params, enc, upstream.data(), out);
    return out;
}

} // namespace qlstm
