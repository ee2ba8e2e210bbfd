// SPDX-License-Identifier: Apache-2.0
/**
 * @file models.hpp
 * Recurrent model zoo: classical LSTM and GRU baselines, the QLSTM cell
 * whose four gates are variational quantum circuits, and the two ablation
 * variants QE-LSTM (quantum input embedding, classical gates) and NG-LSTM
 * (classical Linear-LayerNorm-GELU-Linear gates).
 *
 * Every QLSTM gate g holds a disjoint parameter block
 *     W_pre[g]: (d+H) -> n_qubits,  vqc_params[g],  W_post[g]: n_qubits -> H
 * around its circuit; the projections compress the concatenated input
 * onto the register and expand the measured expectations back to the
 * hidden width. Sequences are reduced to a scalar by a single affine head
 * on the final hidden state (dropout before the head, training only).
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qlstm/autodiff.hpp"
#include "qlstm/rng.hpp"
#include "qlstm/vqc.hpp"

namespace qlstm {

enum class ModelKind { Lstm, Gru, Qlstm, QeLstm, NgLstm };

inline const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Gru: return "gru";
    case ModelKind::Qlstm: return "qlstm";
    case ModelKind::QeLstm: return "qe_lstm";
    case ModelKind::NgLstm: return "ng_lstm";
    }
    return "?";
}

inline ModelKind model_kind_from_string(const std::string& s) {
    if (s == "lstm") return ModelKind::Lstm;
    if (s == "gru") return ModelKind::Gru;
    if (s == "qlstm") return ModelKind::Qlstm;
    if (s == "qe_lstm") return ModelKind::QeLstm;
    if (s == "ng_lstm") return ModelKind::NgLstm;
    throw std::invalid_argument("unknown model kind: " + s);
}

struct ModelSpec {
    ModelKind kind = ModelKind::Lstm;
    int input_dim = 0;  // d
    int hidden_dim = 0; // H
    VqcConfig vqc;      // quantum kinds only
    double dropout_rate = 0.0;
    int ng_inner_dim = 0; // NG-LSTM inner width; 0 means hidden_dim

    bool uses_vqc() const { return kind == ModelKind::Qlstm || kind == ModelKind::QeLstm; }

    void validate() const {
        if (input_dim < 1 || hidden_dim < 1) {
            throw std::invalid_argument("ModelSpec: dims must be >= 1");
        }
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            throw std::invalid_argument("ModelSpec: dropout_rate must lie in [0, 1)");
        }
        if (uses_vqc()) {
            vqc.validate();
            const int max_in = kind == ModelKind::QeLstm ? input_dim : input_dim + hidden_dim;
            if (vqc.n_qubits > max_in) {
                throw std::invalid_argument(
                    "ModelSpec: n_qubits must not exceed the projection input width (" +
                    std::to_string(max_in) + "); the pre-projection compresses, never pads");
            }
        }
    }
};

struct ParamBlock {
    std::string name;
    Tensor value;
};

class BoundModel;

/**
 * A model is its spec plus named parameter blocks. Forward passes bind
 * the blocks to a tape (one bind per batch) so gradients accumulate per
 * block across the batch.
 */
class Model {
  public:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        build_layout();
    }

    const ModelSpec& spec() const { return spec_; }
    std::vector<ParamBlock>& blocks() { return blocks_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }

    ParamBlock& block(const std::string& name) {
        const auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::out_of_range("Model: no parameter block named " + name);
        }
        return blocks_[it->second];
    }
    const ParamBlock& block(const std::string& name) const {
        return const_cast<Model*>(this)->block(name);
    }

    std::size_t n_params() const {
        std::size_t n = 0;
        for (const auto& b : blocks_) {
            n += b.value.numel();
        }
        return n;
    }

    /// Glorot-uniform affine weights, zero biases, unit layernorm gains,
    /// variational angles uniform in [-0.1, 0.1]. Deterministic in `rng`.
    void init_params(RngStream& rng) {
        for (auto& b : blocks_) {
            if (ends_with(b.name, ".vqc")) {
                for (auto& a : b.value.v) {
                    a = rng.uniform(-0.1, 0.1);
                }
            } else if (ends_with(b.name, ".w")) {
                const double fan_in = static_cast<double>(b.value.shape[1]);
                const double fan_out = static_cast<double>(b.value.shape[0]);
                const double bound = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& a : b.value.v) {
                    a = rng.uniform(-bound, bound);
                }
            } else if (ends_with(b.name, ".gain")) {
                for (auto& a : b.value.v) {
                    a = 1.0;
                }
            } else {
                for (auto& a : b.value.v) {
                    a = 0.0;
                }
            }
        }
    }

    BoundModel bind(Tape& tape) const;

  private:
    friend class BoundModel;

    void add_block(const std::string& name, std::vector<std::size_t> shape) {
        index_[name] = blocks_.size();
        blocks_.push_back({name, Tensor::zeros(std::move(shape))});
    }

    void add_affine(const std::string& prefix, std::size_t out, std::size_t in) {
        add_block(prefix + ".w", {out, in});
        add_block(prefix + ".b", {out});
    }

    void add_quantum_block(const std::string& prefix, std::size_t in, std::size_t out) {
        const auto n = static_cast<std::size_t>(spec_.vqc.n_qubits);
        const auto l = static_cast<std::size_t>(spec_.vqc.n_layers);
        add_affine(prefix + ".pre", n, in);
        add_block(prefix + ".vqc", {l, n, 3});
        add_affine(prefix + ".post", out, n);
    }

    void build_layout() {
        const auto d = static_cast<std::size_t>(spec_.input_dim);
        const auto h = static_cast<std::size_t>(spec_.hidden_dim);
        const std::size_t v = d + h;
        static const char* kGates[] = {"gate_f", "gate_i", "gate_c", "gate_o"};
        switch (spec_.kind) {
        case ModelKind::Lstm:
            for (const char* g : kGates) {
                add_affine(g, h, v);
            }
            break;
        case ModelKind::Gru:
            add_affine("update", h, v);
            add_affine("reset", h, v);
            add_affine("cand", h, v);
            break;
        case ModelKind::Qlstm:
            for (const char* g : kGates) {
                add_quantum_block(g, v, h);
            }
            break;
        case ModelKind::QeLstm:
            // Quantum feature embedding d -> d, then a classical LSTM.
            add_quantum_block("embed", d, d);
            for (const char* g : kGates) {
                add_affine(g, h, v);
            }
            break;
        case ModelKind::NgLstm: {
            const std::size_t inner =
                spec_.ng_inner_dim > 0 ? static_cast<std::size_t>(spec_.ng_inner_dim) : h;
            for (const char* g : kGates) {
                add_affine(std::string(g) + ".lin1", inner, v);
                add_block(std::string(g) + ".ln.gain", {inner});
                add_block(std::string(g) + ".ln.bias", {inner});
                add_affine(std::string(g) + ".lin2", h, inner);
            }
            break;
        }
        }
        add_affine("head", 1, h);
    }

    static bool ends_with(const std::string& s, const std::string& suffix) {
        return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
    }

    ModelSpec spec_;
    std::vector<ParamBlock> blocks_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// A model's parameter blocks registered as leaves of one tape.
class BoundModel {
  public:
    BoundModel(const Model& model, Tape& tape) : model_(&model), tape_(&tape) {
        ids_.reserve(model.blocks().size());
        for (const auto& b : model.blocks()) {
            ids_.push_back(tape.leaf(b.value, true));
        }
    }

    Tape::NodeId id(const std::string& name) const {
        return ids_[model_->index_.at(name)];
    }

    /// Gradient of a named block after tape.backward().
    Tensor grad(const std::string& name) const { return tape_->grad(id(name)); }

    struct CellState {
        Tape::NodeId h;
        Tape::NodeId c; // unused by GRU
    };

    CellState initial_state() const {
        const auto h = static_cast<std::size_t>(model_->spec().hidden_dim);
        const auto z = tape_->leaf(Tensor::zeros({h}), false);
        return {z, z};
    }

    /// One recurrent update; dispatches on the model kind.
    CellState step(Tape::NodeId x_t, const CellState& state) const {
        switch (model_->spec().kind) {
        case ModelKind::Lstm: return lstm_step(x_t, state, "");
        case ModelKind::Gru: return gru_step(x_t, state);
        case ModelKind::Qlstm: return qlstm_step(x_t, state);
        case ModelKind::QeLstm: return lstm_step(qe_embed(x_t), state, "");
        case ModelKind::NgLstm: return ng_lstm_step(x_t, state);
        }
        throw std::logic_error("unreachable");
    }

    /// Full window -> scalar prediction. Dropout (training mode only) acts
    /// on the final hidden state, before the regression head.
    Tape::NodeId sequence_forward(const std::vector<double>& window, std::size_t k,
                                  bool training = false, RngStream* dropout_rng = nullptr) const {
        const auto d = static_cast<std::size_t>(model_->spec().input_dim);
        if (k < 1 || window.size() != k * d) {
            throw std::invalid_argument("sequence_forward: window must hold k*d values, k >= 1");
        }
        CellState state = initial_state();
        for (std::size_t t = 0; t < k; ++t) {
            std::vector<double> x(window.begin() + static_cast<std::ptrdiff_t>(t * d),
                                  window.begin() + static_cast<std::ptrdiff_t>((t + 1) * d));
            state = step(tape_->leaf(Tensor::vector(std::move(x))), state);
        }
        Tape::NodeId h = state.h;
        const double rate = model_->spec().dropout_rate;
        if (training && rate > 0.0) {
            if (dropout_rng == nullptr) {
                throw std::invalid_argument("sequence_forward: dropout needs an RNG in training");
            }
            h = tape_->dropout(h, rate, *dropout_rng);
        }
        return tape_->affine(h, id("head.w"), id("head.b"));
    }

    /// Classical affine gate pre-activations, shared recurrence (Eqs. of a
    /// standard LSTM). `prefix` is empty for the plain layout.
    CellState lstm_step(Tape::NodeId x_t, const CellState& state, const std::string& prefix) const {
        Tape& t = *tape_;
        const auto v = t.concat(state.h, x_t);
        const auto f = t.sigmoid(gate_affine(prefix + "gate_f", v));
        const auto i = t.sigmoid(gate_affine(prefix + "gate_i", v));
        const auto c_tilde = t.tanh_act(gate_affine(prefix + "gate_c", v));
        const auto o = t.sigmoid(gate_affine(prefix + "gate_o", v));
        const auto c = t.add(t.mul(f, state.c), t.mul(i, c_tilde));
        const auto h = t.mul(o, t.tanh_act(c));
        return {h, c};
    }

    CellState qlstm_step(Tape::NodeId x_t, const CellState& state) const {
        Tape& t = *tape_;
        const auto v = t.concat(state.h, x_t);
        const auto f = t.sigmoid(quantum_gate("gate_f", v));
        const auto i = t.sigmoid(quantum_gate("gate_i", v));
        const auto c_tilde = t.tanh_act(quantum_gate("gate_c", v));
        const auto o = t.sigmoid(quantum_gate("gate_o", v));
        const auto c = t.add(t.mul(f, state.c), t.mul(i, c_tilde));
        const auto h = t.mul(o, t.tanh_act(c));
        return {h, c};
    }

    CellState gru_step(Tape::NodeId x_t, const CellState& state) const {
        Tape& t = *tape_;
        const auto v = t.concat(state.h, x_t);
        const auto z = t.sigmoid(gate_affine("update", v));
        const auto r = t.sigmoid(gate_affine("reset", v));
        const auto vr = t.concat(t.mul(r, state.h), x_t);
        const auto h_tilde = t.tanh_act(gate_affine("cand", vr));
        const auto h = t.add(t.mul(t.one_minus(z), state.h), t.mul(z, h_tilde));
        return {h, h};
    }

    CellState ng_lstm_step(Tape::NodeId x_t, const CellState& state) const {
        Tape& t = *tape_;
        const auto v = t.concat(state.h, x_t);
        const auto f = t.sigmoid(ng_gate("gate_f", v));
        const auto i = t.sigmoid(ng_gate("gate_i", v));
        const auto c_tilde = t.tanh_act(ng_gate("gate_c", v));
        const auto o = t.sigmoid(ng_gate("gate_o", v));
        const auto c = t.add(t.mul(f, state.c), t.mul(i, c_tilde));
        const auto h = t.mul(o, t.tanh_act(c));
        return {h, c};
    }

    /// One quantum gate: pre-projection, circuit, post-projection.
    Tape::NodeId quantum_gate(const std::string& gate, Tape::NodeId v) const {
        Tape& t = *tape_;
        const auto z = t.affine(v, id(gate + ".pre.w"), id(gate + ".pre.b"));
        const auto q = t.quantum_node(model_->spec().vqc, id(gate + ".vqc"), z);
        return t.affine(q, id(gate + ".post.w"), id(gate + ".post.b"));
    }

    /// Linear-LayerNorm-GELU-Linear gate of the NG-LSTM ablation.
    Tape::NodeId ng_gate(const std::string& gate, Tape::NodeId v) const {
        Tape& t = *tape_;
        const auto a = t.affine(v, id(gate + ".lin1.w"), id(gate + ".lin1.b"));
        const auto ln = t.layernorm(a, id(gate + ".ln.gain"), id(gate + ".ln.bias"));
        const auto g = t.gelu(ln);
        return t.affine(g, id(gate + ".lin2.w"), id(gate + ".lin2.b"));
    }

    /// Quantum feature embedding of the QE-LSTM ablation (input level).
    Tape::NodeId qe_embed(Tape::NodeId x_t) const {
        Tape& t = *tape_;
        const auto z = t.affine(x_t, id("embed.pre.w"), id("embed.pre.b"));
        const auto q = t.quantum_node(model_->spec().vqc, id("embed.vqc"), z);
        return t.affine(q, id("embed.post.w"), id("embed.post.b"));
    }

  private:
    Tape::NodeId gate_affine(const std::string& gate, Tape::NodeId v) const {
        return tape_->affine(v, id(gate + ".w"), id(gate + ".b"));
    }

    const Model* model_;
    Tape* tape_;
    std::vector<Tape::NodeId> ids_;
};

inline BoundModel Model::bind(Tape& tape) const { return BoundModel(*this, tape); }

} // namespace qlstm
