// SPDX-License-Identifier: Apache-2.0
/**
 * @file autodiff.hpp
 * Minimal reverse-mode automatic differentiation over dense tensors.
 *
 * A Tape is an append-only list of nodes; append order is topological
 * order, and backward traverses it strictly in reverse, accumulating
 * gradients by addition at fan-out into one flat arena (fixed order, so
 * runs are bit-reproducible). The quantum_node op injects parameter-shift
 * circuit gradients (VqcEngine::grad) as a vector-Jacobian product, so
 * hybrid models differentiate end to end through unrolled recurrences.
 * Each node saves exactly the forward values its backward needs. Any
 * non-finite forward value is a hard error.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qlstm/rng.hpp"
#include "qlstm/vqc.hpp"

namespace qlstm {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), v(std::move(values)) {
        if (v.size() != numel_of(shape)) {
            throw std::invalid_argument("Tensor: value count does not match shape");
        }
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        const std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor vector(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values));
    }
    static Tensor scalar(double x) { return Tensor({1}, {x}); }

    std::size_t numel() const { return v.size(); }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               [](std::size_t a, std::size_t b) { return a * b; });
    }
};

namespace detail {

// One engine per circuit geometry/noise setting, reused across calls.
inline VqcEngine& engine_for(const VqcConfig& cfg) {
    struct Key {
        int n_qubits, n_layers, mode, placement;
        double p;
        bool operator<(const Key& o) const {
            return std::tie(n_qubits, n_layers, mode, placement, p) <
                   std::tie(o.n_qubits, o.n_layers, o.mode, o.placement, o.p);
        }
    };
    thread_local std::map<Key, VqcEngine> cache;
    const Key key{cfg.n_qubits, cfg.n_layers,
                  cfg.noise ? static_cast<int>(cfg.noise->mode) : -1,
                  cfg.noise ? static_cast<int>(cfg.noise->placement) : -1,
                  cfg.noise ? cfg.noise->p : 0.0};
    auto it = cache.find(key);
    if (it == cache.end()) {
        it = cache.emplace(key, VqcEngine(cfg)).first;
    }
    return it->second;
}

} // namespace detail

class Tape {
  public:
    using NodeId = int;
    // Upstream gradient of the node's output, in its value layout.
    using Backprop = std::function<void(const double* g, std::size_t n)>;

    NodeId leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, Backprop{});
    }

    const Tensor& value(NodeId id) const { return nodes_[check_id(id)].value; }

    /// y = W x + b with W[out x in] (row-major), b[out].
    NodeId affine(NodeId x, NodeId w, NodeId b) {
        const Tensor& xv = value(x);
        const Tensor& wv = value(w);
        const Tensor& bv = value(b);
        if (wv.shape.size() != 2) {
            throw std::invalid_argument("affine: W must be 2-D");
        }
        const std::size_t out = wv.shape[0];
        const std::size_t in = wv.shape[1];
        if (xv.numel() != in || bv.numel() != out) {
            throw std::invalid_argument("affine: shape mismatch (W " + std::to_string(out) + "x" +
                                        std::to_string(in) + ", x " + std::to_string(xv.numel()) +
                                        ", b " + std::to_string(bv.numel()) + ")");
        }
        Tensor y = Tensor::zeros({out});
        for (std::size_t o = 0; o < out; ++o) {
            double acc = bv.v[o];
            const double* wrow = wv.v.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) {
                acc += wrow[i] * xv.v[i];
            }
            y.v[o] = acc;
        }
        return push(std::move(y), any_grad({x, w, b}),
                    [this, x, w, b, out, in](const double* g, std::size_t) {
                        const Tensor& xv = value(x);
                        const Tensor& wv = value(w);
                        double* gx = grad_buf(x);
                        double* gw = grad_buf(w);
                        double* gb = grad_buf(b);
                        for (std::size_t o = 0; o < out; ++o) {
                            const double go = g[o];
                            gb[o] += go;
                            double* gwrow = gw + o * in;
                            const double* wrow = wv.v.data() + o * in;
                            for (std::size_t i = 0; i < in; ++i) {
                                gwrow[i] += go * xv.v[i];
                                gx[i] += wrow[i] * go;
                            }
                        }
                    });
    }

    NodeId sigmoid(NodeId x) {
        Tensor y = value(x);
        for (auto& e : y.v) {
            e = 1.0 / (1.0 + std::exp(-e));
        }
        const NodeId id = push(std::move(y), any_grad({x}), Backprop{});
        attach(id, [this, x, id](const double* g, std::size_t n) {
            const Tensor& y = value(id);
            double* gx = grad_buf(x);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] += g[i] * y.v[i] * (1.0 - y.v[i]);
            }
        });
        return id;
    }

    NodeId tanh_act(NodeId x) {
        Tensor y = value(x);
        for (auto& e : y.v) {
            e = std::tanh(e);
        }
        const NodeId id = push(std::move(y), any_grad({x}), Backprop{});
        attach(id, [this, x, id](const double* g, std::size_t n) {
            const Tensor& y = value(id);
            double* gx = grad_buf(x);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] += g[i] * (1.0 - y.v[i] * y.v[i]);
            }
        });
        return id;
    }

    /// gelu(x) = x * Phi(x) with the exact Gaussian CDF.
    NodeId gelu(NodeId x) {
        const Tensor& xv = value(x);
        Tensor y = xv;
        for (auto& e : y.v) {
            e = e * normal_cdf(e);
        }
        return push(std::move(y), any_grad({x}), [this, x](const double* g, std::size_t n) {
            const Tensor& xv = value(x);
            double* gx = grad_buf(x);
            for (std::size_t i = 0; i < n; ++i) {
                const double xi = xv.v[i];
                gx[i] += g[i] * (normal_cdf(xi) + xi * normal_pdf(xi));
            }
        });
    }

    NodeId layernorm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5) {
        const Tensor& xv = value(x);
        const std::size_t d = xv.numel();
        if (d < 2) {
            throw std::invalid_argument("layernorm: needs at least 2 elements");
        }
        if (value(gain).numel() != d || value(bias).numel() != d) {
            throw std::invalid_argument("layernorm: gain/bias shape mismatch");
        }
        double mean = 0.0;
        for (double e : xv.v) {
            mean += e;
        }
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double e : xv.v) {
            var += (e - mean) * (e - mean);
        }
        var /= static_cast<double>(d); // population variance
        const double inv_std = 1.0 / std::sqrt(var + eps);

        Tensor xhat = Tensor::zeros({d});
        Tensor y = Tensor::zeros({d});
        const Tensor& gv = value(gain);
        const Tensor& bv = value(bias);
        for (std::size_t i = 0; i < d; ++i) {
            xhat.v[i] = (xv.v[i] - mean) * inv_std;
            y.v[i] = gv.v[i] * xhat.v[i] + bv.v[i];
        }
        return push(std::move(y), any_grad({x, gain, bias}),
                    [this, x, gain, bias, inv_std, xhat = std::move(xhat),
                     d](const double* g, std::size_t) {
                        const Tensor& gv = value(gain);
                        double* gx = grad_buf(x);
                        double* ggain = grad_buf(gain);
                        double* gbias = grad_buf(bias);
                        double mean_gh = 0.0, mean_ghx = 0.0;
                        for (std::size_t i = 0; i < d; ++i) {
                            const double gh = g[i] * gv.v[i];
                            mean_gh += gh;
                            mean_ghx += gh * xhat.v[i];
                        }
                        mean_gh /= static_cast<double>(d);
                        mean_ghx /= static_cast<double>(d);
                        for (std::size_t i = 0; i < d; ++i) {
                            const double gh = g[i] * gv.v[i];
                            ggain[i] += g[i] * xhat.v[i];
                            gbias[i] += g[i];
                            gx[i] += inv_std * (gh - mean_gh - xhat.v[i] * mean_ghx);
                        }
                    });
    }

    /// Hadamard product.
    NodeId mul(NodeId a, NodeId b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        check_same_size(av, bv, "mul");
        Tensor y = av;
        for (std::size_t i = 0; i < y.numel(); ++i) {
            y.v[i] *= bv.v[i];
        }
        return push(std::move(y), any_grad({a, b}), [this, a, b](const double* g, std::size_t n) {
            const Tensor& av = value(a);
            const Tensor& bv = value(b);
            double* ga = grad_buf(a);
            double* gb = grad_buf(b);
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += g[i] * bv.v[i];
                gb[i] += g[i] * av.v[i];
            }
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        check_same_size(av, bv, "add");
        Tensor y = av;
        for (std::size_t i = 0; i < y.numel(); ++i) {
            y.v[i] += bv.v[i];
        }
        return push(std::move(y), any_grad({a, b}), [this, a, b](const double* g, std::size_t n) {
            double* ga = grad_buf(a);
            double* gb = grad_buf(b);
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += g[i];
                gb[i] += g[i];
            }
        });
    }

    NodeId scale(NodeId x, double c) {
        Tensor y = value(x);
        for (auto& e : y.v) {
            e *= c;
        }
        return push(std::move(y), any_grad({x}), [this, x, c](const double* g, std::size_t n) {
            double* gx = grad_buf(x);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] += c * g[i];
            }
        });
    }

    NodeId one_minus(NodeId x) {
        Tensor y = value(x);
        for (auto& e : y.v) {
            e = 1.0 - e;
        }
        return push(std::move(y), any_grad({x}), [this, x](const double* g, std::size_t n) {
            double* gx = grad_buf(x);
            for (std::size_t i = 0; i < n; ++i) {
                gx[i] -= g[i];
            }
        });
    }

    NodeId concat(NodeId a, NodeId b) {
        const Tensor& av = value(a);
        const Tensor& bv = value(b);
        Tensor y = Tensor::zeros({av.numel() + bv.numel()});
        std::copy(av.v.begin(), av.v.end(), y.v.begin());
        std::copy(bv.v.begin(), bv.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(av.numel()));
        const std::size_t na = av.numel();
        return push(std::move(y), any_grad({a, b}),
                    [this, a, b, na](const double* g, std::size_t n) {
                        double* ga = grad_buf(a);
                        double* gb = grad_buf(b);
                        for (std::size_t i = 0; i < na; ++i) {
                            ga[i] += g[i];
                        }
                        for (std::size_t i = na; i < n; ++i) {
                            gb[i - na] += g[i];
                        }
                    });
    }

    /// Stacks scalar nodes into one vector (batched predictions).
    NodeId stack(const std::vector<NodeId>& scalars) {
        if (scalars.empty()) {
            throw std::invalid_argument("stack: empty input");
        }
        Tensor y = Tensor::zeros({scalars.size()});
        bool grad = false;
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            const Tensor& s = value(scalars[i]);
            if (s.numel() != 1) {
                throw std::invalid_argument("stack: inputs must be scalars");
            }
            y.v[i] = s.v[0];
            grad = grad || nodes_[static_cast<std::size_t>(scalars[i])].requires_grad;
        }
        return push(std::move(y), grad, [this, scalars](const double* g, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                grad_buf(scalars[i])[0] += g[i];
            }
        });
    }

    /// Inverted dropout; active only when rate > 0 (training mode).
    NodeId dropout(NodeId x, double rate, RngStream& rng) {
        if (rate < 0.0 || rate >= 1.0) {
            throw std::invalid_argument("dropout: rate must lie in [0, 1)");
        }
        if (rate == 0.0) {
            return x;
        }
        const Tensor& xv = value(x);
        std::vector<double> mask(xv.numel());
        const double keep_scale = 1.0 / (1.0 - rate);
        for (auto& m : mask) {
            m = rng.bernoulli(rate) ? 0.0 : keep_scale;
        }
        Tensor y = xv;
        for (std::size_t i = 0; i < y.numel(); ++i) {
            y.v[i] *= mask[i];
        }
        return push(std::move(y), any_grad({x}),
                    [this, x, mask = std::move(mask)](const double* g, std::size_t n) {
                        double* gx = grad_buf(x);
                        for (std::size_t i = 0; i < n; ++i) {
                            gx[i] += g[i] * mask[i];
                        }
                    });
    }

    /**
     * Quantum circuit node: forward encodes the input vector and runs the
     * VQC; backward injects the parameter-shift VJP, chaining through the
     * encoding map so gradients reach BOTH the variational parameters and
     * the encoded input (which depends on the previous hidden state).
     */
    NodeId quantum_node(const VqcConfig& cfg, NodeId params, NodeId enc_input) {
        const Tensor& pv = value(params);
        const Tensor& zv = value(enc_input);
        if (pv.numel() != static_cast<std::size_t>(cfg.n_variational_params())) {
            throw std::invalid_argument("quantum_node: params size must be n_layers*n_qubits*3");
        }
        if (zv.numel() != static_cast<std::size_t>(cfg.n_qubits)) {
            throw std::invalid_argument("quantum_node: input size must equal n_qubits");
        }
        VqcParams vp;
        vp.n_layers = cfg.n_layers;
        vp.n_qubits = cfg.n_qubits;
        vp.angles = pv.v;
        EncodedAngles enc = encode_angles(zv.v);

        Tensor y;
        if (cfg.noise && cfg.noise->mode == NoiseMode::Trajectory && cfg.noise->p > 0.0) {
            y = Tensor::vector(vqc_forward(cfg, vp, enc));
        } else {
            y = Tensor::zeros({static_cast<std::size_t>(cfg.n_qubits)});
            detail::engine_for(cfg).forward(vp, enc, y.v.data());
        }
        return push(std::move(y), any_grad({params, enc_input}),
                    [this, cfg, params, enc_input, vp = std::move(vp),
                     enc = std::move(enc)](const double* g, std::size_t) {
                        thread_local VqcGradient vjp;
                        detail::engine_for(cfg).grad(vp, enc, g, vjp);
                        double* gp = grad_buf(params);
                        for (std::size_t i = 0; i < vjp.grad_params.angles.size(); ++i) {
                            gp[i] += vjp.grad_params.angles[i];
                        }
                        const Tensor& zv = value(enc_input);
                        double* gz = grad_buf(enc_input);
                        for (std::size_t i = 0; i < zv.numel(); ++i) {
                            const double z = zv.v[i];
                            // d atan(z)/dz and d atan(z^2)/dz
                            gz[i] += vjp.grad_theta_y[i] / (1.0 + z * z) +
                                     vjp.grad_theta_z[i] * 2.0 * z / (1.0 + z * z * z * z);
                        }
                    });
    }

    /// Mean squared error against constant targets; backward is 2(y_hat-y)/N.
    NodeId mse_loss(NodeId pred, const Tensor& target) {
        const Tensor& pv = value(pred);
        if (pv.numel() == 0 || target.numel() != pv.numel()) {
            throw std::invalid_argument("mse_loss: prediction/target length mismatch or empty");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < pv.numel(); ++i) {
            const double d = pv.v[i] - target.v[i];
            acc += d * d;
        }
        const double n = static_cast<double>(pv.numel());
        return push(Tensor::scalar(acc / n), any_grad({pred}),
                    [this, pred, target](const double* g, std::size_t) {
                        const Tensor& pv = value(pred);
                        double* gp = grad_buf(pred);
                        const double n = static_cast<double>(pv.numel());
                        for (std::size_t i = 0; i < pv.numel(); ++i) {
                            gp[i] += g[0] * 2.0 * (pv.v[i] - target.v[i]) / n;
                        }
                    });
    }

    /// Reverse pass from a scalar root. Gradients of untouched nodes are zero.
    void backward(NodeId root) {
        if (value(root).numel() != 1) {
            throw std::invalid_argument("backward: root must be a scalar");
        }
        grad_offset_.resize(nodes_.size());
        std::size_t total = 0;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            grad_offset_[i] = total;
            total += nodes_[i].value.numel();
        }
        grad_arena_.assign(total, 0.0);
        has_grads_ = true;
        grad_arena_[grad_offset_[static_cast<std::size_t>(root)]] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.requires_grad || !node.backprop) {
                continue;
            }
            node.backprop(grad_arena_.data() + grad_offset_[i], node.value.numel());
        }
    }

    /// Gradient of `id` after backward(); zero vector if off the loss path.
    Tensor grad(NodeId id) const {
        const std::size_t i = check_id(id);
        if (!has_grads_) {
            throw std::logic_error("grad: call backward() first");
        }
        const double* base = grad_arena_.data() + grad_offset_[i];
        return Tensor(nodes_[i].value.shape,
                      std::vector<double>(base, base + nodes_[i].value.numel()));
    }

    std::size_t size() const { return nodes_.size(); }

    /// Clears all nodes, keeping allocated capacity for reuse.
    void reset() {
        nodes_.clear();
        grad_offset_.clear();
        has_grads_ = false;
    }

  private:
    struct Node {
        Tensor value;
        bool requires_grad = false;
        Backprop backprop;
    };

    static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
    static double normal_pdf(double x) {
        return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::acos(-1.0));
    }

    std::size_t check_id(NodeId id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
            throw std::out_of_range("Tape: invalid node id");
        }
        return static_cast<std::size_t>(id);
    }

    bool any_grad(std::initializer_list<NodeId> ids) const {
        for (NodeId id : ids) {
            if (nodes_[check_id(id)].requires_grad) {
                return true;
            }
        }
        return false;
    }

    double* grad_buf(NodeId id) { return grad_arena_.data() + grad_offset_[check_id(id)]; }

    static void check_same_size(const Tensor& a, const Tensor& b, const char* op) {
        if (a.numel() != b.numel()) {
            throw std::invalid_argument(std::string(op) + ": operand size mismatch (" +
                                        std::to_string(a.numel()) + " vs " +
                                        std::to_string(b.numel()) + ")");
        }
    }

    static void check_finite(const Tensor& t, const char* where) {
        for (double e : t.v) {
            if (!std::isfinite(e)) {
                throw std::runtime_error(std::string("non-finite value in ") + where);
            }
        }
    }

    NodeId push(Tensor value, bool requires_grad, Backprop backprop) {
        check_finite(value, "forward op");
        nodes_.push_back(Node{std::move(value), requires_grad, std::move(backprop)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    // For ops whose backward closure needs its own node id.
    void attach(NodeId id, Backprop backprop) {
        nodes_[static_cast<std::size_t>(id)].backprop = std::move(backprop);
    }

    std::vector<Node> nodes_;
    std::vector<double> grad_arena_;
    std::vector<std::size_t> grad_offset_;
    bool has_grads_ = false;
};

} // namespace qlstm
