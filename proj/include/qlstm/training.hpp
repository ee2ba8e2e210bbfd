// SPDX-License-Identifier: Apache-2.0
/**
 * @file training.hpp
 * Hybrid training loop and evaluation metrics.
 *
 * One replica = (model, dataset, config, seed). Per epoch: seeded window
 * shuffle, mini-batches, batch-mean MSE forward, reverse pass (classical
 * backprop with parameter-shift VJPs at the quantum nodes), global-norm
 * gradient clipping, Adam update, stepped learning-rate decay. All
 * reductions run in a fixed order, so a (config, seed) pair reproduces
 * its history bit for bit.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/dataset.hpp"
#include "qlstm/models.hpp"

namespace qlstm {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    int epochs = 100;
    double lr = 1e-3;
    int batch_size = 64;
    double grad_clip_norm = 1.0;
    double lr_decay_factor = 0.95;
    int lr_decay_every = 10;
    std::vector<std::uint64_t> seeds{11, 22, 33};
    AdamConfig adam;

    void validate() const {
        // lr == 0 is the degenerate no-update run; negative rates are invalid.
        if (epochs < 1 || lr < 0.0 || batch_size < 1) {
            throw std::invalid_argument("TrainConfig: epochs >= 1, lr >= 0, batch_size >= 1");
        }
        if (grad_clip_norm <= 0.0 || lr_decay_factor <= 0.0 || lr_decay_every < 1) {
            throw std::invalid_argument("TrainConfig: invalid clip/decay settings");
        }
        if (seeds.empty()) {
            throw std::invalid_argument("TrainConfig: need at least one seed");
        }
    }
};

/// Stepped decay: lr0 * factor^floor(epoch / every).
inline double lr_schedule(int epoch, double lr0, double factor = 0.95, int every = 10) {
    if (epoch < 0) {
        throw std::invalid_argument("lr_schedule: epoch must be >= 0");
    }
    return lr0 * std::pow(factor, epoch / every);
}

/// Scales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
inline double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    if (max_norm <= 0.0) {
        throw std::invalid_argument("clip_gradients: max_norm must be positive");
    }
    double sq = 0.0;
    for (const auto& g : grads) {
        for (double e : g.v) {
            sq += e * e;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        for (auto& g : grads) {
            for (auto& e : g.v) {
                e *= scale;
            }
        }
    }
    return norm;
}

/// First/second-moment estimates per parameter block.
struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long t = 0;

    static AdamState for_model(const Model& model) {
        AdamState s;
        s.m.reserve(model.blocks().size());
        s.v.reserve(model.blocks().size());
        for (const auto& b : model.blocks()) {
            s.m.emplace_back(b.value.numel(), 0.0);
            s.v.emplace_back(b.value.numel(), 0.0);
        }
        return s;
    }
};

/// Standard Adam with bias correction, applied block by block.
inline void adam_step(Model& model, const std::vector<Tensor>& grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
    auto& blocks = model.blocks();
    if (grads.size() != blocks.size()) {
        throw std::invalid_argument("adam_step: gradient/block count mismatch");
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(cfg.beta1, state.t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, state.t);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        auto& w = blocks[b].value.v;
        const auto& g = grads[b].v;
        if (g.size() != w.size()) {
            throw std::invalid_argument("adam_step: gradient shape mismatch in block " +
                                        blocks[b].name);
        }
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

struct TrainHistory {
    std::vector<double> epoch_loss; // mean train MSE per epoch
};

/// Prediction without gradient bookkeeping.
inline double predict(const Model& model, const Window& window, int k) {
    Tape tape;
    const BoundModel bm = model.bind(tape);
    return tape.value(bm.sequence_forward(window.x, static_cast<std::size_t>(k))).v[0];
}

/**
 * Trains the model in place. The seed fully determines initialization,
 * shuffling and dropout; identical (config, seed) pairs produce
 * bit-identical histories. A non-finite loss aborts with the offending
 * batch id.
 */
inline TrainHistory train(Model& model, const std::vector<Window>& windows, int k,
                          const TrainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (windows.empty()) {
        throw std::invalid_argument("train: empty training set");
    }
    RngStream init_rng = RngStream::substream(seed, 0);
    RngStream shuffle_rng = RngStream::substream(seed, 1);
    RngStream dropout_rng = RngStream::substream(seed, 2);
    model.init_params(init_rng);
    AdamState adam = AdamState::for_model(model);

    const bool uses_dropout = model.spec().dropout_rate > 0.0;
    std::vector<std::size_t> order(windows.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainHistory history;
    history.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    Tape tape;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_every);
        shuffle_rng.shuffle(order);
        double epoch_sq_sum = 0.0;

        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t batch_id = begin / static_cast<std::size_t>(cfg.batch_size);

            tape.reset();
            const BoundModel bm = model.bind(tape);
            std::vector<Tape::NodeId> preds;
            Tensor targets = Tensor::zeros({end - begin});
            preds.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const Window& w = windows[order[i]];
                preds.push_back(bm.sequence_forward(w.x, static_cast<std::size_t>(k), uses_dropout,
                                                    &dropout_rng));
                targets.v[i - begin] = w.y;
            }
            const auto loss = tape.mse_loss(tape.stack(preds), targets);
            const double batch_mse = tape.value(loss).v[0];
            if (!std::isfinite(batch_mse)) {
                throw std::runtime_error("train: non-finite loss in epoch " +
                                         std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_id));
            }
            epoch_sq_sum += batch_mse * static_cast<double>(end - begin);

            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(model.blocks().size());
            for (const auto& b : model.blocks()) {
                grads.push_back(bm.grad(b.name));
            }
            clip_gradients(grads, cfg.grad_clip_norm);
            adam_step(model, grads, adam, lr, cfg.adam);
        }
        history.epoch_loss.push_back(epoch_sq_sum / static_cast<double>(windows.size()));
    }
    return history;
}

struct EvalMetrics {
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> r2;
    std::string r2_missing_reason;
    std::size_t n = 0;
};

/**
 * Test-set metrics on de-normalized predictions (SOH fraction units):
 * MAE, RMSE, and R^2 against the test-set mean. R^2 is reported missing
 * when the targets have zero variance.
 */
inline EvalMetrics evaluate(const Model& model, const std::vector<Window>& test_windows, int k,
                            const Normalizer& norm) {
    if (test_windows.empty()) {
        throw std::invalid_argument("evaluate: empty test set");
    }
    const std::size_t n = test_windows.size();
    std::vector<double> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        truth[i] = test_windows[i].y_raw;
        pred[i] = norm.denormalize_target(predict(model, test_windows[i], k));
    }
    double abs_sum = 0.0, sq_sum = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = truth[i] - pred[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
        mean += truth[i];
    }
    mean /= static_cast<double>(n);

    EvalMetrics m;
    m.n = n;
    m.mae = abs_sum / static_cast<double>(n);
    m.rmse = std::sqrt(sq_sum / static_cast<double>(n));
    if (m.rmse + 1e-15 < m.mae) {
        throw std::logic_error("evaluate: rmse < mae violates the power-mean inequality");
    }
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot <= 0.0) {
        m.r2_missing_reason = "zero target variance";
    } else {
        m.r2 = 1.0 - sq_sum / ss_tot;
        // Internal identity: R^2 = 1 - n*rmse^2 / SStot.
        const double check = 1.0 - static_cast<double>(n) * m.rmse * m.rmse / ss_tot;
        if (std::abs(check - *m.r2) > 1e-10) {
            throw std::logic_error("evaluate: metric identity check failed");
        }
    }
    return m;
}

struct SeedMetrics {
    std::uint64_t seed = 0;
    EvalMetrics metrics;
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& values) {
    MeanStd ms;
    if (values.empty()) {
        return ms;
    }
    for (double v : values) {
        ms.mean += v;
    }
    ms.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        var += (v - ms.mean) * (v - ms.mean);
    }
    ms.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return ms;
}

/// Per-seed metrics plus mean +- std aggregates for one experiment cell.
struct MetricsReport {
    std::string protocol;
    std::string model;
    std::string dataset;
    int n_qubits = 0;
    double noise_p = 0.0;
    std::vector<SeedMetrics> per_seed;

    MeanStd mae() const { return collect([](const EvalMetrics& m) { return m.mae; }); }
    MeanStd rmse() const { return collect([](const EvalMetrics& m) { return m.rmse; }); }
    std::optional<MeanStd> r2() const {
        std::vector<double> vals;
        for (const auto& s : per_seed) {
            if (!s.metrics.r2) {
                return std::nullopt;
            }
            vals.push_back(*s.metrics.r2);
        }
        return mean_std(vals);
    }

  private:
    template <typename F>
    MeanStd collect(F&& f) const {
        std::vector<double> vals;
        vals.reserve(per_seed.size());
        for (const auto& s : per_seed) {
            vals.push_back(f(s.metrics));
        }
        return mean_std(vals);
    }
};

} // namespace qlstm
