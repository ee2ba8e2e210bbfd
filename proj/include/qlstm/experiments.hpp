// SPDX-License-Identifier: Apache-2.0
/**
 * @file experiments.hpp
 * Experiment protocols and the synthetic-degradation generator.
 *
 * The generator emits raw cycling records whose derived SOH follows a
 * linear-plus-exponential fade and whose charge curves deform smoothly
 * with SOH (CC time shrinks, CV time grows, the dQ/dV peak shifts up in
 * voltage and down in magnitude), so all thirteen health indicators stay
 * informative. Protocols: baseline comparison (QLSTM / LSTM / GRU),
 * LOOCV ablation (+ NG-LSTM, QE-LSTM), qubit sweep {4,6,8,10,12}, and the
 * bit-flip noise sweep {0, 0.01, 0.02, 0.05}. Every grid cell is run per
 * seed; single-run failures are recorded and the grid continues.
 */

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/dataset.hpp"
#include "qlstm/features.hpp"
#include "qlstm/models.hpp"
#include "qlstm/rng.hpp"
#include "qlstm/training.hpp"

namespace qlstm {

struct SynthSpec {
    int n_cells = 10;
    int cycles_min = 300;
    int cycles_max = 600;
    // soh(t) = 1 - a*t - b*(exp(c*t) - 1) + noise
    double fade_a = 7.5e-4;
    double fade_b = 1e-3;
    double fade_c = 8e-3;
    double soh_noise = 0.0015;   // per-cycle noise on the fade
    double feature_noise = 0.01; // relative jitter on the charge-curve shape
    double q_nom_ah = 2.0;
    std::uint64_t seed = 1;

    void validate() const {
        if (n_cells < 1 || cycles_min < 1 || cycles_max < cycles_min) {
            throw std::invalid_argument("SynthSpec: bad cell/cycle counts");
        }
        if (q_nom_ah <= 0.0) {
            throw std::invalid_argument("SynthSpec: q_nom_ah must be positive");
        }
        if (soh_noise < 0.0 || feature_noise < 0.0) {
            throw std::invalid_argument("SynthSpec: noise levels must be >= 0");
        }
    }
};

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Appends one cycle's CC / CV / discharge records. The CC voltage curve is
// built so that dQ/dV is a truncated Gaussian whose center, width and mass
// track the state of health.
inline void emit_cycle(std::vector<CyclingRecord>& out, const std::string& cell, int cycle,
                       double soh, double q_nom, double jitter, RngStream& rng) {
    const double fade = 1.0 - soh;
    auto jittered = [&](double v) { return v * (1.0 + jitter * rng.gaussian()); };

    const double capacity = q_nom * soh; // Ah
    const double i_charge = 0.5 * q_nom; // 0.5C
    const double cc_fraction = 0.75 + 0.10 * soh;
    const double q_cc = capacity * cc_fraction;

    // Charge-curve shape parameters, smooth in SOH.
    const double v_start = jittered(3.00 + 0.04 * fade);
    const double v_hold = 3.60;
    const double mu = jittered(3.32 + 0.12 * fade);
    const double sigma = jittered(0.045 + 0.025 * fade);

    // CC: t(V) from Q(V) = q_cc * (Phi(v) - Phi(lo)) / (Phi(hi) - Phi(lo)).
    // Deep in the Gaussian tail the mass increments can underflow, so
    // timestamps carry a 10 ms logger-resolution floor to keep time
    // strictly increasing.
    const double phi_lo = std_normal_cdf((v_start - mu) / sigma);
    const double phi_hi = std_normal_cdf((v_hold - mu) / sigma);
    const int n_cc = 90;
    double prev_t = -1.0;
    for (int j = 0; j <= n_cc; ++j) {
        const double v = v_start + (v_hold - v_start) * j / n_cc;
        const double mass = (std_normal_cdf((v - mu) / sigma) - phi_lo) / (phi_hi - phi_lo);
        double t = q_cc * mass * 3600.0 / i_charge;
        if (j > 0 && t < prev_t + 0.01) {
            t = prev_t + 0.01;
        }
        prev_t = t;
        out.push_back({cell, cycle, StepKind::CCCharge, t, i_charge, v});
    }

    // CV: exponential current decay at the hold voltage; the time constant
    // grows as the cell ages.
    const double tau = jittered(900.0 * (1.0 + 1.2 * fade));
    const double i_cut = 0.05 * q_nom;
    const double cv_dur = tau * std::log(i_charge / i_cut);
    const int n_cv = 40;
    for (int j = 0; j <= n_cv; ++j) {
        const double t = cv_dur * j / n_cv;
        out.push_back({cell, cycle, StepKind::CVCharge, t, i_charge * std::exp(-t / tau), v_hold});
    }

    // Discharge at 1C: duration encodes the capacity exactly.
    const double i_dis = q_nom;
    const double dis_dur = capacity * 3600.0 / i_dis;
    const int n_dis = 40;
    for (int j = 0; j <= n_dis; ++j) {
        const double t = dis_dur * j / n_dis;
        const double v = 3.30 - 0.45 * (t / dis_dur);
        out.push_back({cell, cycle, StepKind::Discharge, t, -i_dis, v});
    }
}

} // namespace detail

/**
 * Deterministic synthetic cycling-record table. Per cell, the cycle count
 * is drawn from [cycles_min, cycles_max] and the fade parameters receive
 * +-10% inter-cell variation; with zero noise the SOH sequence is strictly
 * decreasing, and every cell crosses the 80% end-of-life line within its
 * cycle budget.
 */
inline std::vector<CyclingRecord> synth_generate(const SynthSpec& spec) {
    spec.validate();
    std::vector<CyclingRecord> records;
    for (int cell = 0; cell < spec.n_cells; ++cell) {
        RngStream rng = RngStream::substream(spec.seed, static_cast<std::uint64_t>(cell));
        const int cycles =
            spec.cycles_min +
            static_cast<int>(rng.uniform_below(
                static_cast<std::uint64_t>(spec.cycles_max - spec.cycles_min + 1)));
        const double a = spec.fade_a * rng.uniform(0.9, 1.1);
        const double b = spec.fade_b * rng.uniform(0.9, 1.1);
        const double c = spec.fade_c * rng.uniform(0.9, 1.1);

        char name[24];
        std::snprintf(name, sizeof(name), "synth_%02d", cell);
        for (int t = 1; t <= cycles; ++t) {
            double soh = 1.0 - a * t - b * (std::exp(c * t) - 1.0);
            if (spec.soh_noise > 0.0) {
                soh += spec.soh_noise * rng.gaussian();
            }
            soh = std::max(soh, 0.05);
            detail::emit_cycle(records, name, t, soh, spec.q_nom_ah, spec.feature_noise, rng);
        }
    }
    return records;
}

/// One grid cell of an experiment protocol.
struct RunResult {
    std::string protocol;
    std::string model;
    std::string dataset = "synthetic";
    int n_qubits = 0;
    double noise_p = 0.0;
    int fold = -1; // LOOCV fold, -1 otherwise
    std::uint64_t seed = 0;
    double mae = 0.0;
    double rmse = 0.0;
    std::optional<double> r2;
    bool failed = false;
    std::string error;
};

/// Dimensions and pipeline settings shared by all protocols.
struct ExperimentConfig {
    int hidden_dim = 8;
    int n_qubits = 4;
    int n_layers = 1;
    int window_k = 10;
    int k_sel = 10;
    int mi_bins = 16;
    double dropout = 0.0;
    double train_fraction = 0.8;
    std::uint64_t split_seed = 7;
    double q_nom_ah = 2.0;
    TrainConfig train;
    std::optional<NoiseSpec> noise; // applied to quantum models when set
};

/// Rows tagged by one split, with the fold's selection and normalizer.
struct Pipeline {
    SplitPlan plan;
    SelectionReport selection;
    Normalizer norm;
    SequenceDataset ds;
};

/// Selection and normalization fitted on the plan's training partition
/// only, then windows for both partitions. Shared by every model of a
/// protocol so all variants see identical inputs.
inline Pipeline build_pipeline(const std::vector<FeatureRow>& rows, const SplitPlan& plan,
                               const ExperimentConfig& cfg) {
    Pipeline p;
    p.plan = plan;
    std::vector<FeatureRow> tagged(rows);
    apply_split(tagged, plan);
    std::vector<FeatureRow> train_rows;
    for (const auto& r : tagged) {
        if (r.prov == Provenance::Train) {
            train_rows.push_back(r);
        }
    }
    p.selection = select_features(train_rows, cfg.k_sel, cfg.mi_bins);
    p.norm.fit(train_rows);
    p.ds = assemble_dataset(tagged, p.selection, p.norm, cfg.window_k);
    if (p.ds.train.empty() || p.ds.test.empty()) {
        throw std::invalid_argument("build_pipeline: a partition has no windows");
    }
    return p;
}

inline std::vector<std::string> cell_ids_of(const std::vector<FeatureRow>& rows) {
    std::vector<std::string> cells;
    cells.reserve(rows.size());
    for (const auto& r : rows) {
        cells.push_back(r.cell_id);
    }
    return cells;
}

namespace detail {

inline ModelSpec make_model_spec(ModelKind kind, int input_dim, const ExperimentConfig& cfg) {
    ModelSpec spec;
    spec.kind = kind;
    spec.input_dim = input_dim;
    spec.hidden_dim = cfg.hidden_dim;
    spec.dropout_rate = cfg.dropout;
    if (spec.uses_vqc()) {
        spec.vqc.n_qubits = cfg.n_qubits;
        spec.vqc.n_layers = cfg.n_layers;
        spec.vqc.noise = cfg.noise;
    }
    return spec;
}

} // namespace detail

/**
 * Trains and evaluates one (model kind, seed) grid cell on a built
 * pipeline. Failures are captured in the result, not thrown.
 */
inline RunResult run_single(const std::string& protocol, ModelKind kind, const Pipeline& pipe,
                            const ExperimentConfig& cfg, std::uint64_t seed) {
    RunResult r;
    r.protocol = protocol;
    r.model = to_string(kind);
    r.seed = seed;
    ModelSpec spec =
        detail::make_model_spec(kind, static_cast<int>(pipe.ds.feature_indices.size()), cfg);
    r.n_qubits = spec.uses_vqc() ? spec.vqc.n_qubits : 0;
    r.noise_p = (spec.uses_vqc() && spec.vqc.noise) ? spec.vqc.noise->p : 0.0;
    try {
        Model model(spec);
        train(model, pipe.ds.train, pipe.ds.k, cfg.train, seed);
        const auto metrics = evaluate(model, pipe.ds.test, pipe.ds.k, pipe.norm);
        r.mae = metrics.mae;
        r.rmse = metrics.rmse;
        r.r2 = metrics.r2;
    } catch (const std::exception& e) {
        r.failed = true;
        r.error = e.what();
    }
    return r;
}

/**
 * Baseline comparison: QLSTM vs LSTM vs GRU on one fixed-ratio cell-level
 * split, identical features / normalization / optimization per model.
 */
inline std::vector<RunResult> run_compare(const std::vector<FeatureRow>& rows,
                                          const ExperimentConfig& cfg) {
    const auto plan =
        split_cells(cell_ids_of(rows), SplitMode::fixed_ratio(cfg.train_fraction), cfg.split_seed);
    const auto pipe = build_pipeline(rows, plan, cfg);
    std::vector<RunResult> results;
    for (ModelKind kind : {ModelKind::Qlstm, ModelKind::Lstm, ModelKind::Gru}) {
        for (std::uint64_t seed : cfg.train.seeds) {
            results.push_back(run_single("compare", kind, pipe, cfg, seed));
        }
    }
    return results;
}

/**
 * Structural ablation under cell-level LOOCV: LSTM, NG-LSTM, QE-LSTM and
 * QLSTM share each fold's selection report and normalizer.
 */
inline std::vector<RunResult> run_ablate(const std::vector<FeatureRow>& rows,
                                         const ExperimentConfig& cfg) {
    const auto folds = loocv_folds(cell_ids_of(rows), cfg.split_seed);
    std::vector<RunResult> results;
    for (std::size_t fold = 0; fold < folds.size(); ++fold) {
        const auto pipe = build_pipeline(rows, folds[fold], cfg);
        for (ModelKind kind :
             {ModelKind::Lstm, ModelKind::NgLstm, ModelKind::QeLstm, ModelKind::Qlstm}) {
            for (std::uint64_t seed : cfg.train.seeds) {
                auto r = run_single("ablate", kind, pipe, cfg, seed);
                r.fold = static_cast<int>(fold);
                r.dataset = folds[fold].test_cells.front();
                results.push_back(std::move(r));
            }
        }
    }
    return results;
}

/// QLSTM accuracy as a function of register width, all else fixed.
inline std::vector<RunResult> run_qubit_sweep(const std::vector<FeatureRow>& rows,
                                              const ExperimentConfig& cfg,
                                              const std::vector<int>& qubit_grid = {4, 6, 8, 10,
                                                                                    12}) {
    const auto plan =
        split_cells(cell_ids_of(rows), SplitMode::fixed_ratio(cfg.train_fraction), cfg.split_seed);
    const auto pipe = build_pipeline(rows, plan, cfg);
    std::vector<RunResult> results;
    for (int n : qubit_grid) {
        ExperimentConfig cell_cfg = cfg;
        cell_cfg.n_qubits = n;
        for (std::uint64_t seed : cfg.train.seeds) {
            results.push_back(run_single("qubit_sweep", ModelKind::Qlstm, pipe, cell_cfg, seed));
        }
    }
    return results;
}

/// QLSTM robustness under the exact bit-flip channel.
inline std::vector<RunResult> run_noise_sweep(const std::vector<FeatureRow>& rows,
                                              const ExperimentConfig& cfg,
                                              const std::vector<double>& p_grid = {0.0, 0.01, 0.02,
                                                                                   0.05}) {
    const auto plan =
        split_cells(cell_ids_of(rows), SplitMode::fixed_ratio(cfg.train_fraction), cfg.split_seed);
    const auto pipe = build_pipeline(rows, plan, cfg);
    std::vector<RunResult> results;
    for (double p : p_grid) {
        ExperimentConfig cell_cfg = cfg;
        if (p > 0.0) {
            NoiseSpec ns;
            ns.p = p;
            ns.mode = NoiseMode::ExactAtMeasurement;
            ns.placement = NoisePlacement::BeforeMeasurement;
            cell_cfg.noise = ns;
        } else {
            cell_cfg.noise.reset();
        }
        for (std::uint64_t seed : cfg.train.seeds) {
            auto r = run_single("noise_sweep", ModelKind::Qlstm, pipe, cell_cfg, seed);
            r.noise_p = p;
            results.push_back(std::move(r));
        }
    }
    return results;
}

} // namespace qlstm
