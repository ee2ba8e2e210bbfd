// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver for the hybrid quantum-classical SOH toolkit.
//
// Pipeline commands operate on a data directory with fixed file names:
//   cycling_records.csv  raw charge/discharge records
//   features.csv         extracted health indicators + SOH per cycle
//   split.json           cell-level split manifest
//   selection.json       feature-selection report (train partition only)
//   checkpoint.txt       trained model parameters
//
//   qlstm synth   --out data/                  # synthetic benchmark data
//   qlstm extract --data data/ --out data/     # records -> features
//   qlstm split   --data data/ --out data/     # cell-level split manifest
//   qlstm select  --data data/ --out data/     # MI + Spearman selection
//   qlstm train   --data data/ --out run/      # fit one model
//   qlstm eval    --data data/ --out run/      # metrics for a checkpoint
//   qlstm compare | ablate | sweep-qubits | sweep-noise
//                 --data data/ --out run/      # experiment protocols
//
// All knobs come from a line-based key=value --config file; every command
// accepts --seed where randomness is involved. Exit code 0 means every
// requested grid cell completed.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qlstm/qlstm.hpp"

namespace fs = std::filesystem;
using namespace qlstm;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string data_dir = ".";
    std::string out_dir = ".";
    std::uint64_t seed = 11;
    bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value configuration file");
    cmd->add_option("--data", args.data_dir, "input data directory");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--seed", args.seed, "random seed")->each([&](const std::string&) {
        args.seed_given = true;
    });
}

io::Config load_config(const CommonArgs& args) {
    if (args.config_path.empty()) {
        return io::Config{};
    }
    return io::Config::from_file(args.config_path);
}

SynthSpec synth_spec_from(const io::Config& cfg, const CommonArgs& args) {
    SynthSpec spec;
    spec.n_cells = cfg.get_int("n_cells", spec.n_cells);
    spec.cycles_min = cfg.get_int("cycles_min", spec.cycles_min);
    spec.cycles_max = cfg.get_int("cycles_max", spec.cycles_max);
    spec.fade_a = cfg.get_double("fade_a", spec.fade_a);
    spec.fade_b = cfg.get_double("fade_b", spec.fade_b);
    spec.fade_c = cfg.get_double("fade_c", spec.fade_c);
    spec.soh_noise = cfg.get_double("soh_noise", spec.soh_noise);
    spec.feature_noise = cfg.get_double("feature_noise", spec.feature_noise);
    spec.q_nom_ah = cfg.get_double("q_nom_ah", spec.q_nom_ah);
    spec.seed = args.seed_given ? args.seed : cfg.get_u64("seed", spec.seed);
    return spec;
}

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        seeds.push_back(std::stoull(item));
    }
    if (seeds.empty()) {
        throw std::runtime_error("seeds list is empty");
    }
    return seeds;
}

ExperimentConfig experiment_config_from(const io::Config& cfg) {
    ExperimentConfig ec;
    ec.hidden_dim = cfg.get_int("hidden_dim", ec.hidden_dim);
    ec.n_qubits = cfg.get_int("n_qubits", ec.n_qubits);
    ec.n_layers = cfg.get_int("n_layers", ec.n_layers);
    ec.window_k = cfg.get_int("window_k", ec.window_k);
    ec.k_sel = cfg.get_int("k_sel", ec.k_sel);
    ec.mi_bins = cfg.get_int("mi_bins", ec.mi_bins);
    ec.dropout = cfg.get_double("dropout", ec.dropout);
    ec.train_fraction = cfg.get_double("train_fraction", ec.train_fraction);
    ec.split_seed = cfg.get_u64("split_seed", ec.split_seed);
    ec.q_nom_ah = cfg.get_double("q_nom_ah", ec.q_nom_ah);
    ec.train.epochs = cfg.get_int("epochs", ec.train.epochs);
    ec.train.lr = cfg.get_double("lr", ec.train.lr);
    ec.train.batch_size = cfg.get_int("batch_size", ec.train.batch_size);
    ec.train.grad_clip_norm = cfg.get_double("grad_clip_norm", ec.train.grad_clip_norm);
    ec.train.lr_decay_factor = cfg.get_double("lr_decay_factor", ec.train.lr_decay_factor);
    ec.train.lr_decay_every = cfg.get_int("lr_decay_every", ec.train.lr_decay_every);
    if (cfg.has("seeds")) {
        ec.train.seeds = parse_seeds(cfg.get_string("seeds", ""));
    }
    const double noise_p = cfg.get_double("noise_p", 0.0);
    if (noise_p > 0.0) {
        NoiseSpec ns;
        ns.p = noise_p;
        ns.mode = cfg.get_string("noise_mode", "exact") == "trajectory"
                      ? NoiseMode::Trajectory
                      : NoiseMode::ExactAtMeasurement;
        ns.placement = cfg.get_string("noise_placement", "before_measurement") == "after_each_layer"
                           ? NoisePlacement::AfterEachVariationalLayer
                           : NoisePlacement::BeforeMeasurement;
        ns.n_trajectories = cfg.get_int("noise_trajectories", 1);
        ns.seed = cfg.get_u64("noise_seed", 0);
        ec.noise = ns;
    }
    return ec;
}

// Rows tagged by the stored manifest, plus the train-fitted pipeline.
struct LoadedPipeline {
    std::vector<FeatureRow> rows;
    SplitPlan plan;
    SelectionReport selection;
    Normalizer norm;
    SequenceDataset ds;
};

LoadedPipeline load_pipeline(const CommonArgs& args, int window_k) {
    LoadedPipeline p;
    p.rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    p.plan = io::read_split_manifest(fs::path(args.data_dir) / "split.json");
    apply_split(p.rows, p.plan);
    p.selection = io::read_selection_report(fs::path(args.data_dir) / "selection.json");
    std::vector<FeatureRow> train_rows;
    for (const auto& r : p.rows) {
        if (r.prov == Provenance::Train) {
            train_rows.push_back(r);
        }
    }
    p.norm.fit(train_rows);
    p.ds = assemble_dataset(p.rows, p.selection, p.norm, window_k);
    return p;
}

void print_summary(const std::vector<RunResult>& results) {
    std::printf("%-12s %-8s %-12s %7s %8s %6s  %10s %10s %10s\n", "protocol", "model", "dataset",
                "qubits", "p", "seed", "mae", "rmse", "r2");
    for (const auto& r : results) {
        if (r.failed) {
            std::printf("%-12s %-8s %-12s %7d %8.3f %6llu  FAILED: %s\n", r.protocol.c_str(),
                        r.model.c_str(), r.dataset.c_str(), r.n_qubits, r.noise_p,
                        static_cast<unsigned long long>(r.seed), r.error.c_str());
        } else {
            std::printf("%-12s %-8s %-12s %7d %8.3f %6llu  %10.6f %10.6f %10.6f\n",
                        r.protocol.c_str(), r.model.c_str(), r.dataset.c_str(), r.n_qubits,
                        r.noise_p, static_cast<unsigned long long>(r.seed), r.mae, r.rmse,
                        r.r2 ? *r.r2 : std::nan(""));
        }
    }
}

int finish_protocol(const std::vector<RunResult>& results, const CommonArgs& args,
                    const std::string& axis, const std::string& plot_name) {
    io::write_metrics_jsonl(fs::path(args.out_dir) / "metrics.jsonl", results);
    io::write_plot_table(fs::path(args.out_dir) / plot_name, results, axis);
    print_summary(results);
    std::size_t failed = 0;
    for (const auto& r : results) {
        failed += r.failed ? 1 : 0;
    }
    if (failed > 0) {
        std::fprintf(stderr, "%zu of %zu grid cells failed\n", failed, results.size());
        return 1;
    }
    return 0;
}

int cmd_synth(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto spec = synth_spec_from(cfg, args);
    const auto records = synth_generate(spec);
    const auto path = fs::path(args.out_dir) / "cycling_records.csv";
    io::write_records_csv(path, records);
    std::printf("wrote %zu records for %d cells to %s\n", records.size(), spec.n_cells,
                path.string().c_str());
    return 0;
}

int cmd_extract(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const double q_nom = cfg.get_double("q_nom_ah", 2.0);
    const auto records = io::read_records_csv(fs::path(args.data_dir) / "cycling_records.csv");
    std::vector<std::string> skip_log;
    const auto rows = build_feature_table(records, q_nom, &skip_log);
    io::write_features_csv(fs::path(args.out_dir) / "features.csv", rows);
    auto log = io::open_out(fs::path(args.out_dir) / "extract_log.txt");
    for (const auto& s : skip_log) {
        log << "skipped " << s << "\n";
    }
    log << "extracted " << rows.size() << " cycles, skipped " << skip_log.size() << "\n";
    std::printf("extracted %zu cycles (%zu skipped) -> features.csv\n", rows.size(),
                skip_log.size());
    return 0;
}

int cmd_split(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    std::vector<std::string> cells;
    for (const auto& r : rows) {
        cells.push_back(r.cell_id);
    }
    const std::string mode = cfg.get_string("split_mode", "fixed_ratio");
    SplitPlan plan;
    if (mode == "loocv") {
        plan = split_cells(cells, SplitMode::loocv(cfg.get_int("fold", 0)), args.seed);
    } else if (mode == "fixed_ratio") {
        plan = split_cells(cells, SplitMode::fixed_ratio(cfg.get_double("train_fraction", 0.8)),
                           args.seed);
    } else {
        throw std::runtime_error("split_mode must be fixed_ratio or loocv");
    }
    io::write_split_manifest(fs::path(args.out_dir) / "split.json", plan);
    std::printf("split %zu cells -> %zu train / %zu test (%s, seed %llu)\n",
                plan.train_cells.size() + plan.test_cells.size(), plan.train_cells.size(),
                plan.test_cells.size(), plan.mode.c_str(),
                static_cast<unsigned long long>(args.seed));
    return 0;
}

int cmd_select(const CommonArgs& args) {
    const auto cfg = load_config(args);
    auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    const auto plan = io::read_split_manifest(fs::path(args.data_dir) / "split.json");
    apply_split(rows, plan);
    std::vector<FeatureRow> train_rows;
    for (const auto& r : rows) {
        if (r.prov == Provenance::Train) {
            train_rows.push_back(r);
        }
    }
    const auto report =
        select_features(train_rows, cfg.get_int("k_sel", 10), cfg.get_int("mi_bins", 16));
    io::write_selection_report(fs::path(args.out_dir) / "selection.json", report);
    std::printf("selected %d of %d features by MI (bins %d); top feature hi%d\n", report.k_sel,
                kNumHi, report.bins, report.ranking.front() + 1);
    return 0;
}

int cmd_train(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto ec = experiment_config_from(cfg);
    const auto pipe = load_pipeline(args, ec.window_k);
    const auto kind = model_kind_from_string(cfg.get_string("model", "qlstm"));

    ModelSpec spec;
    spec.kind = kind;
    spec.input_dim = static_cast<int>(pipe.ds.feature_indices.size());
    spec.hidden_dim = ec.hidden_dim;
    spec.dropout_rate = ec.dropout;
    if (spec.uses_vqc()) {
        spec.vqc.n_qubits = ec.n_qubits;
        spec.vqc.n_layers = ec.n_layers;
        spec.vqc.noise = ec.noise;
    }
    Model model(spec);
    const auto history = train(model, pipe.ds.train, pipe.ds.k, ec.train, args.seed);
    io::write_checkpoint(fs::path(args.out_dir) / "checkpoint.txt", model);
    io::write_history_csv(fs::path(args.out_dir) / "history.csv", history);
    std::printf("trained %s for %d epochs on %zu windows; final train MSE %.6g\n",
                to_string(kind), ec.train.epochs, pipe.ds.train.size(),
                history.epoch_loss.back());
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto ec = experiment_config_from(cfg);
    const auto pipe = load_pipeline(args, ec.window_k);
    const Model model = io::read_checkpoint(fs::path(args.data_dir) / "checkpoint.txt");
    const auto metrics = evaluate(model, pipe.ds.test, pipe.ds.k, pipe.norm);

    io::json j;
    j["model"] = to_string(model.spec().kind);
    j["n_test_windows"] = metrics.n;
    j["mae"] = metrics.mae;
    j["rmse"] = metrics.rmse;
    if (metrics.r2) {
        j["r2"] = *metrics.r2;
    } else {
        j["r2_missing_reason"] = metrics.r2_missing_reason;
    }
    io::open_out(fs::path(args.out_dir) / "eval.json") << j.dump(2) << "\n";
    std::printf("eval on %zu windows: MAE %.6f RMSE %.6f R2 %s\n", metrics.n, metrics.mae,
                metrics.rmse,
                metrics.r2 ? io::format_double(*metrics.r2).c_str()
                           : metrics.r2_missing_reason.c_str());
    return 0;
}

int cmd_compare(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    const auto results = run_compare(rows, experiment_config_from(cfg));
    return finish_protocol(results, args, "model", "plot_compare.csv");
}

int cmd_ablate(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    const auto results = run_ablate(rows, experiment_config_from(cfg));
    return finish_protocol(results, args, "fold_model", "plot_ablate.csv");
}

int cmd_sweep_qubits(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    std::vector<int> grid{4, 6, 8, 10, 12};
    if (cfg.has("qubit_grid")) {
        grid.clear();
        for (auto s : parse_seeds(cfg.get_string("qubit_grid", ""))) {
            grid.push_back(static_cast<int>(s));
        }
    }
    const auto results = run_qubit_sweep(rows, experiment_config_from(cfg), grid);
    return finish_protocol(results, args, "n_qubits", "plot_qubits.csv");
}

int cmd_sweep_noise(const CommonArgs& args) {
    const auto cfg = load_config(args);
    const auto rows = io::read_features_csv(fs::path(args.data_dir) / "features.csv");
    std::vector<double> grid{0.0, 0.01, 0.02, 0.05};
    if (cfg.has("noise_grid")) {
        grid.clear();
        std::stringstream ss(cfg.get_string("noise_grid", ""));
        std::string item;
        while (std::getline(ss, item, ',')) {
            grid.push_back(std::stod(item));
        }
    }
    const auto results = run_noise_sweep(rows, experiment_config_from(cfg), grid);
    return finish_protocol(results, args, "p", "plot_noise.csv");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid quantum-classical sequence modeling for battery SOH prognostics"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const CommonArgs&);
    };
    const std::vector<Sub> subs{
        {"synth", "generate a synthetic degradation benchmark", cmd_synth},
        {"extract", "extract health indicators and SOH from cycling records", cmd_extract},
        {"split", "write a cell-level train/test split manifest", cmd_split},
        {"select", "rank features by mutual information on the training partition", cmd_select},
        {"train", "train one model on the prepared pipeline", cmd_train},
        {"eval", "evaluate a checkpoint on the test partition", cmd_eval},
        {"compare", "QLSTM vs LSTM vs GRU on one split", cmd_compare},
        {"ablate", "LOOCV ablation: LSTM, NG-LSTM, QE-LSTM, QLSTM", cmd_ablate},
        {"sweep-qubits", "QLSTM accuracy across register widths", cmd_sweep_qubits},
        {"sweep-noise", "QLSTM accuracy across bit-flip noise levels", cmd_sweep_noise},
    };

    std::vector<CommonArgs> all_args(subs.size());
    std::vector<std::pair<CLI::App*, std::size_t>> cmds;
    for (std::size_t i = 0; i < subs.size(); ++i) {
        CLI::App* cmd = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(cmd, all_args[i]);
        cmds.emplace_back(cmd, i);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        for (const auto& [cmd, i] : cmds) {
            if (cmd->parsed()) {
                return subs[i].run(all_args[i]);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
