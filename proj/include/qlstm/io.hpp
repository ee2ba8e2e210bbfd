// SPDX-License-Identifier: Apache-2.0
/**
 * @file io.hpp
 * File formats: cycling-record and feature-table CSV, JSON selection
 * reports and split manifests, JSONL metrics records, CSV plot tables,
 * line-based key=value configs, and the model checkpoint format.
 *
 * Checkpoints are structured text with every double printed as %.17g,
 * which round-trips IEEE-754 exactly and is byte-stable across platforms.
 */

#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlstm/dataset.hpp"
#include "qlstm/experiments.hpp"
#include "qlstm/features.hpp"
#include "qlstm/models.hpp"
#include "qlstm/training.hpp"

namespace qlstm {

namespace io {

using json = nlohmann::json;

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path.string());
    }
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open for reading: " + path.string());
    }
    return in;
}

// ---------------------------------------------------------------- records

inline constexpr const char* kRecordsHeader = "cell_id,cycle_index,step,t_s,current_a,voltage_v";

inline void write_records_csv(const std::filesystem::path& path,
                              const std::vector<CyclingRecord>& records) {
    auto out = open_out(path);
    out << kRecordsHeader << "\n";
    for (const auto& r : records) {
        out << r.cell_id << ',' << r.cycle_index << ',' << to_string(r.step) << ','
            << format_double(r.t_s) << ',' << format_double(r.current_a) << ','
            << format_double(r.voltage_v) << "\n";
    }
}

inline std::vector<CyclingRecord> read_records_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != kRecordsHeader) {
        throw std::runtime_error(path.string() + ": expected header '" +
                                 std::string(kRecordsHeader) + "'");
    }
    std::vector<CyclingRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 6) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": expected 6 fields");
        }
        CyclingRecord r;
        r.cell_id = f[0];
        r.cycle_index = std::stoi(f[1]);
        r.step = step_kind_from_string(f[2]);
        r.t_s = std::stod(f[3]);
        r.current_a = std::stod(f[4]);
        r.voltage_v = std::stod(f[5]);
        records.push_back(std::move(r));
    }
    return records;
}

// --------------------------------------------------------------- features

inline std::string feature_header() {
    std::string h = "cell_id,cycle_index";
    for (int i = 1; i <= kNumHi; ++i) {
        h += ",hi" + std::to_string(i);
    }
    return h + ",soh";
}

inline void write_features_csv(const std::filesystem::path& path,
                               const std::vector<FeatureRow>& rows) {
    auto out = open_out(path);
    out << feature_header() << "\n";
    for (const auto& r : rows) {
        out << r.cell_id << ',' << r.cycle_index;
        for (double h : r.hi) {
            out << ',' << format_double(h);
        }
        out << ',' << format_double(r.soh) << "\n";
    }
}

inline std::vector<FeatureRow> read_features_csv(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != feature_header()) {
        throw std::runtime_error(path.string() + ": bad feature-table header");
    }
    std::vector<FeatureRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 2 + kNumHi + 1) {
            throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                     ": wrong field count");
        }
        FeatureRow r;
        r.cell_id = f[0];
        r.cycle_index = std::stoi(f[1]);
        for (int i = 0; i < kNumHi; ++i) {
            r.hi[static_cast<std::size_t>(i)] = std::stod(f[static_cast<std::size_t>(2 + i)]);
        }
        r.soh = std::stod(f.back());
        rows.push_back(std::move(r));
    }
    return rows;
}

// ------------------------------------------------- selection / split JSON

inline void write_selection_report(const std::filesystem::path& path,
                                   const SelectionReport& report) {
    json j;
    j["mi_scores"] = report.mi_scores;
    j["spearman_abs"] = report.spearman_abs;
    j["ranking"] = report.ranking;
    j["retained"] = report.retained;
    j["k_sel"] = report.k_sel;
    j["bins"] = report.bins;
    open_out(path) << j.dump(2) << "\n";
}

inline SelectionReport read_selection_report(const std::filesystem::path& path) {
    json j = json::parse(open_in(path));
    SelectionReport report;
    for (std::size_t i = 0; i < kNumHi; ++i) {
        report.mi_scores[i] = j.at("mi_scores").at(i).get<double>();
        report.spearman_abs[i] = j.at("spearman_abs").at(i).get<double>();
    }
    report.ranking = j.at("ranking").get<std::vector<int>>();
    report.retained = j.at("retained").get<std::vector<int>>();
    report.k_sel = j.at("k_sel").get<int>();
    report.bins = j.at("bins").get<int>();
    return report;
}

inline void write_split_manifest(const std::filesystem::path& path, const SplitPlan& plan) {
    json j;
    j["mode"] = plan.mode;
    j["seed"] = plan.seed;
    j["train_cells"] = plan.train_cells;
    j["test_cells"] = plan.test_cells;
    open_out(path) << j.dump(2) << "\n";
}

inline SplitPlan read_split_manifest(const std::filesystem::path& path) {
    json j = json::parse(open_in(path));
    SplitPlan plan;
    plan.mode = j.at("mode").get<std::string>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.train_cells = j.at("train_cells").get<std::vector<std::string>>();
    plan.test_cells = j.at("test_cells").get<std::vector<std::string>>();
    return plan;
}

// ----------------------------------------------------------- checkpoints

inline constexpr const char* kCheckpointMagic = "qlstm-checkpoint v1";

inline void write_checkpoint(const std::filesystem::path& path, const Model& model) {
    const ModelSpec& spec = model.spec();
    auto out = open_out(path);
    out << kCheckpointMagic << "\n";
    out << "kind " << to_string(spec.kind) << "\n";
    out << "input_dim " << spec.input_dim << "\n";
    out << "hidden_dim " << spec.hidden_dim << "\n";
    out << "n_qubits " << (spec.uses_vqc() ? spec.vqc.n_qubits : 0) << "\n";
    out << "n_layers " << (spec.uses_vqc() ? spec.vqc.n_layers : 0) << "\n";
    out << "noise_p " << format_double(spec.uses_vqc() && spec.vqc.noise ? spec.vqc.noise->p : 0.0)
        << "\n";
    out << "dropout " << format_double(spec.dropout_rate) << "\n";
    out << "ng_inner " << spec.ng_inner_dim << "\n";
    out << "blocks " << model.blocks().size() << "\n";
    for (const auto& b : model.blocks()) {
        out << "block " << b.name << " " << b.value.shape.size();
        for (std::size_t d : b.value.shape) {
            out << ' ' << d;
        }
        out << "\n";
        for (std::size_t i = 0; i < b.value.numel(); ++i) {
            out << (i == 0 ? "" : " ") << format_double(b.value.v[i]);
        }
        out << "\n";
    }
}

inline Model read_checkpoint(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointMagic) {
        throw std::runtime_error(path.string() + ": not a qlstm checkpoint");
    }
    std::map<std::string, std::string> header;
    std::size_t n_blocks = 0;
    for (;;) {
        if (!std::getline(in, line)) {
            throw std::runtime_error(path.string() + ": truncated checkpoint header");
        }
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "blocks") {
            ss >> n_blocks;
            break;
        }
        std::string value;
        ss >> value;
        header[key] = value;
    }

    ModelSpec spec;
    spec.kind = model_kind_from_string(header.at("kind"));
    spec.input_dim = std::stoi(header.at("input_dim"));
    spec.hidden_dim = std::stoi(header.at("hidden_dim"));
    spec.dropout_rate = std::stod(header.at("dropout"));
    spec.ng_inner_dim = std::stoi(header.at("ng_inner"));
    if (spec.uses_vqc()) {
        spec.vqc.n_qubits = std::stoi(header.at("n_qubits"));
        spec.vqc.n_layers = std::stoi(header.at("n_layers"));
        const double p = std::stod(header.at("noise_p"));
        if (p > 0.0) {
            NoiseSpec ns;
            ns.p = p;
            spec.vqc.noise = ns;
        }
    }

    Model model(spec);
    for (std::size_t bi = 0; bi < n_blocks; ++bi) {
        if (!std::getline(in, line)) {
            throw std::runtime_error(path.string() + ": truncated block list");
        }
        std::istringstream ss(line);
        std::string tag, name;
        std::size_t ndims = 0;
        ss >> tag >> name >> ndims;
        if (tag != "block") {
            throw std::runtime_error(path.string() + ": expected 'block', got '" + tag + "'");
        }
        std::vector<std::size_t> shape(ndims);
        for (auto& d : shape) {
            ss >> d;
        }
        auto& block = model.block(name);
        if (block.value.shape != shape) {
            throw std::runtime_error(path.string() + ": shape mismatch in block " + name);
        }
        if (!std::getline(in, line)) {
            throw std::runtime_error(path.string() + ": missing values for block " + name);
        }
        std::istringstream vs(line);
        for (auto& v : block.value.v) {
            if (!(vs >> v)) {
                throw std::runtime_error(path.string() + ": short value line in block " + name);
            }
        }
    }
    return model;
}

// ------------------------------------------------------- metrics / plots

inline json run_result_to_json(const RunResult& r) {
    json j;
    j["protocol"] = r.protocol;
    j["model"] = r.model;
    j["dataset"] = r.dataset;
    j["n_qubits"] = r.n_qubits;
    j["p"] = r.noise_p;
    j["seed"] = r.seed;
    if (r.fold >= 0) {
        j["fold"] = r.fold;
    }
    if (r.failed) {
        j["failed"] = true;
        j["error"] = r.error;
    } else {
        j["mae"] = r.mae;
        j["rmse"] = r.rmse;
        if (r.r2) {
            j["r2"] = *r.r2;
        }
    }
    return j;
}

/// One JSON object per line, one line per grid-cell run.
inline void write_metrics_jsonl(const std::filesystem::path& path,
                                const std::vector<RunResult>& results) {
    auto out = open_out(path);
    for (const auto& r : results) {
        out << run_result_to_json(r).dump() << "\n";
    }
}

/// history.csv: epoch,train_mse
inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
    auto out = open_out(path);
    out << "epoch,train_mse\n";
    for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
        out << e << ',' << format_double(history.epoch_loss[e]) << "\n";
    }
}

namespace detail {

struct Aggregate {
    std::vector<double> mae, rmse, r2;
    bool any_failed = false;

    void add(const RunResult& r) {
        if (r.failed) {
            any_failed = true;
            return;
        }
        mae.push_back(r.mae);
        rmse.push_back(r.rmse);
        if (r.r2) {
            r2.push_back(*r.r2);
        }
    }
};

inline void write_aggregate_row(std::ofstream& out, const Aggregate& agg) {
    const auto mae = mean_std(agg.mae);
    const auto rmse = mean_std(agg.rmse);
    const auto r2 = mean_std(agg.r2);
    out << format_double(mae.mean) << ',' << format_double(mae.stddev) << ','
        << format_double(rmse.mean) << ',' << format_double(rmse.stddev) << ','
        << format_double(r2.mean) << ',' << format_double(r2.stddev) << "\n";
}

} // namespace detail

/// Plot-data table: one aggregated row per grid cell (metric mean/std
/// versus the swept factor), ready for external plotting.
inline void write_plot_table(const std::filesystem::path& path,
                             const std::vector<RunResult>& results, const std::string& axis) {
    // Group key per axis: model, n_qubits, p, or (dataset fold, model).
    std::map<std::string, detail::Aggregate> groups;
    std::vector<std::string> order;
    for (const auto& r : results) {
        std::string key;
        if (axis == "model") {
            key = r.model;
        } else if (axis == "n_qubits") {
            key = std::to_string(r.n_qubits);
        } else if (axis == "p") {
            key = format_double(r.noise_p);
        } else if (axis == "fold_model") {
            key = r.dataset + "," + r.model;
        } else {
            throw std::invalid_argument("write_plot_table: unknown axis " + axis);
        }
        if (groups.find(key) == groups.end()) {
            order.push_back(key);
        }
        groups[key].add(r);
    }
    auto out = open_out(path);
    out << (axis == "fold_model" ? "dataset,model" : axis)
        << ",mae_mean,mae_std,rmse_mean,rmse_std,r2_mean,r2_std\n";
    for (const auto& key : order) {
        out << key << ',';
        detail::write_aggregate_row(out, groups[key]);
    }
}

// ------------------------------------------------------------ key=value

/// Line-based key=value config; '#' starts a comment.
class Config {
  public:
    Config() = default;

    static Config from_file(const std::filesystem::path& path) {
        Config cfg;
        auto in = open_in(path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) {
                line = line.substr(0, hash);
            }
            const auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) {
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                                         ": expected key=value");
            }
            cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }
    double get_double(const std::string& key, double fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }
    int get_int(const std::string& key, int fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoi(it->second);
    }
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoull(it->second);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

} // namespace io

} // namespace qlstm
