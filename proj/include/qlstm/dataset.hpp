// SPDX-License-Identifier: Apache-2.0
/**
 * @file dataset.hpp
 * Dataset assembly: cell-level splits (fixed ratio or leave-one-out),
 * train-only min-max normalization, and sliding-window construction.
 *
 * Splits are performed at the battery-cell level so no cycle of a test
 * cell is ever seen in training. Features are scaled to [-1, 1] and the
 * SOH target to [0, 1] using bounds fitted on training rows only;
 * out-of-range test values are NOT clipped, so degradation beyond the
 * training range stays visible. Every emitted dataset re-checks that the
 * train and test cell sets are disjoint.
 */

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "qlstm/features.hpp"
#include "qlstm/rng.hpp"

namespace qlstm {

struct SplitMode {
    enum class Kind { FixedRatio, Loocv } kind = Kind::FixedRatio;
    double train_fraction = 0.8; // FixedRatio
    int fold_index = 0;          // Loocv

    static SplitMode fixed_ratio(double fraction) {
        SplitMode m;
        m.kind = Kind::FixedRatio;
        m.train_fraction = fraction;
        return m;
    }
    static SplitMode loocv(int fold) {
        SplitMode m;
        m.kind = Kind::Loocv;
        m.fold_index = fold;
        return m;
    }
};

struct SplitPlan {
    std::vector<std::string> train_cells;
    std::vector<std::string> test_cells;
    std::uint64_t seed = 0;
    std::string mode; // replayable description, e.g. "fixed_ratio 0.8" / "loocv 2"
};

/// Deterministic cell-level split. Fixed-ratio mode shuffles the sorted
/// cell ids with the seed and cuts at round(fraction * N); LOOCV holds out
/// the fold-indexed cell of the sorted order.
inline SplitPlan split_cells(const std::vector<std::string>& cell_ids, const SplitMode& mode,
                             std::uint64_t seed) {
    std::vector<std::string> cells(cell_ids);
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    const std::size_t n = cells.size();
    if (n < 2) {
        throw std::invalid_argument("split_cells: need at least 2 cells");
    }

    SplitPlan plan;
    plan.seed = seed;
    if (mode.kind == SplitMode::Kind::FixedRatio) {
        if (mode.train_fraction <= 0.0 || mode.train_fraction >= 1.0) {
            throw std::invalid_argument("split_cells: train_fraction must lie in (0, 1)");
        }
        RngStream rng(seed);
        rng.shuffle(cells);
        auto train_count = static_cast<std::size_t>(
            std::llround(mode.train_fraction * static_cast<double>(n)));
        train_count = std::min(std::max<std::size_t>(train_count, 1), n - 1);
        plan.train_cells.assign(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(train_count));
        plan.test_cells.assign(cells.begin() + static_cast<std::ptrdiff_t>(train_count), cells.end());
        plan.mode = "fixed_ratio " + std::to_string(mode.train_fraction);
    } else {
        if (mode.fold_index < 0 || static_cast<std::size_t>(mode.fold_index) >= n) {
            throw std::invalid_argument("split_cells: LOOCV fold index out of range");
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (i == static_cast<std::size_t>(mode.fold_index)) {
                plan.test_cells.push_back(cells[i]);
            } else {
                plan.train_cells.push_back(cells[i]);
            }
        }
        plan.mode = "loocv " + std::to_string(mode.fold_index);
    }
    std::sort(plan.train_cells.begin(), plan.train_cells.end());
    std::sort(plan.test_cells.begin(), plan.test_cells.end());
    return plan;
}

/// One LOOCV fold per cell, in sorted cell order.
inline std::vector<SplitPlan> loocv_folds(const std::vector<std::string>& cell_ids,
                                          std::uint64_t seed = 0) {
    std::vector<std::string> cells(cell_ids);
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    std::vector<SplitPlan> folds;
    folds.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        folds.push_back(split_cells(cells, SplitMode::loocv(static_cast<int>(i)), seed));
    }
    return folds;
}

/// Tags each row's provenance according to the plan's cell membership.
inline void apply_split(std::vector<FeatureRow>& rows, const SplitPlan& plan) {
    const std::set<std::string> train(plan.train_cells.begin(), plan.train_cells.end());
    const std::set<std::string> test(plan.test_cells.begin(), plan.test_cells.end());
    for (auto& r : rows) {
        if (train.count(r.cell_id) != 0) {
            r.prov = Provenance::Train;
        } else if (test.count(r.cell_id) != 0) {
            r.prov = Provenance::Test;
        } else {
            throw std::invalid_argument("apply_split: cell " + r.cell_id +
                                        " is in neither partition");
        }
    }
}

/**
 * Min-max scaling fitted on training rows only: features to [-1, 1], the
 * SOH target to [0, 1]. Degenerate (constant) columns map to 0.
 */
class Normalizer {
  public:
    void fit(const std::vector<FeatureRow>& train_rows) {
        if (train_rows.empty()) {
            throw std::invalid_argument("Normalizer::fit: no training rows");
        }
        for (const auto& r : train_rows) {
            if (r.prov != Provenance::Train) {
                throw leakage_error("Normalizer::fit: test-tagged row for cell " + r.cell_id +
                                    " leaked into normalization");
            }
        }
        f_min_.assign(kNumHi, train_rows.front().hi[0]);
        f_max_.assign(kNumHi, train_rows.front().hi[0]);
        for (int f = 0; f < kNumHi; ++f) {
            f_min_[static_cast<std::size_t>(f)] = train_rows.front().hi[static_cast<std::size_t>(f)];
            f_max_[static_cast<std::size_t>(f)] = train_rows.front().hi[static_cast<std::size_t>(f)];
        }
        y_min_ = y_max_ = train_rows.front().soh;
        for (const auto& r : train_rows) {
            for (int f = 0; f < kNumHi; ++f) {
                f_min_[static_cast<std::size_t>(f)] =
                    std::min(f_min_[static_cast<std::size_t>(f)], r.hi[static_cast<std::size_t>(f)]);
                f_max_[static_cast<std::size_t>(f)] =
                    std::max(f_max_[static_cast<std::size_t>(f)], r.hi[static_cast<std::size_t>(f)]);
            }
            y_min_ = std::min(y_min_, r.soh);
            y_max_ = std::max(y_max_, r.soh);
        }
        fitted_ = true;
    }

    bool fitted() const { return fitted_; }

    double normalize_feature(int index, double value) const {
        check_fitted();
        const double lo = f_min_[static_cast<std::size_t>(index)];
        const double hi = f_max_[static_cast<std::size_t>(index)];
        if (hi <= lo) {
            return 0.0;
        }
        return 2.0 * (value - lo) / (hi - lo) - 1.0;
    }

    double normalize_target(double soh) const {
        check_fitted();
        if (y_max_ <= y_min_) {
            return 0.0;
        }
        return (soh - y_min_) / (y_max_ - y_min_);
    }

    double denormalize_target(double y) const {
        check_fitted();
        if (y_max_ <= y_min_) {
            return y_min_;
        }
        return y * (y_max_ - y_min_) + y_min_;
    }

    /// Row-level application: features scaled to [-1, 1], SOH to [0, 1].
    std::vector<FeatureRow> apply(const std::vector<FeatureRow>& rows) const {
        check_fitted();
        std::vector<FeatureRow> out(rows);
        for (auto& r : out) {
            for (int f = 0; f < kNumHi; ++f) {
                r.hi[static_cast<std::size_t>(f)] =
                    normalize_feature(f, r.hi[static_cast<std::size_t>(f)]);
            }
            r.soh = normalize_target(r.soh);
        }
        return out;
    }

    double feature_min(int index) const { check_fitted(); return f_min_[static_cast<std::size_t>(index)]; }
    double feature_max(int index) const { check_fitted(); return f_max_[static_cast<std::size_t>(index)]; }
    double target_min() const { check_fitted(); return y_min_; }
    double target_max() const { check_fitted(); return y_max_; }

  private:
    void check_fitted() const {
        if (!fitted_) {
            throw std::logic_error("Normalizer: apply before fit");
        }
    }

    std::vector<double> f_min_, f_max_;
    double y_min_ = 0.0, y_max_ = 0.0;
    bool fitted_ = false;
};

struct Window {
    std::string cell_id;
    int target_cycle = 0;
    std::vector<double> x; // k * d_sel, row-major, normalized
    double y = 0.0;        // normalized SOH target at the window's last cycle
    double y_raw = 0.0;    // raw SOH fraction (ground truth for metrics)
    Provenance prov = Provenance::Train;
};

struct SequenceDataset {
    int k = 0;
    std::vector<int> feature_indices; // retained HI indices, ascending
    std::vector<Window> train;
    std::vector<Window> test;

    /// Hard no-leakage check: train and test cell sets must be disjoint.
    void check_no_leakage() const {
        std::set<std::string> train_cells, test_cells;
        for (const auto& w : train) {
            train_cells.insert(w.cell_id);
        }
        for (const auto& w : test) {
            test_cells.insert(w.cell_id);
        }
        for (const auto& c : test_cells) {
            if (train_cells.count(c) != 0) {
                throw leakage_error("SequenceDataset: cell " + c +
                                    " appears in both partitions");
            }
        }
    }
};

/**
 * Sliding windows over one cell's cycle series (sorted by cycle index):
 * exactly max(0, L - k + 1) windows, never spanning cells. The target is
 * the SOH of the window's last cycle.
 */
inline std::vector<Window> make_windows(const std::vector<FeatureRow>& cell_rows,
                                        const std::vector<int>& feature_indices, int k,
                                        const Normalizer& norm) {
    if (k < 1) {
        throw std::invalid_argument("make_windows: k must be >= 1");
    }
    std::vector<FeatureRow> rows(cell_rows);
    std::sort(rows.begin(), rows.end(),
              [](const FeatureRow& a, const FeatureRow& b) { return a.cycle_index < b.cycle_index; });
    for (const auto& r : rows) {
        if (r.cell_id != rows.front().cell_id) {
            throw std::invalid_argument("make_windows: rows must belong to one cell");
        }
    }
    std::vector<Window> windows;
    if (rows.size() < static_cast<std::size_t>(k)) {
        return windows;
    }
    const std::size_t d = feature_indices.size();
    windows.reserve(rows.size() - static_cast<std::size_t>(k) + 1);
    for (std::size_t start = 0; start + static_cast<std::size_t>(k) <= rows.size(); ++start) {
        Window w;
        const auto& last = rows[start + static_cast<std::size_t>(k) - 1];
        w.cell_id = last.cell_id;
        w.target_cycle = last.cycle_index;
        w.prov = last.prov;
        w.x.reserve(static_cast<std::size_t>(k) * d);
        for (std::size_t t = 0; t < static_cast<std::size_t>(k); ++t) {
            const auto& row = rows[start + t];
            for (int f : feature_indices) {
                w.x.push_back(norm.normalize_feature(f, row.hi[static_cast<std::size_t>(f)]));
            }
        }
        w.y = norm.normalize_target(last.soh);
        w.y_raw = last.soh;
        windows.push_back(std::move(w));
    }
    return windows;
}

/**
 * Full assembly: rows (already provenance-tagged) -> selection on the
 * training partition -> train-only normalization -> per-cell windows.
 */
inline SequenceDataset assemble_dataset(const std::vector<FeatureRow>& rows,
                                        const SelectionReport& selection, const Normalizer& norm,
                                        int k) {
    SequenceDataset ds;
    ds.k = k;
    ds.feature_indices = selection.retained;

    std::map<std::string, std::vector<FeatureRow>> by_cell;
    for (const auto& r : rows) {
        by_cell[r.cell_id].push_back(r);
    }
    for (const auto& [cell, cell_rows] : by_cell) {
        auto windows = make_windows(cell_rows, ds.feature_indices, k, norm);
        for (auto& w : windows) {
            (w.prov == Provenance::Train ? ds.train : ds.test).push_back(std::move(w));
        }
    }
    ds.check_no_leakage();
    return ds;
}

} // namespace qlstm
