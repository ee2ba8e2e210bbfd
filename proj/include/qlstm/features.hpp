// SPDX-License-Identifier: Apache-2.0
/**
 * @file features.hpp
 * Battery health-indicator extraction and dual-metric feature selection.
 *
 * From raw cycling records (constant-current charge, constant-voltage
 * charge, discharge) each full cycle yields:
 *   - the SOH ground truth: ampere-hour integral of the discharge current
 *     over the nominal capacity,
 *   - thirteen health indicators: charge-phase durations, interpolated
 *     current/voltage probes, charge energies, voltage-curve statistics
 *     (slope, entropy, skewness) and the dominant dQ/dV peak (voltage,
 *     area, magnitude) from incremental capacity analysis.
 * Feature relevance is scored with a binned mutual-information estimator
 * (primary criterion) and Spearman rank correlation (reported alongside);
 * the top-k features by MI are retained. Selection must only ever see
 * training rows; test-tagged rows raise leakage_error.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace qlstm {

inline constexpr int kNumHi = 13;

enum class StepKind { CCCharge, CVCharge, Discharge, Rest };

inline const char* to_string(StepKind s) {
    switch (s) {
    case StepKind::CCCharge: return "cc_charge";
    case StepKind::CVCharge: return "cv_charge";
    case StepKind::Discharge: return "discharge";
    case StepKind::Rest: return "rest";
    }
    return "?";
}

inline StepKind step_kind_from_string(const std::string& s) {
    if (s == "cc_charge") return StepKind::CCCharge;
    if (s == "cv_charge") return StepKind::CVCharge;
    if (s == "discharge") return StepKind::Discharge;
    if (s == "rest") return StepKind::Rest;
    throw std::invalid_argument("unknown step kind: " + s);
}

struct CyclingRecord {
    std::string cell_id;
    int cycle_index = 0;
    StepKind step = StepKind::Rest;
    double t_s = 0.0;      // monotone within a (cell, cycle, step) group
    double current_a = 0.0; // signed, + = charge
    double voltage_v = 0.0;
};

/// Time-ordered slices of one cycle. Rest records are dropped.
struct CycleProfile {
    std::string cell_id;
    int cycle_index = 0;
    std::vector<CyclingRecord> cc;
    std::vector<CyclingRecord> cv;
    std::vector<CyclingRecord> discharge;
};

enum class Provenance { Train, Test };

/// Raised when a training-only computation receives test-tagged rows.
struct leakage_error : std::logic_error {
    explicit leakage_error(const std::string& what) : std::logic_error(what) {}
};

struct FeatureRow {
    std::string cell_id;
    int cycle_index = 0;
    std::array<double, kNumHi> hi{};
    double soh = 0.0;
    Provenance prov = Provenance::Train;
};

namespace detail {

// Gaussian elimination with partial pivoting; a is n x n row-major.
inline std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) {
                pivot = r;
            }
        }
        if (std::abs(a[pivot * n + col]) < 1e-30) {
            throw std::runtime_error("solve_linear: singular system");
        }
        if (pivot != col) {
            for (std::size_t c = 0; c < n; ++c) {
                std::swap(a[col * n + c], a[pivot * n + c]);
            }
            std::swap(b[col], b[pivot]);
        }
        for (std::size_t r = col + 1; r < n; ++r) {
            const double factor = a[r * n + col] / a[col * n + col];
            for (std::size_t c = col; c < n; ++c) {
                a[r * n + c] -= factor * a[col * n + c];
            }
            b[r] -= factor * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double acc = b[r];
        for (std::size_t c = r + 1; c < n; ++c) {
            acc -= a[r * n + c] * x[c];
        }
        x[r] = acc / a[r * n + r];
    }
    return x;
}

// Least-squares polynomial fit over integer offsets, evaluated at offset 0.
inline double polyfit_at_zero(const std::vector<double>& offsets, const std::vector<double>& y,
                              int order) {
    const int terms = order + 1;
    std::vector<double> ata(static_cast<std::size_t>(terms * terms), 0.0);
    std::vector<double> aty(static_cast<std::size_t>(terms), 0.0);
    for (std::size_t s = 0; s < offsets.size(); ++s) {
        double pow_i = 1.0;
        std::vector<double> powers(static_cast<std::size_t>(terms));
        for (int i = 0; i < terms; ++i) {
            powers[static_cast<std::size_t>(i)] = pow_i;
            pow_i *= offsets[s];
        }
        for (int i = 0; i < terms; ++i) {
            aty[static_cast<std::size_t>(i)] += powers[static_cast<std::size_t>(i)] * y[s];
            for (int j = 0; j < terms; ++j) {
                ata[static_cast<std::size_t>(i * terms + j)] +=
                    powers[static_cast<std::size_t>(i)] * powers[static_cast<std::size_t>(j)];
            }
        }
    }
    return solve_linear(std::move(ata), std::move(aty))[0]; // constant term = value at 0
}

inline double trapezoid(const std::vector<double>& x, const std::vector<double>& y) {
    double acc = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
    }
    return acc;
}

// Linear interpolation on a non-decreasing abscissa. Flat spans take the
// right-hand value.
inline double interp1(const std::vector<double>& x, const std::vector<double>& y, double xq) {
    if (xq <= x.front()) {
        return y.front();
    }
    if (xq >= x.back()) {
        return y.back();
    }
    const auto it = std::upper_bound(x.begin(), x.end(), xq);
    const std::size_t hi = static_cast<std::size_t>(it - x.begin());
    const std::size_t lo = hi - 1;
    const double span = x[hi] - x[lo];
    if (span <= 0.0) {
        return y[hi];
    }
    const double w = (xq - x[lo]) / span;
    return y[lo] + w * (y[hi] - y[lo]);
}

// Average ranks (1-based); ties receive the mean of their rank range.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) {
            ++j;
        }
        const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = mean_rank;
        }
        i = j + 1;
    }
    return ranks;
}

} // namespace detail

/**
 * Groups one cycle's records (sorted by step, then time) into CC / CV /
 * discharge slices. Cycles without a CC or discharge step are skipped,
 * with the reason reported; malformed data (non-monotone time,
 * non-positive voltage) is a hard error.
 */
inline std::optional<CycleProfile> segment_cycle(const std::vector<CyclingRecord>& records,
                                                 std::string* skip_reason = nullptr) {
    CycleProfile profile;
    if (!records.empty()) {
        profile.cell_id = records.front().cell_id;
        profile.cycle_index = records.front().cycle_index;
    }
    for (const auto& r : records) {
        if (r.voltage_v <= 0.0) {
            throw std::invalid_argument("segment_cycle: non-positive voltage at t=" +
                                        std::to_string(r.t_s));
        }
        std::vector<CyclingRecord>* slice = nullptr;
        switch (r.step) {
        case StepKind::CCCharge: slice = &profile.cc; break;
        case StepKind::CVCharge: slice = &profile.cv; break;
        case StepKind::Discharge: slice = &profile.discharge; break;
        case StepKind::Rest: continue;
        }
        if (!slice->empty() && r.t_s <= slice->back().t_s) {
            throw std::invalid_argument("segment_cycle: time not strictly increasing in step " +
                                        std::string(to_string(r.step)));
        }
        slice->push_back(r);
    }
    if (profile.cc.empty() || profile.discharge.empty()) {
        if (skip_reason != nullptr) {
            *skip_reason = profile.cc.empty() ? "missing cc_charge step" : "missing discharge step";
        }
        return std::nullopt;
    }
    return profile;
}

/// SOH = (ampere-hour integral of |I| over the discharge) / Q_nom.
inline double compute_soh(const CycleProfile& profile, double q_nom_ah) {
    if (q_nom_ah <= 0.0) {
        throw std::invalid_argument("compute_soh: Q_nom must be positive");
    }
    if (profile.discharge.empty()) {
        throw std::invalid_argument("compute_soh: empty discharge segment");
    }
    double q_as = 0.0; // ampere-seconds
    for (std::size_t i = 1; i < profile.discharge.size(); ++i) {
        const auto& a = profile.discharge[i - 1];
        const auto& b = profile.discharge[i];
        q_as += 0.5 * (std::abs(a.current_a) + std::abs(b.current_a)) * (b.t_s - a.t_s);
    }
    return q_as / 3600.0 / q_nom_ah;
}

/**
 * Savitzky-Golay smoothing: per-point least-squares polynomial fit over a
 * centered window, evaluated at the center. Edge points use the shrunken
 * window that fits (order capped at point count - 1). Polynomials of
 * degree <= order pass through unchanged on interior points.
 */
inline std::vector<double> savgol_smooth(const std::vector<double>& y, int window, int order) {
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("savgol_smooth: window must be odd and positive");
    }
    if (order < 0 || order >= window) {
        throw std::invalid_argument("savgol_smooth: order must satisfy 0 <= order < window");
    }
    const std::size_t n = y.size();
    if (n < static_cast<std::size_t>(window)) {
        throw std::invalid_argument("savgol_smooth: series shorter than window");
    }
    const int hw = window / 2;

    // Interior weights depend only on the geometry; compute them once by
    // fitting each unit vector.
    std::vector<double> offsets(static_cast<std::size_t>(window));
    for (int j = 0; j < window; ++j) {
        offsets[static_cast<std::size_t>(j)] = j - hw;
    }
    std::vector<double> weights(static_cast<std::size_t>(window));
    for (int j = 0; j < window; ++j) {
        std::vector<double> unit(static_cast<std::size_t>(window), 0.0);
        unit[static_cast<std::size_t>(j)] = 1.0;
        weights[static_cast<std::size_t>(j)] = detail::polyfit_at_zero(offsets, unit, order);
    }

    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - hw);
        const std::ptrdiff_t hi =
            std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1,
                                     static_cast<std::ptrdiff_t>(i) + hw);
        if (hi - lo + 1 == window) {
            double acc = 0.0;
            for (int j = 0; j < window; ++j) {
                acc += weights[static_cast<std::size_t>(j)] * y[static_cast<std::size_t>(lo + j)];
            }
            out[i] = acc;
        } else {
            const int npts = static_cast<int>(hi - lo + 1);
            const int eff_order = std::min(order, npts - 1);
            std::vector<double> offs(static_cast<std::size_t>(npts));
            std::vector<double> vals(static_cast<std::size_t>(npts));
            for (int j = 0; j < npts; ++j) {
                offs[static_cast<std::size_t>(j)] =
                    static_cast<double>(lo + j) - static_cast<double>(i);
                vals[static_cast<std::size_t>(j)] = y[static_cast<std::size_t>(lo + j)];
            }
            out[i] = detail::polyfit_at_zero(offs, vals, eff_order);
        }
    }
    return out;
}

/// Least-squares slope of y against x; 0 when x has no variance.
inline double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.empty()) {
        throw std::invalid_argument("least_squares_slope: need equal non-empty series");
    }
    const bool y_constant =
        std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
    if (y_constant) {
        return 0.0;
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    return den > 0.0 ? num / den : 0.0;
}

/// Shannon entropy (bits) of a fixed-width histogram over the series' own
/// [min, max]. A constant series occupies a single bin: entropy 0.
inline double shannon_entropy_bits(const std::vector<double>& v, int bins = 30) {
    if (v.empty() || bins < 1) {
        throw std::invalid_argument("shannon_entropy_bits: need data and bins >= 1");
    }
    double lo = v.front(), hi = v.front();
    for (double e : v) {
        lo = std::min(lo, e);
        hi = std::max(hi, e);
    }
    if (hi <= lo) {
        return 0.0;
    }
    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    const double width = (hi - lo) / bins;
    for (double e : v) {
        int b = static_cast<int>((e - lo) / width);
        b = std::min(b, bins - 1);
        counts[static_cast<std::size_t>(b)] += 1.0;
    }
    double entropy = 0.0;
    const double total = static_cast<double>(v.size());
    for (double c : counts) {
        if (c > 0.0) {
            const double p = c / total;
            entropy -= p * std::log2(p);
        }
    }
    return entropy;
}

/// Fisher-Pearson skewness g1 = m3 / m2^(3/2) on population moments;
/// 0 for zero variance.
inline double fisher_pearson_skewness(const std::vector<double>& v) {
    if (v.empty()) {
        throw std::invalid_argument("fisher_pearson_skewness: empty series");
    }
    if (std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); })) {
        return 0.0;
    }
    double mean = 0.0;
    for (double e : v) {
        mean += e;
    }
    mean /= static_cast<double>(v.size());
    double m2 = 0.0, m3 = 0.0;
    for (double e : v) {
        const double d = e - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(v.size());
    m3 /= static_cast<double>(v.size());
    return m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
}

struct IcaPeaks {
    double peak_voltage = 0.0;   // HI11
    double peak_area = 0.0;      // HI12
    double peak_magnitude = 0.0; // HI13
};

inline constexpr double kIcaGridStepV = 0.002; // 2 mV
inline constexpr int kIcaSavgolWindow = 21;
inline constexpr int kIcaSavgolOrder = 3;

/**
 * Incremental capacity analysis over the CC charge segment:
 * Q(t) by trapezoidal integration, resampled onto a uniform 2 mV voltage
 * grid, differentiated centrally and Savitzky-Golay smoothed (21, 3).
 * Returns the dominant peak's voltage, half-maximum area, and magnitude.
 * Degenerate curves (non-monotone voltage after smoothing, too few grid
 * points) are reported through `skip_reason`.
 */
inline std::optional<IcaPeaks> compute_ica(const CycleProfile& profile,
                                           std::string* skip_reason = nullptr) {
    const auto& cc = profile.cc;
    if (cc.size() < 3) {
        throw std::invalid_argument("compute_ica: CC segment needs at least 3 samples");
    }
    auto fail = [&](const char* why) -> std::optional<IcaPeaks> {
        if (skip_reason != nullptr) {
            *skip_reason = why;
        }
        return std::nullopt;
    };

    const std::size_t n = cc.size();
    std::vector<double> t(n), v(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
        t[i] = cc[i].t_s;
        v[i] = cc[i].voltage_v;
    }
    q[0] = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        q[i] = q[i - 1] +
               0.5 * (cc[i].current_a + cc[i - 1].current_a) * (t[i] - t[i - 1]) / 3600.0; // Ah
    }

    // Pre-smooth the voltage before monotonicity screening and resampling.
    const int v_window = std::min<int>(kIcaSavgolWindow, static_cast<int>(n) | 1);
    const auto v_smooth = savgol_smooth(v, v_window, std::min(kIcaSavgolOrder, v_window - 1));
    for (std::size_t i = 1; i < n; ++i) {
        if (v_smooth[i] < v_smooth[i - 1]) {
            return fail("non-monotone CC voltage after smoothing");
        }
    }

    const double v0 = v_smooth.front();
    const double v1 = v_smooth.back();
    const auto grid_n = static_cast<std::size_t>((v1 - v0) / kIcaGridStepV) + 1;
    if (grid_n < static_cast<std::size_t>(kIcaSavgolWindow)) {
        return fail("CC voltage span too small for the ICA grid");
    }

    std::vector<double> grid(grid_n), q_grid(grid_n);
    for (std::size_t i = 0; i < grid_n; ++i) {
        grid[i] = v0 + static_cast<double>(i) * kIcaGridStepV;
        q_grid[i] = detail::interp1(v_smooth, q, grid[i]);
    }

    std::vector<double> dqdv(grid_n, 0.0);
    for (std::size_t i = 0; i < grid_n; ++i) {
        if (i == 0) {
            dqdv[i] = (q_grid[1] - q_grid[0]) / kIcaGridStepV;
        } else if (i == grid_n - 1) {
            dqdv[i] = (q_grid[i] - q_grid[i - 1]) / kIcaGridStepV;
        } else {
            dqdv[i] = (q_grid[i + 1] - q_grid[i - 1]) / (2.0 * kIcaGridStepV);
        }
    }
    dqdv = savgol_smooth(dqdv, kIcaSavgolWindow, kIcaSavgolOrder);

    std::size_t peak = 0;
    for (std::size_t i = 1; i < grid_n; ++i) {
        if (dqdv[i] > dqdv[peak]) {
            peak = i;
        }
    }
    if (dqdv[peak] <= 0.0) {
        return fail("non-positive dQ/dV peak");
    }

    // Contiguous half-maximum region containing the peak.
    const double half = 0.5 * dqdv[peak];
    std::size_t lo = peak;
    while (lo > 0 && dqdv[lo - 1] >= half) {
        --lo;
    }
    std::size_t hi = peak;
    while (hi + 1 < grid_n && dqdv[hi + 1] >= half) {
        ++hi;
    }
    double area = 0.0;
    for (std::size_t i = lo + 1; i <= hi; ++i) {
        area += 0.5 * (dqdv[i] + dqdv[i - 1]) * kIcaGridStepV;
    }

    IcaPeaks peaks;
    peaks.peak_voltage = grid[peak];
    peaks.peak_area = area;
    peaks.peak_magnitude = dqdv[peak];
    return peaks;
}

/**
 * The thirteen health indicators of one cycle. Soft failures (segment too
 * short for an interpolation target, zero CV energy, ICA degeneracies)
 * return nullopt with the reason; the cycle is then dropped from dataset
 * assembly. Degenerate statistics on constant segments are 0 by
 * convention.
 */
inline std::optional<std::array<double, kNumHi>> extract_hi_vector(
    const CycleProfile& profile, std::string* skip_reason = nullptr) {
    auto fail = [&](const char* why) -> std::optional<std::array<double, kNumHi>> {
        if (skip_reason != nullptr) {
            *skip_reason = why;
        }
        return std::nullopt;
    };
    if (profile.cc.empty() || profile.cv.empty()) {
        throw std::invalid_argument("extract_hi_vector: CC and CV segments must be non-empty");
    }
    const auto& cc = profile.cc;
    const auto& cv = profile.cv;
    if (cc.size() < 3 || cv.size() < 2) {
        return fail("charge segments too short");
    }

    std::array<double, kNumHi> hi{};
    const double cc_dur = cc.back().t_s - cc.front().t_s;
    const double cv_dur = cv.back().t_s - cv.front().t_s;
    hi[0] = cc_dur; // HI1
    hi[1] = cv_dur; // HI2

    // HI3: current 200 s into the CV phase.
    if (cv_dur < 200.0) {
        return fail("CV phase shorter than the 200 s probe");
    }
    {
        std::vector<double> tt(cv.size()), ii(cv.size());
        for (std::size_t i = 0; i < cv.size(); ++i) {
            tt[i] = cv[i].t_s - cv.front().t_s;
            ii[i] = cv[i].current_a;
        }
        hi[2] = detail::interp1(tt, ii, 200.0);
    }

    // HI4: voltage 500 s into the full charge (CC start = 0; CV appended).
    if (cc_dur + cv_dur < 500.0) {
        return fail("charge shorter than the 500 s probe");
    }
    {
        std::vector<double> tt, vv;
        tt.reserve(cc.size() + cv.size());
        vv.reserve(cc.size() + cv.size());
        for (const auto& r : cc) {
            tt.push_back(r.t_s - cc.front().t_s);
            vv.push_back(r.voltage_v);
        }
        for (const auto& r : cv) {
            tt.push_back(cc_dur + (r.t_s - cv.front().t_s));
            vv.push_back(r.voltage_v);
        }
        hi[3] = detail::interp1(tt, vv, 500.0);
    }

    // HI5, HI6: charge energies (Wh) and the CC/CV energy ratio.
    auto energy_wh = [](const std::vector<CyclingRecord>& seg) {
        double e = 0.0;
        for (std::size_t i = 1; i < seg.size(); ++i) {
            const double pa = seg[i - 1].voltage_v * seg[i - 1].current_a;
            const double pb = seg[i].voltage_v * seg[i].current_a;
            e += 0.5 * (pa + pb) * (seg[i].t_s - seg[i - 1].t_s);
        }
        return e / 3600.0;
    };
    const double e_cc = energy_wh(cc);
    const double e_cv = energy_wh(cv);
    hi[4] = e_cc + e_cv;
    if (std::abs(e_cv) < 1e-12) {
        return fail("zero CV energy");
    }
    hi[5] = e_cc / e_cv;

    hi[6] = cc.front().voltage_v; // HI7

    // HI8-HI10: CC voltage-curve statistics.
    {
        std::vector<double> tt(cc.size()), vv(cc.size());
        for (std::size_t i = 0; i < cc.size(); ++i) {
            tt[i] = cc[i].t_s;
            vv[i] = cc[i].voltage_v;
        }
        hi[7] = least_squares_slope(tt, vv);
        hi[8] = shannon_entropy_bits(vv, 30);
        hi[9] = fisher_pearson_skewness(vv);
    }

    // HI11-HI13 from incremental capacity analysis.
    std::string ica_reason;
    const auto ica = compute_ica(profile, &ica_reason);
    if (!ica) {
        return fail(ica_reason.empty() ? "ICA failed" : ica_reason.c_str());
    }
    hi[10] = ica->peak_voltage;
    hi[11] = ica->peak_area;
    hi[12] = ica->peak_magnitude;
    return hi;
}

/**
 * Plug-in mutual information (bits) on equal-frequency bins. Ranks are
 * assigned by stable sort on (value, original index), so ties are handled
 * deterministically. Constant series carry no information: MI = 0.
 */
inline double mutual_information(const std::vector<double>& x, const std::vector<double>& y,
                                 int bins) {
    if (bins < 2) {
        throw std::invalid_argument("mutual_information: need at least 2 bins");
    }
    const std::size_t n = x.size();
    if (y.size() != n) {
        throw std::invalid_argument("mutual_information: length mismatch");
    }
    if (n < static_cast<std::size_t>(bins) * static_cast<std::size_t>(bins)) {
        throw std::invalid_argument("mutual_information: need n >= bins^2 samples");
    }
    auto is_constant = [](const std::vector<double>& s) {
        return std::all_of(s.begin(), s.end(), [&](double v) { return v == s.front(); });
    };
    if (is_constant(x) || is_constant(y)) {
        return 0.0;
    }

    auto bin_assign = [&](const std::vector<double>& s) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
        std::vector<int> bin(n, 0);
        for (std::size_t r = 0; r < n; ++r) {
            bin[order[r]] = static_cast<int>(r * static_cast<std::size_t>(bins) / n);
        }
        return bin;
    };
    const auto bx = bin_assign(x);
    const auto by = bin_assign(y);

    std::vector<double> joint(static_cast<std::size_t>(bins * bins), 0.0);
    std::vector<double> px(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> py(static_cast<std::size_t>(bins), 0.0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        joint[static_cast<std::size_t>(bx[i] * bins + by[i])] += inv_n;
        px[static_cast<std::size_t>(bx[i])] += inv_n;
        py[static_cast<std::size_t>(by[i])] += inv_n;
    }
    double mi = 0.0;
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            const double pij = joint[static_cast<std::size_t>(i * bins + j)];
            if (pij > 0.0) {
                mi += pij * std::log2(pij / (px[static_cast<std::size_t>(i)] *
                                             py[static_cast<std::size_t>(j)]));
            }
        }
    }
    return std::max(mi, 0.0);
}

/// Spearman rank correlation: Pearson correlation of average ranks.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (y.size() != n || n < 3) {
        throw std::invalid_argument("spearman: need equal lengths with n >= 3");
    }
    const auto rx = detail::average_ranks(x);
    const auto ry = detail::average_ranks(y);
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0.0, dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx <= 0.0 || dy <= 0.0) {
        return 0.0; // zero rank variance
    }
    return num / std::sqrt(dx * dy);
}

struct SelectionReport {
    std::array<double, kNumHi> mi_scores{};
    std::array<double, kNumHi> spearman_abs{};
    std::vector<int> ranking;  // all features, descending MI (ties: lower index)
    std::vector<int> retained; // top k_sel, ascending index
    int k_sel = 0;
    int bins = 0; // effective MI bin count
};

/**
 * Dual-metric feature selection on training rows: MI against the SOH
 * target is the primary criterion, |Spearman| is reported alongside.
 * The bin count shrinks to floor(sqrt(n)) when the training set is too
 * small for the requested bins (the estimator needs n >= bins^2).
 * Test-tagged rows abort with leakage_error.
 */
inline SelectionReport select_features(const std::vector<FeatureRow>& rows, int k_sel = 10,
                                       int bins = 16) {
    if (k_sel < 1 || k_sel > kNumHi) {
        throw std::invalid_argument("select_features: k_sel must lie in [1, 13]");
    }
    if (rows.size() < 3) {
        throw std::invalid_argument("select_features: need at least 3 training rows");
    }
    for (const auto& r : rows) {
        if (r.prov != Provenance::Train) {
            throw leakage_error("select_features: test-tagged row for cell " + r.cell_id +
                                " cycle " + std::to_string(r.cycle_index) +
                                " leaked into feature selection");
        }
    }
    const std::size_t n = rows.size();
    int eff_bins = bins;
    while (eff_bins > 2 &&
           n < static_cast<std::size_t>(eff_bins) * static_cast<std::size_t>(eff_bins)) {
        eff_bins = static_cast<int>(std::sqrt(static_cast<double>(n)));
    }
    eff_bins = std::max(eff_bins, 2);
    if (n < static_cast<std::size_t>(eff_bins) * static_cast<std::size_t>(eff_bins)) {
        throw std::invalid_argument("select_features: too few rows for MI binning");
    }

    std::vector<double> soh(n);
    for (std::size_t i = 0; i < n; ++i) {
        soh[i] = rows[i].soh;
    }
    SelectionReport report;
    report.k_sel = k_sel;
    report.bins = eff_bins;
    for (int f = 0; f < kNumHi; ++f) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) {
            col[i] = rows[i].hi[static_cast<std::size_t>(f)];
        }
        report.mi_scores[static_cast<std::size_t>(f)] = mutual_information(col, soh, eff_bins);
        report.spearman_abs[static_cast<std::size_t>(f)] = std::abs(spearman(col, soh));
    }

    report.ranking.resize(kNumHi);
    std::iota(report.ranking.begin(), report.ranking.end(), 0);
    std::stable_sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
        const double ma = report.mi_scores[static_cast<std::size_t>(a)];
        const double mb = report.mi_scores[static_cast<std::size_t>(b)];
        if (ma != mb) {
            return ma > mb;
        }
        return a < b; // ties: lower index first
    });
    report.retained.assign(report.ranking.begin(), report.ranking.begin() + k_sel);
    std::sort(report.retained.begin(), report.retained.end());
    return report;
}

/**
 * Full per-cycle extraction over a record table: groups rows by
 * (cell, cycle), segments, computes SOH and the HI vector. Skipped cycles
 * are reported as "cell/cycle: reason" strings.
 */
inline std::vector<FeatureRow> build_feature_table(const std::vector<CyclingRecord>& records,
                                                   double q_nom_ah,
                                                   std::vector<std::string>* skip_log = nullptr) {
    std::map<std::pair<std::string, int>, std::vector<CyclingRecord>> cycles;
    for (const auto& r : records) {
        cycles[{r.cell_id, r.cycle_index}].push_back(r);
    }
    std::vector<FeatureRow> rows;
    rows.reserve(cycles.size());
    for (auto& [key, recs] : cycles) {
        std::stable_sort(recs.begin(), recs.end(), [](const CyclingRecord& a, const CyclingRecord& b) {
            if (a.step != b.step) {
                return static_cast<int>(a.step) < static_cast<int>(b.step);
            }
            return a.t_s < b.t_s;
        });
        auto log_skip = [&](const std::string& why) {
            if (skip_log != nullptr) {
                skip_log->push_back(key.first + "/" + std::to_string(key.second) + ": " + why);
            }
        };
        std::string reason;
        const auto profile = segment_cycle(recs, &reason);
        if (!profile) {
            log_skip(reason);
            continue;
        }
        if (profile->cv.empty()) {
            log_skip("missing cv_charge step");
            continue;
        }
        const auto hi = extract_hi_vector(*profile, &reason);
        if (!hi) {
            log_skip(reason);
            continue;
        }
        FeatureRow row;
        row.cell_id = key.first;
        row.cycle_index = key.second;
        row.hi = *hi;
        row.soh = compute_soh(*profile, q_nom_ah);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace qlstm
