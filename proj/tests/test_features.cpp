// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "qlstm/features.hpp"
#include "qlstm/rng.hpp"

using namespace qlstm;

namespace {

CyclingRecord rec(const std::string& cell, int cycle, StepKind step, double t, double i,
                  double v) {
    return CyclingRecord{cell, cycle, step, t, i, v};
}

// CC ramp V(t) = 3.0 + 1e-4 t sampled at 1 Hz on [0, t_end], I = i_cc.
std::vector<CyclingRecord> ramp_cc(double t_end, double i_cc = 1.0, double slope = 1e-4) {
    std::vector<CyclingRecord> cc;
    for (double t = 0.0; t <= t_end + 0.5; t += 1.0) {
        cc.push_back(rec("c", 1, StepKind::CCCharge, t, i_cc, 3.0 + slope * t));
    }
    return cc;
}

// CV tail at V = v_hold with exponentially decaying current over [0, dur].
std::vector<CyclingRecord> exp_cv(double v_hold, double dur, double tau, double dt = 5.0) {
    std::vector<CyclingRecord> cv;
    for (double t = 0.0; t <= dur + 0.5 * dt; t += dt) {
        cv.push_back(rec("c", 1, StepKind::CVCharge, t, std::exp(-t / tau), v_hold));
    }
    return cv;
}

CycleProfile ramp_profile() {
    CycleProfile p;
    p.cell_id = "c";
    p.cycle_index = 1;
    p.cc = ramp_cc(3599.0); // 3600 samples: exactly uniform 30-bin occupancy
    p.cv = exp_cv(3.0 + 1e-4 * 3599.0, 600.0, 180.0);
    for (double t = 0.0; t <= 3600.0; t += 60.0) {
        p.discharge.push_back(rec("c", 1, StepKind::Discharge, t, -1.0, 3.3 - 0.0001 * t));
    }
    return p;
}

} // namespace

TEST_CASE("segment_cycle groups steps and validates time") {
    std::vector<CyclingRecord> records;
    for (int i = 0; i < 5; ++i) {
        records.push_back(rec("a", 3, StepKind::CCCharge, i * 10.0, 1.0, 3.0 + 0.01 * i));
    }
    for (int i = 0; i < 4; ++i) {
        records.push_back(rec("a", 3, StepKind::CVCharge, i * 10.0, 0.5, 3.6));
    }
    for (int i = 0; i < 6; ++i) {
        records.push_back(rec("a", 3, StepKind::Discharge, i * 10.0, -1.0, 3.2));
    }

    SECTION("three populated segments") {
        const auto profile = segment_cycle(records);
        REQUIRE(profile.has_value());
        CHECK(profile->cc.size() == 5);
        CHECK(profile->cv.size() == 4);
        CHECK(profile->discharge.size() == 6);
        CHECK(profile->cell_id == "a");
        CHECK(profile->cycle_index == 3);
    }

    SECTION("rest-only cycles are skipped with a reason") {
        std::vector<CyclingRecord> rest{rec("a", 1, StepKind::Rest, 0.0, 0.0, 3.1)};
        std::string reason;
        CHECK_FALSE(segment_cycle(rest, &reason).has_value());
        CHECK(reason == "missing cc_charge step");
    }

    SECTION("out-of-order timestamps are a validation error") {
        auto bad = records;
        std::swap(bad[1], bad[2]);
        CHECK_THROWS_AS(segment_cycle(bad), std::invalid_argument);
    }

    SECTION("non-positive voltage is a validation error") {
        auto bad = records;
        bad[0].voltage_v = 0.0;
        CHECK_THROWS_AS(segment_cycle(bad), std::invalid_argument);
    }
}

TEST_CASE("compute_soh ampere-hour integration") {
    CycleProfile p;
    p.cc.push_back(rec("c", 1, StepKind::CCCharge, 0.0, 1.0, 3.0));

    SECTION("constant 1 A for 3600 s is exactly 1 Ah") {
        for (double t = 0.0; t <= 3600.0; t += 100.0) {
            p.discharge.push_back(rec("c", 1, StepKind::Discharge, t, -1.0, 3.2));
        }
        CHECK(compute_soh(p, 1.0) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("2880 s at 1 A hits the 80% EOL threshold") {
        for (double t = 0.0; t <= 2880.0; t += 60.0) {
            p.discharge.push_back(rec("c", 1, StepKind::Discharge, t, -1.0, 3.2));
        }
        CHECK(compute_soh(p, 1.0) == Catch::Approx(0.8).margin(1e-12));
    }

    SECTION("linear 1 -> 0 A ramp over 7200 s integrates exactly") {
        for (double t = 0.0; t <= 7200.0; t += 50.0) {
            p.discharge.push_back(rec("c", 1, StepKind::Discharge, t, -(1.0 - t / 7200.0), 3.2));
        }
        // Trapezoid oracle on the same grid.
        std::vector<double> tt, ii;
        for (const auto& r : p.discharge) {
            tt.push_back(r.t_s);
            ii.push_back(std::abs(r.current_a));
        }
        const double expected = oracle::trapezoid(tt, ii) / 3600.0;
        CHECK(compute_soh(p, 1.0) == Catch::Approx(expected).margin(1e-15));
        CHECK(compute_soh(p, 1.0) == Catch::Approx(1.0).margin(1e-9));
    }

    SECTION("refining the grid of a piecewise-linear current changes nothing") {
        auto coarse = p;
        auto fine = p;
        for (double t = 0.0; t <= 1000.0; t += 100.0) {
            coarse.discharge.push_back(
                rec("c", 1, StepKind::Discharge, t, -(2.0 - t / 1000.0), 3.2));
        }
        for (double t = 0.0; t <= 1000.0; t += 1.0) {
            fine.discharge.push_back(rec("c", 1, StepKind::Discharge, t, -(2.0 - t / 1000.0), 3.2));
        }
        const double a = compute_soh(coarse, 1.5);
        const double b = compute_soh(fine, 1.5);
        CHECK(std::abs(a - b) / a < 1e-9);
    }

    SECTION("invalid nominal capacity rejected") {
        p.discharge.push_back(rec("c", 1, StepKind::Discharge, 0.0, -1.0, 3.2));
        CHECK_THROWS_AS(compute_soh(p, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(compute_soh(p, -2.0), std::invalid_argument);
    }
}

TEST_CASE("extract_hi_vector on the synthetic CC ramp") {
    const auto profile = ramp_profile();
    std::string reason;
    const auto hi_opt = extract_hi_vector(profile, &reason);
    REQUIRE(hi_opt.has_value());
    const auto& hi = *hi_opt;

    CHECK(hi[0] == Catch::Approx(3599.0).margin(1e-12)); // HI1: CC duration
    CHECK(hi[1] == Catch::Approx(600.0).margin(1e-12));  // HI2: CV duration
    CHECK(hi[2] == Catch::Approx(std::exp(-200.0 / 180.0)).epsilon(1e-3)); // HI3
    CHECK(hi[3] == Catch::Approx(3.0 + 1e-4 * 500.0).margin(1e-12));       // HI4
    CHECK(hi[6] == Catch::Approx(3.0).margin(1e-15));    // HI7: first CC voltage
    CHECK(hi[7] == Catch::Approx(1e-4).margin(1e-12));   // HI8: slope
    CHECK(hi[8] == Catch::Approx(std::log2(30.0)).margin(1e-4)); // HI9
    CHECK(hi[9] == Catch::Approx(0.0).margin(1e-10));    // HI10: symmetric ramp

    // HI5/HI6 against the trapezoid oracle.
    std::vector<double> t_cc, p_cc, t_cv, p_cv;
    for (const auto& r : profile.cc) {
        t_cc.push_back(r.t_s);
        p_cc.push_back(r.voltage_v * r.current_a);
    }
    for (const auto& r : profile.cv) {
        t_cv.push_back(r.t_s);
        p_cv.push_back(r.voltage_v * r.current_a);
    }
    const double e_cc = oracle::trapezoid(t_cc, p_cc) / 3600.0;
    const double e_cv = oracle::trapezoid(t_cv, p_cv) / 3600.0;
    CHECK(hi[4] == Catch::Approx(e_cc + e_cv).margin(1e-12));
    CHECK(hi[5] == Catch::Approx(e_cc / e_cv).margin(1e-12));

    // HI9 equals the independent count-oracle entropy bit for bit.
    {
        std::vector<double> vv;
        for (const auto& r : profile.cc) {
            vv.push_back(r.voltage_v);
        }
        double lo = vv.front(), hi_v = vv.front();
        for (double e : vv) {
            lo = std::min(lo, e);
            hi_v = std::max(hi_v, e);
        }
        std::map<int, long> counts;
        for (double e : vv) {
            int b = static_cast<int>((e - lo) / ((hi_v - lo) / 30.0));
            counts[std::min(b, 29)] += 1;
        }
        double want = 0.0;
        for (const auto& [b, c] : counts) {
            const double p = static_cast<double>(c) / static_cast<double>(vv.size());
            want -= p * std::log2(p);
        }
        CHECK(hi[8] == Catch::Approx(want).margin(1e-12));
    }
}

TEST_CASE("degenerate-statistics conventions") {
    const std::vector<double> constant(50, 3.6);
    std::vector<double> t(50);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(i);
    }
    CHECK(least_squares_slope(t, constant) == 0.0);
    CHECK(shannon_entropy_bits(constant, 30) == 0.0);
    CHECK(fisher_pearson_skewness(constant) == 0.0);
}

TEST_CASE("extract_hi_vector soft failures drop the cycle with a reason") {
    SECTION("CV shorter than the 200 s probe") {
        auto p = ramp_profile();
        p.cv = exp_cv(3.36, 100.0, 60.0);
        std::string reason;
        CHECK_FALSE(extract_hi_vector(p, &reason).has_value());
        CHECK(reason == "CV phase shorter than the 200 s probe");
    }
    SECTION("zero CV energy") {
        auto p = ramp_profile();
        for (auto& r : p.cv) {
            r.current_a = 0.0;
        }
        std::string reason;
        CHECK_FALSE(extract_hi_vector(p, &reason).has_value());
        CHECK(reason == "zero CV energy");
    }
    SECTION("empty segments are a hard precondition error") {
        auto p = ramp_profile();
        p.cv.clear();
        CHECK_THROWS_AS(extract_hi_vector(p), std::invalid_argument);
    }
}

TEST_CASE("savgol_smooth properties") {
    RngStream rng(5);

    SECTION("polynomials of degree <= order pass through on interior points") {
        const int n = 60;
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) {
            const double x = 0.1 * i;
            y[static_cast<std::size_t>(i)] = 1.5 - 2.0 * x + 0.3 * x * x + 0.01 * x * x * x;
        }
        const auto s = savgol_smooth(y, 11, 3);
        for (int i = 5; i < n - 5; ++i) {
            CHECK(s[static_cast<std::size_t>(i)] ==
                  Catch::Approx(y[static_cast<std::size_t>(i)]).margin(1e-9));
        }
    }

    SECTION("constant series unchanged everywhere, including edges") {
        const std::vector<double> y(31, 4.2);
        const auto s = savgol_smooth(y, 7, 2);
        for (double e : s) {
            CHECK(e == Catch::Approx(4.2).margin(1e-12));
        }
    }

    SECTION("order-1 interior weights are the moving average") {
        std::vector<double> y(20);
        for (auto& e : y) {
            e = rng.uniform(-1.0, 1.0);
        }
        const auto s = savgol_smooth(y, 5, 1);
        for (std::size_t i = 2; i + 2 < y.size(); ++i) {
            const double mean = (y[i - 2] + y[i - 1] + y[i] + y[i + 1] + y[i + 2]) / 5.0;
            CHECK(s[i] == Catch::Approx(mean).margin(1e-12));
        }
    }

    SECTION("quadratic window-5 weights match the textbook (-3,12,17,12,-3)/35") {
        std::vector<double> y(15, 0.0);
        y[7] = 1.0; // unit impulse
        const auto s = savgol_smooth(y, 5, 2);
        CHECK(s[5] == Catch::Approx(-3.0 / 35.0).margin(1e-12));
        CHECK(s[6] == Catch::Approx(12.0 / 35.0).margin(1e-12));
        CHECK(s[7] == Catch::Approx(17.0 / 35.0).margin(1e-12));
        CHECK(s[8] == Catch::Approx(12.0 / 35.0).margin(1e-12));
        CHECK(s[9] == Catch::Approx(-3.0 / 35.0).margin(1e-12));
    }

    SECTION("noisy sine stays within the noise amplitude of the clean sine") {
        const int n = 200;
        const double amp = 0.05;
        std::vector<double> clean(n), noisy(n);
        for (int i = 0; i < n; ++i) {
            clean[static_cast<std::size_t>(i)] = std::sin(0.05 * i);
            noisy[static_cast<std::size_t>(i)] =
                clean[static_cast<std::size_t>(i)] + rng.uniform(-amp, amp);
        }
        const auto s = savgol_smooth(noisy, 21, 3);
        double worst = 0.0;
        for (int i = 0; i < n; ++i) {
            worst = std::max(worst,
                             std::abs(s[static_cast<std::size_t>(i)] -
                                      clean[static_cast<std::size_t>(i)]));
        }
        CHECK(worst < amp);
    }

    SECTION("preconditions") {
        const std::vector<double> y(30, 1.0);
        CHECK_THROWS_AS(savgol_smooth(y, 4, 1), std::invalid_argument);  // even window
        CHECK_THROWS_AS(savgol_smooth(y, 5, 5), std::invalid_argument);  // order >= window
        CHECK_THROWS_AS(savgol_smooth(y, 31, 2), std::invalid_argument); // too short
    }
}

TEST_CASE("compute_ica recovers a synthetic Gaussian peak") {
    // Build a CC segment whose dQ/dV is A*exp(-(v-mu)^2/(2 sigma^2)) by
    // construction: with constant current I0, dt/dV = (3600 A / I0) * g(v).
    const double amp = 2.0;   // Ah per volt
    const double mu = 3.35;   // volts
    const double sigma = 0.05;
    const double i0 = 1.0;

    CycleProfile p;
    p.cell_id = "g";
    p.cycle_index = 1;
    const double v_lo = 3.0, v_hi = 3.7, dv = 0.0005;
    double t = 0.0;
    double prev_rate = 3600.0 * amp / i0 * std::exp(-(v_lo - mu) * (v_lo - mu) / (2 * sigma * sigma));
    p.cc.push_back(rec("g", 1, StepKind::CCCharge, t, i0, v_lo));
    for (double v = v_lo + dv; v <= v_hi + dv / 2; v += dv) {
        const double rate = 3600.0 * amp / i0 * std::exp(-(v - mu) * (v - mu) / (2 * sigma * sigma));
        t += 0.5 * (rate + prev_rate) * dv;
        prev_rate = rate;
        p.cc.push_back(rec("g", 1, StepKind::CCCharge, t, i0, v));
    }

    const auto peaks = compute_ica(p);
    REQUIRE(peaks.has_value());
    CHECK(std::abs(peaks->peak_voltage - mu) / mu < 0.02);
    CHECK(std::abs(peaks->peak_magnitude - amp) / amp < 0.02);
    // Gaussian mass above half maximum: A*sigma*sqrt(2*pi)*0.761.
    const double expected_area =
        amp * sigma * std::sqrt(2.0 * std::numbers::pi) * 0.7610942;
    CHECK(std::abs(peaks->peak_area - expected_area) / expected_area < 0.05);
}

TEST_CASE("compute_ica flat curve: peak region spans the whole grid") {
    CycleProfile p;
    p.cell_id = "f";
    p.cycle_index = 1;
    // Linear V(t) at constant current: dQ/dV is constant I0/slope.
    const double slope = 1e-4;
    for (double t = 0.0; t <= 3600.0; t += 2.0) {
        p.cc.push_back(rec("f", 1, StepKind::CCCharge, t, 1.0, 3.0 + slope * t));
    }
    const auto peaks = compute_ica(p);
    REQUIRE(peaks.has_value());
    const double expected_level = 1.0 / slope / 3600.0; // Ah per volt
    CHECK(peaks->peak_magnitude == Catch::Approx(expected_level).epsilon(1e-6));
    // The area equals level * grid span; the uniform grid quantizes the
    // span to 2 mV cells, so allow one cell of slack.
    CHECK(peaks->peak_area == Catch::Approx(expected_level * 0.36).epsilon(0.01));
}

TEST_CASE("compute_ica degenerate inputs") {
    CycleProfile p;
    p.cc.push_back(rec("x", 1, StepKind::CCCharge, 0.0, 1.0, 3.0));
    p.cc.push_back(rec("x", 1, StepKind::CCCharge, 1.0, 1.0, 3.1));
    CHECK_THROWS_AS(compute_ica(p), std::invalid_argument); // two samples

    // Strongly non-monotone voltage is reported, not thrown.
    CycleProfile nm;
    for (double t = 0.0; t <= 400.0; t += 1.0) {
        nm.cc.push_back(
            rec("x", 1, StepKind::CCCharge, t, 1.0, 3.2 + 0.1 * std::sin(t * 0.15)));
    }
    std::string reason;
    CHECK_FALSE(compute_ica(nm, &reason).has_value());
    CHECK(reason == "non-monotone CC voltage after smoothing");
}

TEST_CASE("mutual_information estimator") {
    SECTION("identity map saturates at log2(B)") {
        std::vector<double> x(256);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = static_cast<double>(i) * 0.37 - 40.0;
        }
        CHECK(mutual_information(x, x, 16) == 4.0); // exactly log2(16)
    }

    SECTION("independent permutations carry almost no information") {
        RngStream rng(71);
        std::vector<double> x(256);
        for (auto& e : x) {
            e = rng.uniform(0.0, 1.0);
        }
        for (int trial = 0; trial < 100; ++trial) {
            auto y = x;
            rng.shuffle(y);
            const double mi = mutual_information(x, y, 4);
            CHECK(mi >= 0.0);
            CHECK(mi < 0.15);
        }
    }

    SECTION("constant series have zero MI by convention") {
        const std::vector<double> c(300, 2.5);
        std::vector<double> y(300);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] = static_cast<double>(i);
        }
        CHECK(mutual_information(c, y, 16) == 0.0);
        CHECK(mutual_information(y, c, 16) == 0.0);
    }

    SECTION("symmetry, bounds, preconditions") {
        RngStream rng(73);
        std::vector<double> x(400), y(400);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.uniform(-1.0, 1.0);
            y[i] = x[i] * x[i] + 0.1 * rng.uniform(-1.0, 1.0);
        }
        const double ab = mutual_information(x, y, 8);
        const double ba = mutual_information(y, x, 8);
        CHECK(std::abs(ab - ba) < 1e-12);
        CHECK(ab >= 0.0);
        CHECK(ab <= std::log2(8.0));

        CHECK_THROWS_AS(mutual_information(x, std::vector<double>(10, 0.0), 8),
                        std::invalid_argument);
        CHECK_THROWS_AS(mutual_information(std::vector<double>(63, 1.0),
                                           std::vector<double>(63, 1.0), 8),
                        std::invalid_argument); // n < B^2
        CHECK_THROWS_AS(mutual_information(x, y, 1), std::invalid_argument);
    }
}

TEST_CASE("spearman rank correlation") {
    std::vector<double> x{0.5, 1.0, 2.0, 7.0};
    std::vector<double> inc{1.0, 4.0, 9.0, 100.0};
    std::vector<double> dec{5.0, 4.0, 3.0, -2.0};
    CHECK(spearman(x, inc) == 1.0);
    CHECK(spearman(x, dec) == -1.0);

    // Tied ranks: x = [1,1,2] has ranks [1.5, 1.5, 3].
    CHECK(spearman({1.0, 1.0, 2.0}, {1.0, 2.0, 3.0}) ==
          Catch::Approx(std::sqrt(3.0) / 2.0).margin(1e-12));
    CHECK(spearman({1.0, 1.0, 2.0}, {1.0, 2.0, 3.0}) == Catch::Approx(0.86603).margin(1e-5));

    SECTION("invariant under strictly monotone transforms") {
        RngStream rng(79);
        std::vector<double> a(50), b(50);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = rng.uniform(-2.0, 2.0);
            b[i] = rng.uniform(-2.0, 2.0);
        }
        auto ea = a;
        for (auto& e : ea) {
            e = std::exp(e);
        }
        CHECK(spearman(ea, b) == spearman(a, b)); // exact: ranks are unchanged
        CHECK(std::abs(spearman(a, b)) <= 1.0);
    }

    SECTION("degenerate and invalid inputs") {
        CHECK(spearman({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}) == 0.0);
        CHECK_THROWS_AS(spearman({1.0, 2.0}, {1.0, 2.0}), std::invalid_argument);
    }
}

TEST_CASE("select_features") {
    RngStream rng(83);
    auto make_rows = [&](int n) {
        std::vector<FeatureRow> rows(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            auto& r = rows[static_cast<std::size_t>(i)];
            r.cell_id = "cell";
            r.cycle_index = i;
            r.soh = 1.0 - 0.5 * static_cast<double>(i) / n;
            for (auto& h : r.hi) {
                h = rng.uniform(0.0, 1.0);
            }
        }
        return rows;
    };

    SECTION("a feature equal to the target ranks first") {
        auto rows = make_rows(320); // divisible by 16: bins fill evenly
        for (auto& r : rows) {
            r.hi[0] = r.soh;
        }
        const auto report = select_features(rows, 10);
        CHECK(report.ranking.front() == 0);
        CHECK(report.mi_scores[0] == Catch::Approx(std::log2(16.0)).margin(1e-9));
        CHECK(report.spearman_abs[0] == Catch::Approx(1.0).margin(1e-12));
        CHECK(report.retained.size() == 10);
        CHECK(std::find(report.retained.begin(), report.retained.end(), 0) !=
              report.retained.end());
    }

    SECTION("all-identical features fall back to the index tie rule") {
        std::vector<FeatureRow> rows(300);
        RngStream trng(89);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i].cell_id = "cell";
            rows[i].cycle_index = static_cast<int>(i);
            rows[i].soh = trng.uniform(0.5, 1.0);
            const double v = trng.uniform(0.0, 1.0);
            rows[i].hi.fill(v);
        }
        const auto report = select_features(rows, 4);
        CHECK(report.retained == std::vector<int>{0, 1, 2, 3});
    }

    SECTION("nonlinear dependence is retained by MI despite low |rho|") {
        std::vector<FeatureRow> rows(400);
        RngStream nrng(97);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            rows[i].cell_id = "cell";
            rows[i].cycle_index = static_cast<int>(i);
            // Symmetric target so the squared feature decorrelates in rank.
            rows[i].soh = nrng.uniform(-1.0, 1.0);
            rows[i].hi[0] = rows[i].soh + 0.01 * nrng.uniform(-1.0, 1.0); // monotone
            rows[i].hi[1] = rows[i].soh * rows[i].soh;                    // nonlinear
            for (std::size_t f = 2; f < kNumHi; ++f) {
                rows[i].hi[f] = nrng.uniform(0.0, 1.0);
            }
        }
        const auto report = select_features(rows, 2);
        CHECK(report.spearman_abs[1] < 0.2);
        CHECK(report.mi_scores[1] > 0.8);
        CHECK(report.retained == std::vector<int>{0, 1});

        // Count-oracle cross-check of the MI score for the squared feature.
        std::vector<double> xs(rows.size()), ys(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            xs[i] = rows[i].hi[1];
            ys[i] = rows[i].soh;
        }
        auto cuts = [&](std::vector<double> s) {
            std::sort(s.begin(), s.end());
            std::vector<double> edges;
            for (int b = 1; b < report.bins; ++b) {
                edges.push_back(s[s.size() * static_cast<std::size_t>(b) / 16]);
            }
            return edges;
        };
        (void)cuts; // quantile edges are ill-defined under ties; use rank joint below
        std::vector<std::size_t> ox(rows.size()), oy(rows.size());
        std::iota(ox.begin(), ox.end(), std::size_t{0});
        std::iota(oy.begin(), oy.end(), std::size_t{0});
        std::stable_sort(ox.begin(), ox.end(),
                         [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
        std::stable_sort(oy.begin(), oy.end(),
                         [&](std::size_t a, std::size_t b) { return ys[a] < ys[b]; });
        std::map<std::pair<int, int>, double> joint;
        std::vector<int> bx(rows.size()), by(rows.size());
        for (std::size_t r2 = 0; r2 < rows.size(); ++r2) {
            bx[ox[r2]] = static_cast<int>(r2 * 16 / rows.size());
            by[oy[r2]] = static_cast<int>(r2 * 16 / rows.size());
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            joint[{bx[i], by[i]}] += 1.0 / static_cast<double>(rows.size());
        }
        std::map<int, double> px, py;
        for (const auto& [k, v] : joint) {
            px[k.first] += v;
            py[k.second] += v;
        }
        double want = 0.0;
        for (const auto& [k, v] : joint) {
            want += v * std::log2(v / (px[k.first] * py[k.second]));
        }
        CHECK(report.mi_scores[1] == Catch::Approx(want).margin(1e-12));
    }

    SECTION("test-tagged rows abort with leakage_error") {
        auto rows = make_rows(300);
        rows[17].prov = Provenance::Test;
        CHECK_THROWS_AS(select_features(rows, 10), leakage_error);
    }

    SECTION("k_sel bounds") {
        auto rows = make_rows(300);
        CHECK_THROWS_AS(select_features(rows, 14), std::invalid_argument);
        CHECK_THROWS_AS(select_features(rows, 0), std::invalid_argument);
    }
}

TEST_CASE("build_feature_table extracts per-cycle rows and logs skips") {
    std::vector<CyclingRecord> records;
    auto add_cycle = [&](const std::string& cell, int cycle) {
        const auto p = ramp_profile();
        for (auto r : p.cc) {
            r.cell_id = cell;
            r.cycle_index = cycle;
            records.push_back(r);
        }
        for (auto r : p.cv) {
            r.cell_id = cell;
            r.cycle_index = cycle;
            records.push_back(r);
        }
        for (auto r : p.discharge) {
            r.cell_id = cell;
            r.cycle_index = cycle;
            records.push_back(r);
        }
    };
    add_cycle("a", 1);
    add_cycle("a", 2);
    add_cycle("b", 1);
    // A rest-only cycle that must be skipped.
    records.push_back(rec("b", 2, StepKind::Rest, 0.0, 0.0, 3.3));

    std::vector<std::string> skips;
    const auto rows = build_feature_table(records, 1.0, &skips);
    CHECK(rows.size() == 3);
    REQUIRE(skips.size() == 1);
    CHECK(skips[0] == "b/2: missing cc_charge step");
    for (const auto& r : rows) {
        CHECK(r.soh > 0.0);
        for (double h : r.hi) {
            CHECK(std::isfinite(h));
        }
    }
}
