#include <catch_amalgamated.hpp>

#include <complex>
#include <numbers>
#include <random>
#include <set>

#include "semg/harness.hpp"
#include "semg/preprocess.hpp"

using namespace semg;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> tone(double f, double amp, std::size_t n, double fs = kSampleRateHz, double phase = 0.3) {
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * kPi * f * static_cast<double>(i) / fs + phase);
    return x;
}

// Amplitude of the f-Hz component over x[begin, begin+len), by a direct DFT sum.
double tone_amplitude(const std::vector<double>& x, double f, std::size_t begin, std::size_t len,
                      double fs = kSampleRateHz) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < len; ++i)
        acc += x[begin + i] * std::polar(1.0, -2.0 * kPi * f * static_cast<double>(i) / fs);
    return 2.0 * std::abs(acc) / static_cast<double>(len);
}

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    std::vector<double> x(n);
    for (double& v : x) v = z(rng);
    return x;
}

double max_abs(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m = std::max(m, std::fabs(v));
    return m;
}

}  // namespace

TEST_CASE("window counts") {
    CHECK(segment_starts(4000, 125, 125).size() == 32);
    CHECK(segment_starts(4000, 250, 125).size() == 31);
    CHECK(segment_starts(100, 125, 125).empty());
    CHECK(segment_starts(125, 125, 1).size() == 1);
    CHECK_THROWS_AS(segment_starts(100, 10, 0), ArgumentError);

    ChannelMatrix trial(8, 4000);
    CHECK(segment_windows(trial, 250, 250).size() == 32);
    CHECK(segment_windows(trial, 500, 250).size() == 31);
    CHECK(segment_windows(trial, 500, 250)[0].samples() == 250);
    CHECK_THROWS_AS(segment_windows(trial, 250, 0), ArgumentError);
    CHECK_THROWS_AS(segment_windows(trial, 251, 250), ArgumentError);  // 125.5 samples
}

TEST_CASE("window count formula on random triples", "[property]") {
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> dn(1, 6000), dw(1, 800), ds(1, 400);
    for (int k = 0; k < 500; ++k) {
        const std::size_t n = dn(rng), w = dw(rng), s = ds(rng);
        const std::size_t expected = n < w ? 0 : (n - w) / s + 1;
        const auto starts = segment_starts(n, w, s);
        REQUIRE(starts.size() == expected);
        if (!starts.empty()) REQUIRE(starts.back() + w <= n);
    }
}

TEST_CASE("segmentation is translation consistent", "[property]") {
    ChannelMatrix x(8, 1500);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> z;
    for (std::size_t c = 0; c < 8; ++c)
        for (double& v : x.channel(c)) v = z(rng);
    for (int step_ms : {50, 250}) {
        const std::size_t step = ms_to_samples(step_ms, kSampleRateHz);
        const auto all = segment_windows(x, 250, step_ms);
        const auto shifted = segment_windows(x.slice(step, x.samples() - step), 250, step_ms);
        REQUIRE(shifted.size() + 1 == all.size());
        for (std::size_t i = 0; i < shifted.size(); ++i) REQUIRE(shifted[i] == all[i + 1]);
    }
}

TEST_CASE("zero-phase filters commute with time reversal", "[property]") {
    const FilterSpec specs[] = {FilterSpec::lowpass(40.0, 4), FilterSpec::highpass(20.0, 4),
                                FilterSpec::bandpass(20.0, 150.0, 4), FilterSpec::notch(50.0, 30.0)};
    for (const auto& spec : specs) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            const auto x = noise(1537, seed);
            const auto y = filter_zero_phase(x, spec, kSampleRateHz);
            const std::vector<double> xr(x.rbegin(), x.rend());
            auto yr = filter_zero_phase(xr, spec, kSampleRateHz);
            std::reverse(yr.begin(), yr.end());
            double dev = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) dev = std::max(dev, std::fabs(y[i] - yr[i]));
            CHECK(dev <= 1e-9 * max_abs(y));
        }
    }
}

TEST_CASE("lowpass keeps a constant") {
    const std::vector<double> x(1000, 3.25);
    const auto y = filter_zero_phase(x, FilterSpec::lowpass(30.0, 4), kSampleRateHz);
    for (std::size_t i = 8; i + 8 < y.size(); ++i) REQUIRE(y[i] == Catch::Approx(3.25).epsilon(1e-6));
}

TEST_CASE("bandpass passes 100 Hz and rejects 5 Hz") {
    const std::size_t n = 5000;
    auto x = tone(5.0, 1.0, n);
    const auto hi = tone(100.0, 1.0, n, kSampleRateHz, 1.1);
    for (std::size_t i = 0; i < n; ++i) x[i] += hi[i];
    const auto y = filter_zero_phase(x, FilterSpec::bandpass(20.0, 150.0, 4), kSampleRateHz);
    const double a5 = tone_amplitude(y, 5.0, 500, 4000);
    const double a100 = tone_amplitude(y, 100.0, 500, 4000);
    CHECK(20.0 * std::log10(a5 / 1.0) <= -20.0);
    CHECK(std::fabs(20.0 * std::log10(a100 / 1.0)) <= 1.0);
}

TEST_CASE("notch removes 50 Hz") {
    const auto x = tone(50.0, 1.0, 5000);
    const auto y = filter_zero_phase(x, FilterSpec::notch(50.0, 30.0), kSampleRateHz);
    CHECK(20.0 * std::log10(tone_amplitude(y, 50.0, 500, 4000)) <= -30.0);
    // and leaves 100 Hz alone
    const auto z = filter_zero_phase(tone(100.0, 1.0, 5000), FilterSpec::notch(50.0, 30.0), kSampleRateHz);
    CHECK(tone_amplitude(z, 100.0, 500, 4000) == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("filter design errors") {
    CHECK_THROWS_AS(design_filter(FilterSpec::lowpass(250.0, 4), kSampleRateHz), DesignError);
    CHECK_THROWS_AS(design_filter(FilterSpec::bandpass(20.0, 260.0, 4), kSampleRateHz), DesignError);
    CHECK_THROWS_AS(design_filter(FilterSpec::highpass(0.0, 4), kSampleRateHz), DesignError);
    const std::vector<double> tiny(12, 1.0);
    CHECK_THROWS_AS(filter_zero_phase(tiny, FilterSpec::lowpass(30.0, 4), kSampleRateHz), ArgumentError);
}

TEST_CASE("butterworth magnitude at the cutoff is -3 dB") {
    const auto lp = design_filter(FilterSpec::lowpass(40.0, 4), kSampleRateHz);
    CHECK(std::abs(lp.response(40.0, kSampleRateHz)) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
    CHECK(std::abs(lp.response(0.0, kSampleRateHz)) == Catch::Approx(1.0).epsilon(1e-9));
    const auto hp = design_filter(FilterSpec::highpass(20.0, 4), kSampleRateHz);
    CHECK(std::abs(hp.response(20.0, kSampleRateHz)) == Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-6));
}

TEST_CASE("baseline correction") {
    ChannelMatrix m(8, 600);
    std::mt19937_64 rng(8);
    std::normal_distribution<double> z;
    for (std::size_t c = 0; c < 8; ++c)
        for (double& v : m.channel(c)) v = z(rng) + (c == 2 ? 12.5 : 0.0);
    const auto y = baseline_correct(m, 200);
    for (std::size_t c = 0; c < 8; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 200; ++i) mean += y(c, i);
        CHECK(std::fabs(mean / 200.0) <= 1e-9);
    }
    // idempotent
    const auto yy = baseline_correct(y, 200);
    for (std::size_t i = 0; i < y.raw().size(); ++i) REQUIRE(yy.raw()[i] == Catch::Approx(y.raw()[i]).margin(1e-12));

    ChannelMatrix off(1, 10, 12.5);
    const auto o = baseline_correct(off, 4);
    for (double v : o.raw()) CHECK(v == 0.0);

    ChannelMatrix centred(1, 4);
    centred(0, 0) = -1.0;
    centred(0, 1) = 1.0;
    centred(0, 2) = 7.0;
    centred(0, 3) = 3.0;
    CHECK(baseline_correct(centred, 2) == centred);

    CHECK_THROWS_AS(baseline_correct(m, 0), ArgumentError);
    CHECK_THROWS_AS(baseline_correct(m, 601), ArgumentError);
}

TEST_CASE("ms to samples") {
    CHECK(ms_to_samples(250, 500) == 125);
    CHECK(ms_to_samples(750, 500) == 375);
    CHECK_THROWS_AS(ms_to_samples(1, 500), ArgumentError);
    CHECK_THROWS_AS(ms_to_samples(0, 500), ArgumentError);
}

TEST_CASE("split kinds parse") {
    CHECK(parse_split_kind("sd") == SplitKind::single_day);
    CHECK(parse_split_kind("CD") == SplitKind::cross_day);
    CHECK(parse_split_kind("cross_subject") == SplitKind::cross_subject);
    CHECK_THROWS_AS(parse_split_kind("loso"), ArgumentError);
}

namespace {

std::vector<WindowInfo> grid_infos(int subjects, int days) {
    std::vector<WindowInfo> v;
    for (int s = subjects; s >= 1; --s)
        for (int d = 1; d <= days; ++d)
            for (int b = 12; b >= 1; --b)
                for (int t = 0; t < 3; ++t) v.push_back({1 + t, b, kSpeedsKmh[static_cast<std::size_t>((b - 1) % 4)], s, d, 250.0 * t});
    return v;
}

}  // namespace

TEST_CASE("single-day split of one synthetic session") {
    const auto rec = synth_session(default_synth_config(), 1, 1, 0);
    const int w[] = {250};
    auto ds = session_features(rec, w, 250)[250];
    std::vector<WindowInfo> six;
    for (const auto& i : ds.info)
        if (in_task(i.label, 6)) six.push_back(i);
    SplitSpec spec;
    const auto idx = split_indices(six, spec);
    // 8 blocks x 6 modes x 32 windows, 4 blocks x 6 modes x 32 windows
    CHECK(idx.train.size() == 1536);
    CHECK(idx.test.size() == 768);
}

TEST_CASE("splits are disjoint and ordered", "[property]") {
    const auto infos = grid_infos(10, 2);
    for (auto kind : {SplitKind::single_day, SplitKind::cross_day, SplitKind::cross_subject}) {
        for (int subject : {1, 4, 10}) {
            SplitSpec spec;
            spec.kind = kind;
            spec.subject_id = subject;
            const auto idx = split_indices(infos, spec);
            std::set<std::size_t> a(idx.train.begin(), idx.train.end());
            for (auto i : idx.test) REQUIRE_FALSE(a.count(i));
            auto sorted = [&](const std::vector<std::size_t>& v) {
                for (std::size_t k = 1; k < v.size(); ++k)
                    if (window_order(infos[v[k]], infos[v[k - 1]])) return false;
                return true;
            };
            CHECK(sorted(idx.train));
            CHECK(sorted(idx.test));
            if (kind == SplitKind::single_day) {
                int max_train = 0, min_test = 99;
                for (auto i : idx.train) max_train = std::max(max_train, infos[i].block);
                for (auto i : idx.test) min_test = std::min(min_test, infos[i].block);
                CHECK(max_train < min_test);
                CHECK(max_train == 8);
                for (auto i : idx.train) CHECK(infos[i].subject_id == subject);
            }
            if (kind == SplitKind::cross_day) {
                for (auto i : idx.train) CHECK(infos[i].day_id == 1);
                for (auto i : idx.test) CHECK(infos[i].day_id == 2);
            }
            if (kind == SplitKind::cross_subject) {
                std::set<int> tr, te;
                for (auto i : idx.train) tr.insert(infos[i].subject_id);
                for (auto i : idx.test) te.insert(infos[i].subject_id);
                CHECK(te.size() == 1);
                CHECK(*te.begin() == subject);
                CHECK(tr.size() == 9);
                CHECK_FALSE(tr.count(subject));
            }
        }
    }
}

TEST_CASE("empty split sides are errors") {
    const auto infos = grid_infos(2, 1);
    SplitSpec cd;
    cd.kind = SplitKind::cross_day;
    CHECK_THROWS_AS(split_indices(infos, cd), EmptySplitError);
    SplitSpec sd;
    sd.subject_id = 7;
    CHECK_THROWS_AS(split_indices(infos, sd), EmptySplitError);
    CHECK_THROWS_AS(split_indices(std::vector<WindowInfo>{}, sd), ArgumentError);
}

TEST_CASE("make_split and manifest") {
    std::vector<Window> ds;
    for (const auto& i : grid_infos(3, 2)) ds.push_back({ChannelMatrix(8, 4, i.block), i});
    SplitSpec spec;
    spec.kind = SplitKind::cross_subject;
    spec.subject_id = 2;
    spec.day_id = 1;
    const auto [train, test] = make_split(ds, spec);
    CHECK(train.size() == 2 * 12 * 3);
    CHECK(test.size() == 12 * 3);
    for (const auto& w : test) CHECK(w.samples(0, 0) == w.info.block);

    std::vector<WindowInfo> infos;
    for (const auto& w : ds) infos.push_back(w.info);
    const auto idx = split_indices(infos, spec);
    const auto m = split_manifest(infos, spec, idx);
    CHECK(m["kind"] == "CS");
    CHECK(m["test_windows"] == 36);
    CHECK(m["test"].size() == 12);
    CHECK(m["train"].size() == 24);
}

TEST_CASE("class tasks") {
    CHECK(in_task(1, 6));
    CHECK(in_task(6, 6));
    CHECK_FALSE(in_task(7, 6));
    CHECK(in_task(12, 12));
    CHECK_FALSE(in_task(0, 12));
}
