#include <catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <random>

#include <unistd.h>

#include "semg/harness.hpp"

using namespace semg;
namespace fs = std::filesystem;

namespace {

// Every block of the paradigm with shortened trials.
Schedule short_schedule() {
    auto s = paradigm_schedule();
    for (auto& b : s.blocks)
        for (auto& t : b.trials) t.active_s = 2.0;
    return s;
}

const Corpus& small_corpus() {
    static const Corpus c = [] {
        CorpusSpec cs;
        cs.subjects = 3;
        cs.days = 2;
        cs.schedule = short_schedule();
        return build_corpus(cs);
    }();
    return c;
}

BenchmarkSpec quick_spec() {
    BenchmarkSpec bs;
    bs.hyper.rf_trees = 15;
    bs.hyper.svm_epochs = 5;
    return bs;
}

const ResultGrid& small_grid() {
    static const ResultGrid g = run_benchmark(small_corpus(), quick_spec());
    return g;
}

}  // namespace

TEST_CASE("window counts per trial") {
    const auto rec = synth_session(default_synth_config(), 1, 1, 0, paradigm_schedule().truncated(3));
    const int w[] = {250, 500, 750};
    const auto f = session_features(rec, w);
    CHECK(f.at(250).size() == 3 * 32);
    CHECK(f.at(500).size() == 3 * 31);
    CHECK(f.at(750).size() == 3 * 30);
    for (const auto& wi : f.at(500).info) {
        CHECK(wi.subject_id == 1);
        CHECK(wi.day_id == 1);
        CHECK(wi.speed_kmh == 0);
        CHECK((wi.label >= 1 && wi.label <= 3));
    }
}

TEST_CASE("corpus layout") {
    const auto& c = small_corpus();
    REQUIRE(c.by_window.size() == 3);
    std::map<std::pair<int, int>, std::size_t> per_session;
    for (const auto& wi : c.by_window.at(250).info) ++per_session[{wi.subject_id, wi.day_id}];
    CHECK(per_session.size() == 6);
    for (const auto& [k, n] : per_session) CHECK(n == 144 * 8);
    CHECK_THROWS_AS(build_corpus(CorpusSpec{.subjects = 0}), ArgumentError);
}

TEST_CASE("grid shape") {
    const auto& g = small_grid();
    CHECK(g.cells.size() == kAllModelKinds.size() * 3 * 3 * 2);
    for (const auto& c : g.cells) CHECK_FALSE(c.absent);
    for (std::size_t i = 1; i < g.cells.size(); ++i) CHECK(g.cells[i - 1].key < g.cells[i].key);
    const auto csv = g.to_csv();
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(g.cells.size() + 1));
    CHECK_THAT(csv, Catch::Matchers::StartsWith("model,type,window,classes,mean,std,subjects,cell\n"));
    CHECK(g.to_json().at("cells").size() == g.cells.size());

    const auto* sd = g.find({ModelKind::lda, SplitKind::single_day, 500, 6});
    REQUIRE(sd);
    CHECK(sd->folds.size() == 6);  // subject x day
    const auto* cd = g.find({ModelKind::lda, SplitKind::cross_day, 500, 6});
    REQUIRE(cd);
    CHECK(cd->folds.size() == 3);
    for (const auto& f : cd->folds) CHECK(f.day_id == 2);
    const auto* cs = g.find({ModelKind::lda, SplitKind::cross_subject, 500, 6});
    REQUIRE(cs);
    CHECK(cs->folds.size() == 3);
    for (const auto& f : cs->folds) CHECK(f.day_id == 1);
    CHECK(g.find({ModelKind::lda, SplitKind::single_day, 1000, 6}) == nullptr);
}

TEST_CASE("cell statistics are recomputable from folds", "[property]") {
    for (const auto& c : small_grid().cells) {
        std::map<int, std::vector<double>> per_subject;
        for (const auto& f : c.folds) {
            per_subject[f.subject_id].push_back(f.accuracy);
            CHECK(f.accuracy == Catch::Approx(static_cast<double>(f.confusion.trace()) /
                                              static_cast<double>(f.confusion.total())));
            CHECK(f.confusion.total() == f.n_test);
        }
        std::vector<double> subj;
        for (auto& [s, v] : per_subject) {
            double m = 0.0;
            for (double a : v) m += a;
            subj.push_back(m / static_cast<double>(v.size()));
        }
        double mean = 0.0;
        for (double a : subj) mean += a;
        mean /= static_cast<double>(subj.size());
        double ss = 0.0;
        for (double a : subj) ss += (a - mean) * (a - mean);
        CHECK(c.stats.mean == Catch::Approx(mean).margin(1e-12));
        CHECK(c.stats.std == Catch::Approx(std::sqrt(ss / static_cast<double>(subj.size() - 1))).margin(1e-12));
        CHECK(c.stats.n == subj.size());
        CHECK(c.pooled_confusion().total() ==
              std::accumulate(c.folds.begin(), c.folds.end(), std::size_t{0},
                              [](std::size_t a, const FoldResult& f) { return a + f.n_test; }));
    }
}

TEST_CASE("mixed-speed row equals the cell mean") {
    for (const auto& c : small_grid().cells) {
        if (c.key.split != SplitKind::single_day) continue;
        const auto b = breakdown_by_speed(c);
        REQUIRE(b.rows.size() == 5);
        CHECK(b.rows.back().speed == "mixed");
        CHECK(b.rows.back().accuracy.mean == Catch::Approx(c.stats.mean).margin(1e-12));
        for (const auto& r : b.rows) CHECK(r.accuracy.n == 3);
    }
}

TEST_CASE("model split means") {
    const auto& g = small_grid();
    for (auto m : kAllModelKinds) {
        double sum = 0.0;
        int n = 0;
        for (const auto& c : g.cells)
            if (c.key.model == m && c.key.split == SplitKind::cross_day) sum += c.stats.mean, ++n;
        REQUIRE(n == 6);
        CHECK(*model_split_mean(g, m, SplitKind::cross_day) == Catch::Approx(sum / 6.0));
    }
    ResultGrid empty;
    CHECK_FALSE(model_split_mean(empty, ModelKind::lda, SplitKind::single_day).has_value());
}

TEST_CASE("absent cells are reported") {
    auto bs = quick_spec();
    bs.models = {ModelKind::lda};
    bs.splits = {SplitKind::single_day};
    bs.windows_ms = {1000};
    bs.classes = {6};
    const auto g = run_benchmark(small_corpus(), bs);
    REQUIRE(g.cells.size() == 1);
    CHECK(g.cells[0].absent);
    CHECK_THAT(g.cells[0].absent_reason, Catch::Matchers::ContainsSubstring("1000"));
    CHECK_THAT(g.to_csv(), Catch::Matchers::EndsWith(",,0,absent\n"));
}

TEST_CASE("benchmark runs are deterministic") {
    auto bs = quick_spec();
    bs.models = {ModelKind::random_forest};
    bs.windows_ms = {250};
    bs.classes = {6};
    const auto a = run_benchmark(small_corpus(), bs), b = run_benchmark(small_corpus(), bs);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].stats.mean == b.cells[i].stats.mean);
        CHECK(a.cells[i].stats.std == b.cells[i].stats.std);
    }
}

TEST_CASE("benchmark outputs on disk") {
    const auto dir = fs::temp_directory_path() / ("semg_test_harness_" + std::to_string(::getpid()));
    auto bs = quick_spec();
    bs.models = {ModelKind::lda};
    bs.windows_ms = {500};
    const auto g = run_benchmark(small_corpus(), bs);
    write_benchmark(dir, small_corpus(), bs, g);
    CHECK(fs::exists(dir / "results.csv"));
    CHECK(fs::exists(dir / "results.json"));
    CHECK(fs::exists(dir / "confusion" / "LDA_SD_500ms_6class.csv"));
    CHECK(fs::exists(dir / "speed" / "LDA_SD_500ms_12class.csv"));
    CHECK_FALSE(fs::exists(dir / "speed" / "LDA_CD_500ms_6class.csv"));
    std::ifstream in(dir / "manifest.json");
    const auto m = nlohmann::json::parse(in);
    CHECK(m.at("corpus").at("subjects") == 3);
    CHECK(m.at("corpus").at("day2_shift") == 1);
    CHECK(m.at("seeds") == std::vector<int>{1});
    CHECK(m.at("feature_layout") == std::string(kFeatureLayoutTag));
    CHECK(m.contains("elapsed_s"));
    fs::remove_all(dir);
}

TEST_CASE("polynomial fit recovers a known polynomial") {
    const std::vector<double> c = {0.3, -1.0, 2.0, 0.5, -0.25, 0.1};
    std::vector<double> x, y;
    for (int i = 0; i <= 10; ++i) {
        x.push_back(0.1 * i);
        y.push_back(polyval(c, x.back()));
    }
    const auto fit = polyfit(x, y, 5);
    REQUIRE(fit.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(fit[i] == Catch::Approx(c[i]).margin(1e-8));
    CHECK(polyval(std::vector<double>{1.0, 2.0, 3.0}, 2.0) == 17.0);
    CHECK_THROWS_AS(polyfit(std::vector<double>{1, 2}, std::vector<double>{1, 2}, 2), ArgumentError);
}

TEST_CASE("rank correlation") {
    const std::vector<double> a = {1, 2, 3, 4, 5};
    CHECK(spearman(a, std::vector<double>{2, 4, 8, 16, 32}) == Catch::Approx(1.0));
    CHECK(spearman(a, std::vector<double>{5, 4, 3, 2, 1}) == Catch::Approx(-1.0));
    CHECK(ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
    // textbook value: d = {0,0,1,-1,0} gives 1 - 6*2/(5*24) = 0.9
    CHECK(spearman(a, std::vector<double>{1, 2, 4, 3, 5}) == Catch::Approx(0.9));
    CHECK(spearman(a, std::vector<double>(5, 1.0)) == 0.0);
    CHECK_THROWS_AS(spearman(a, std::vector<double>{1.0}), ArgumentError);
}

TEST_CASE("sweep curve shape") {
    auto make = [](std::function<double(double)> f) {
        std::vector<IntensityPoint> pts;
        for (double x : SweepSpec{}.levels) pts.push_back({x, MeanStd{f(x), 0.0, 10}, false});
        return finish_sweep(pts, 5);
    };
    const auto sat = make([](double x) { return 1.0 - 0.8 * std::exp(-6.0 * x); });
    CHECK(sat.spearman_rho == Catch::Approx(1.0));
    CHECK(sat.concave());
    const auto lin = make([](double x) { return 0.2 + 0.6 * x; });
    CHECK(std::fabs(lin.concavity) <= 1e-9);
    const auto convex = make([](double x) { return 0.2 + 0.7 * x * x; });
    CHECK_FALSE(convex.concave());
    CHECK_THAT(sat.to_csv(), Catch::Matchers::StartsWith("intensity,mean,std,subjects,fit\n"));
}

TEST_CASE("zero intensity decodes at chance") {
    SweepSpec s;
    s.levels = {0.0};
    s.subjects = 2;
    s.model = ModelKind::lda;
    s.degree = 0;
    const auto sw = sweep_intensity(s);
    REQUIRE(sw.points.size() == 1);
    REQUIRE_FALSE(sw.points[0].absent);
    // six indistinguishable classes: chance is 1/6
    CHECK(std::fabs(sw.points[0].accuracy.mean - 1.0 / 6.0) <= 0.12);
}
