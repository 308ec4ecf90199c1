#pragma once
// Experiment matrix on synthetic corpora: accuracy grids over model x split x
// window x class count, per-speed breakdown and the force-intensity sweep.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "semg/detail/parallel.hpp"
#include "semg/features.hpp"
#include "semg/models.hpp"
#include "semg/preprocess.hpp"
#include "semg/quality.hpp"
#include "semg/recording.hpp"
#include "semg/synth.hpp"

namespace semg {

inline constexpr std::array<int, 3> kWindowsMs = {250, 500, 750};
inline constexpr std::array<int, 2> kClassCounts = {6, 12};
inline constexpr std::array<SplitKind, 3> kSplitKinds = {SplitKind::single_day, SplitKind::cross_day,
                                                         SplitKind::cross_subject};
inline constexpr double kStepMs = 250.0;

// Feature rows with their window metadata.
struct FeatureDataset {
    FeatureMatrix x{static_cast<std::size_t>(kFeatureDim)};
    std::vector<WindowInfo> info;

    std::size_t size() const { return info.size(); }

    void push_back(const FeatureVector& fv, const WindowInfo& wi) {
        x.push_back(fv.values);
        info.push_back(wi);
    }

    void append(const FeatureDataset& other) {
        x.reserve(x.rows() + other.size());
        for (std::size_t i = 0; i < other.size(); ++i) x.push_back(other.x.row(i));
        info.insert(info.end(), other.info.begin(), other.info.end());
    }

    FeatureMatrix rows(std::span<const std::size_t> idx) const { return x.select(idx); }
    std::vector<int> labels(std::span<const std::size_t> idx) const {
        std::vector<int> y;
        y.reserve(idx.size());
        for (auto i : idx) y.push_back(info[i].label);
        return y;
    }
};

// Filters each trial once and cuts windows of every requested length.
inline std::map<int, FeatureDataset> session_features(const Recording& rec, std::span<const int> windows_ms,
                                                      double step_ms = kStepMs, const FilterChain& chain = FilterChain{}) {
    std::map<int, FeatureDataset> out;
    for (int w : windows_ms) out[w];
    const double fs = rec.meta.fs;
    const std::size_t step = ms_to_samples(step_ms, fs);
    for (const auto& t : extract_trials(rec).trials) {
        const ChannelMatrix active = preprocess_trial(rec, t, chain);
        for (int w : windows_ms) {
            const std::size_t len = ms_to_samples(w, fs);
            auto& ds = out[w];
            for (std::size_t s : segment_starts(active.samples(), len, step)) {
                WindowInfo wi{t.trial_id, t.block, t.speed_kmh, rec.meta.subject_id, rec.meta.day_id,
                              1000.0 * static_cast<double>(s) / fs};
                ds.push_back(extract_features(active.slice(s, len), fs), wi);
            }
        }
    }
    return out;
}

// A model over the windows of the given sessions whose label is within the
// first `classes` modes.
inline TrainedModel train_on_recordings(std::span<const Recording> recs, ModelKind kind, int window_ms,
                                        int classes = 6, const Hyperparams& hp = {}, std::uint64_t seed = 1,
                                        double step_ms = kStepMs) {
    FeatureDataset all;
    const int w[] = {window_ms};
    for (const auto& r : recs) all.append(session_features(r, w, step_ms)[window_ms]);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < all.size(); ++i)
        if (in_task(all.info[i].label, classes)) idx.push_back(i);
    if (idx.empty()) throw DataError("no windows of the first " + std::to_string(classes) + " modes");
    return train(kind, all.rows(idx), all.labels(idx), hp, seed);
}

struct CorpusSpec {
    int subjects = 10;
    int days = 2;
    int day2_shift = 1;  // wearing shift (channels) applied to every day after the first
    SynthConfig synth = default_synth_config();
    Schedule schedule = paradigm_schedule();
    std::vector<int> windows_ms{kWindowsMs.begin(), kWindowsMs.end()};
    double step_ms = kStepMs;
};

inline nlohmann::json to_json(const CorpusSpec& c) {
    nlohmann::json synth;
    to_json(synth, c.synth);
    nlohmann::json sched;
    to_json(sched, c.schedule);
    return {{"subjects", c.subjects}, {"days", c.days},         {"day2_shift", c.day2_shift},
            {"synth", synth},         {"trials", c.schedule.trial_count()}, {"windows_ms", c.windows_ms},
            {"step_ms", c.step_ms}};
}

struct Corpus {
    CorpusSpec spec;
    std::map<int, FeatureDataset> by_window;
};

// Synthesizes every (subject, day) session and keeps only window features.
inline Corpus build_corpus(const CorpusSpec& spec, const std::function<void(int, int)>& on_session = {}) {
    if (spec.subjects < 1 || spec.days < 1) throw ArgumentError("corpus needs at least one subject and day");
    const Synthesizer synth(spec.synth);
    const std::size_t n = static_cast<std::size_t>(spec.subjects * spec.days);
    std::vector<std::map<int, FeatureDataset>> parts(n);
    std::mutex mu;
    detail::parallel_for(n, [&](std::size_t k) {
        const int subject = static_cast<int>(k) / spec.days + 1;
        const int day = static_cast<int>(k) % spec.days + 1;
        const Recording rec = synth.session(subject, day, day > 1 ? spec.day2_shift : 0, spec.schedule);
        parts[k] = session_features(rec, spec.windows_ms, spec.step_ms);
        if (on_session) {
            std::lock_guard lock(mu);
            on_session(subject, day);
        }
    });
    Corpus c;
    c.spec = spec;
    for (int w : spec.windows_ms)
        for (auto& p : parts) c.by_window[w].append(p[w]);
    return c;
}

// ---------------------------------------------------------------------------
// Benchmark grid

struct BenchmarkSpec {
    std::vector<ModelKind> models{kAllModelKinds.begin(), kAllModelKinds.end()};
    std::vector<SplitKind> splits{kSplitKinds.begin(), kSplitKinds.end()};
    std::vector<int> windows_ms{kWindowsMs.begin(), kWindowsMs.end()};
    std::vector<int> classes{kClassCounts.begin(), kClassCounts.end()};
    std::vector<std::uint64_t> seeds{1};
    Hyperparams hyper;
    int cs_day = 1;  // day the leave-one-subject-out folds use (0 = all)
};

struct CellKey {
    ModelKind model = ModelKind::lda;
    SplitKind split = SplitKind::single_day;
    int window_ms = 500;
    int classes = 6;
    friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct SpeedCount {
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct FoldResult {
    int subject_id = 0;
    int day_id = 0;
    std::uint64_t seed = 0;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    double accuracy = 0.0;
    ConfusionMatrix confusion;
    std::map<int, SpeedCount> by_speed;
};

struct Cell {
    CellKey key;
    std::vector<FoldResult> folds;
    std::vector<std::pair<int, double>> subject_accuracy;  // fold accuracies averaged per subject
    MeanStd stats;
    bool absent = false;
    std::string absent_reason;

    ConfusionMatrix pooled_confusion() const {
        ConfusionMatrix cm;
        for (const auto& f : folds) {
            if (cm.classes.empty()) {
                cm = f.confusion;
                continue;
            }
            for (std::size_t i = 0; i < cm.counts.size(); ++i)
                for (std::size_t j = 0; j < cm.counts.size(); ++j) cm.counts[i][j] += f.confusion.counts[i][j];
        }
        return cm;
    }
};

inline std::string split_label(SplitKind k) { return to_string(k); }
inline std::string window_label(int ms) { return std::to_string(ms) + "ms"; }
inline std::string class_label(int k) { return std::to_string(k) + "-class"; }

struct ResultGrid {
    std::vector<Cell> cells;  // sorted by key
    double elapsed_s = 0.0;

    const Cell* find(const CellKey& k) const {
        auto it = std::lower_bound(cells.begin(), cells.end(), k, [](const Cell& c, const CellKey& key) { return c.key < key; });
        return it != cells.end() && it->key == k ? &*it : nullptr;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "model,type,window,classes,mean,std,subjects,cell\n";
        for (const auto& c : cells) {
            os << to_string(c.key.model) << ',' << split_label(c.key.split) << ',' << window_label(c.key.window_ms) << ','
               << class_label(c.key.classes) << ',';
            if (c.absent) {
                os << ",,0,absent\n";
                continue;
            }
            os << std::fixed << std::setprecision(4) << c.stats.mean << ',' << c.stats.std << ',' << c.stats.n << ','
               << c.stats.mean << " ± " << c.stats.std << '\n';
            os.unsetf(std::ios::floatfield);
        }
        return os.str();
    }

    nlohmann::json to_json() const {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& c : cells) {
            nlohmann::json j{{"model", to_string(c.key.model)},
                             {"type", split_label(c.key.split)},
                             {"window", window_label(c.key.window_ms)},
                             {"classes", class_label(c.key.classes)},
                             {"absent", c.absent}};
            if (c.absent) {
                j["reason"] = c.absent_reason;
            } else {
                j["mean"] = c.stats.mean;
                j["std"] = c.stats.std;
                nlohmann::json subj = nlohmann::json::array();
                for (const auto& [s, a] : c.subject_accuracy) subj.push_back({{"subject", s}, {"accuracy", a}});
                j["subjects"] = subj;
                nlohmann::json folds = nlohmann::json::array();
                for (const auto& f : c.folds)
                    folds.push_back({{"subject", f.subject_id}, {"day", f.day_id}, {"seed", f.seed},
                                     {"n_train", f.n_train}, {"n_test", f.n_test}, {"accuracy", f.accuracy}});
                j["folds"] = folds;
            }
            arr.push_back(std::move(j));
        }
        return {{"cells", arr}, {"elapsed_s", elapsed_s}};
    }
};

namespace detail {

struct FoldTask {
    CellKey key;
    SplitSpec split;
    std::uint64_t seed;
};

inline std::vector<SplitSpec> fold_specs(SplitKind kind, const std::vector<int>& subjects, const std::vector<int>& days,
                                         int cs_day) {
    std::vector<SplitSpec> out;
    for (int s : subjects) {
        SplitSpec sp;
        sp.kind = kind;
        sp.subject_id = s;
        switch (kind) {
            case SplitKind::single_day:
                for (int d : days) {
                    sp.day_id = d;
                    out.push_back(sp);
                }
                break;
            case SplitKind::cross_day:
                sp.train_day = 1;
                sp.test_day = 2;
                out.push_back(sp);
                break;
            case SplitKind::cross_subject:
                sp.day_id = cs_day;
                out.push_back(sp);
                break;
        }
    }
    return out;
}

inline std::uint64_t fold_seed(std::uint64_t seed, const SplitSpec& s) {
    return derive_seed(seed, static_cast<int>(s.kind), s.subject_id, s.day_id);
}

}  // namespace detail

// Runs every grid cell; folds with no data are skipped and a cell with no
// folds at all is marked absent. Folds run in parallel, results are reduced
// in a fixed order.
inline ResultGrid run_benchmark(const Corpus& corpus, const BenchmarkSpec& spec,
                                const std::function<void(std::size_t, std::size_t)>& progress = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<int> subjects, days;
    for (int s = 1; s <= corpus.spec.subjects; ++s) subjects.push_back(s);
    for (int d = 1; d <= corpus.spec.days; ++d) days.push_back(d);

    std::vector<detail::FoldTask> tasks;
    std::map<CellKey, std::string> absent;
    for (auto m : spec.models)
        for (auto sk : spec.splits)
            for (int w : spec.windows_ms)
                for (int k : spec.classes) {
                    const CellKey key{m, sk, w, k};
                    if (!corpus.by_window.count(w)) {
                        absent[key] = "no windows of " + std::to_string(w) + " ms in corpus";
                        continue;
                    }
                    for (const auto& sp : detail::fold_specs(sk, subjects, days, spec.cs_day))
                        for (auto seed : spec.seeds) tasks.push_back({key, sp, detail::fold_seed(seed, sp)});
                }

    std::vector<std::optional<FoldResult>> results(tasks.size());
    std::vector<std::string> errors(tasks.size());
    std::mutex mu;
    std::size_t done = 0;
    detail::parallel_for(tasks.size(), [&](std::size_t i) {
        const auto& t = tasks[i];
        const auto& ds = corpus.by_window.at(t.key.window_ms);
        std::vector<std::size_t> keep;
        std::vector<WindowInfo> infos;
        for (std::size_t r = 0; r < ds.size(); ++r)
            if (in_task(ds.info[r].label, t.key.classes)) {
                keep.push_back(r);
                infos.push_back(ds.info[r]);
            }
        try {
            if (infos.empty()) throw EmptySplitError("no windows for the class set");
            auto idx = split_indices(infos, t.split);
            for (auto& v : idx.train) v = keep[v];
            for (auto& v : idx.test) v = keep[v];
            const auto y_train = ds.labels(idx.train);
            const auto y_test = ds.labels(idx.test);
            const auto model = train(t.key.model, ds.rows(idx.train), y_train, spec.hyper, t.seed);
            const auto ev = evaluate(model, ds.rows(idx.test), y_test);
            FoldResult fr;
            fr.subject_id = t.split.subject_id;
            fr.day_id = t.split.kind == SplitKind::cross_day ? t.split.test_day : t.split.day_id;
            fr.seed = t.seed;
            fr.n_train = idx.train.size();
            fr.n_test = idx.test.size();
            fr.accuracy = ev.accuracy;
            fr.confusion = ev.confusion;
            for (std::size_t j = 0; j < idx.test.size(); ++j) {
                auto& sc = fr.by_speed[ds.info[idx.test[j]].speed_kmh];
                ++sc.total;
                sc.correct += ev.predictions[j] == y_test[j] ? 1 : 0;
            }
            results[i] = std::move(fr);
        } catch (const Error& e) {
            errors[i] = e.what();
        }
        if (progress) {
            std::lock_guard lock(mu);
            progress(++done, tasks.size());
        }
    });

    std::map<CellKey, Cell> cells;
    for (const auto& [k, why] : absent) cells[k] = Cell{k, {}, {}, {}, true, why};
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        auto& c = cells[tasks[i].key];
        c.key = tasks[i].key;
        if (results[i]) c.folds.push_back(std::move(*results[i]));
        else if (c.absent_reason.empty()) c.absent_reason = errors[i];
    }
    ResultGrid grid;
    for (auto& [k, c] : cells) {
        if (c.folds.empty()) {
            c.absent = true;
        } else {
            std::map<int, std::pair<double, int>> per_subject;
            for (const auto& f : c.folds) {
                per_subject[f.subject_id].first += f.accuracy;
                ++per_subject[f.subject_id].second;
            }
            std::vector<double> acc;
            for (const auto& [s, p] : per_subject) {
                c.subject_accuracy.emplace_back(s, p.first / p.second);
                acc.push_back(p.first / p.second);
            }
            c.stats = mean_std(acc);
        }
        grid.cells.push_back(std::move(c));
    }
    grid.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return grid;
}

// Mean over every present cell of one model and split.
inline std::optional<double> model_split_mean(const ResultGrid& g, ModelKind m, SplitKind s) {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : g.cells)
        if (c.key.model == m && c.key.split == s && !c.absent) {
            sum += c.stats.mean;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

// Seeds, configuration and timing of a benchmark run.
inline nlohmann::json run_manifest(const Corpus& corpus, const BenchmarkSpec& spec, const ResultGrid& grid) {
    nlohmann::json models = nlohmann::json::array(), splits = nlohmann::json::array();
    for (auto m : spec.models) models.push_back(to_string(m));
    for (auto s : spec.splits) splits.push_back(to_string(s));
    const auto& h = spec.hyper;
    return {{"corpus", to_json(corpus.spec)},
            {"models", models},
            {"types", splits},
            {"windows_ms", spec.windows_ms},
            {"classes", spec.classes},
            {"seeds", spec.seeds},
            {"cs_day", spec.cs_day},
            {"feature_layout", std::string(kFeatureLayoutTag)},
            {"hyperparameters",
             {{"lda_ridge", h.lda_ridge}, {"nb_var_floor", h.nb_var_floor}, {"knn_k", h.knn_k},
              {"svm_epochs", h.svm_epochs}, {"svm_lambda", h.svm_lambda}, {"rf_trees", h.rf_trees},
              {"rf_max_depth", h.rf_max_depth}, {"rf_min_leaf", h.rf_min_leaf}, {"rf_bins", h.rf_bins}}},
            {"elapsed_s", grid.elapsed_s},
            {"created_at", utc_now_iso8601()}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw FormatError("cannot write " + p.string());
    os << s;
}

// ---------------------------------------------------------------------------
// Per-speed breakdown

struct SpeedRow {
    std::string speed;  // "0", "4", "6", "8" or "mixed"
    MeanStd accuracy;   // over subjects
};

struct SpeedBreakdown {
    std::vector<SpeedRow> rows;

    // Largest gap between per-speed means and the pooled subject std.
    double max_gap() const {
        double lo = 1e300, hi = -1e300;
        for (const auto& r : rows)
            if (r.speed != "mixed") lo = std::min(lo, r.accuracy.mean), hi = std::max(hi, r.accuracy.mean);
        return hi - lo;
    }
    double pooled_std() const {
        double v = 0.0;
        int n = 0;
        for (const auto& r : rows)
            if (r.speed != "mixed") v += r.accuracy.std * r.accuracy.std, ++n;
        return n ? std::sqrt(v / n) : 0.0;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "speed_kmh,mean,std,subjects\n";
        for (const auto& r : rows) os << r.speed << ',' << r.accuracy.mean << ',' << r.accuracy.std << ',' << r.accuracy.n << '\n';
        return os.str();
    }
};

// Per-speed accuracy of one cell's test windows, averaged per subject.
inline SpeedBreakdown breakdown_by_speed(const Cell& cell) {
    SpeedBreakdown out;
    auto row = [&](const std::string& name, const std::function<bool(int)>& use) {
        std::map<int, std::pair<double, int>> per_subject;
        for (const auto& f : cell.folds) {
            SpeedCount sc;
            for (const auto& [spd, c] : f.by_speed)
                if (use(spd)) sc.correct += c.correct, sc.total += c.total;
            if (sc.total == 0) continue;
            per_subject[f.subject_id].first += static_cast<double>(sc.correct) / static_cast<double>(sc.total);
            ++per_subject[f.subject_id].second;
        }
        std::vector<double> v;
        for (const auto& [s, p] : per_subject) v.push_back(p.first / p.second);
        out.rows.push_back({name, mean_std(v)});
    };
    for (int s : kSpeedsKmh) row(std::to_string(s), [s](int x) { return x == s; });
    row("mixed", [](int) { return true; });
    return out;
}

// results.csv, results.json, manifest.json and one confusion CSV per cell;
// single-day cells also get a per-speed table.
inline void write_benchmark(const std::filesystem::path& dir, const Corpus& corpus, const BenchmarkSpec& spec,
                            const ResultGrid& grid) {
    write_text(dir / "results.csv", grid.to_csv());
    write_text(dir / "results.json", grid.to_json().dump(2));
    write_text(dir / "manifest.json", run_manifest(corpus, spec, grid).dump(2));
    for (const auto& c : grid.cells) {
        if (c.absent) continue;
        const std::string name = std::string(to_string(c.key.model)) + "_" + split_label(c.key.split) + "_" +
                                 std::to_string(c.key.window_ms) + "ms_" + std::to_string(c.key.classes) + "class.csv";
        write_text(dir / "confusion" / name, c.pooled_confusion().to_csv());
        if (c.key.split == SplitKind::single_day) write_text(dir / "speed" / name, breakdown_by_speed(c).to_csv());
    }
}

// ---------------------------------------------------------------------------
// Intensity sweep

// Least-squares polynomial, coefficients in ascending powers of x.
inline std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree) {
    if (x.size() != y.size() || x.size() < static_cast<std::size_t>(degree + 1))
        throw ArgumentError("polyfit needs at least degree + 1 points");
    const double lo = *std::min_element(x.begin(), x.end());
    const double hi = *std::max_element(x.begin(), x.end());
    const double scale = hi > lo ? hi - lo : 1.0;
    const auto n = static_cast<Eigen::Index>(x.size());
    Eigen::MatrixXd V(n, degree + 1);
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = (x[static_cast<std::size_t>(i)] - lo) / scale;
        for (int p = 0; p <= degree; ++p) V(i, p) = std::pow(u, p);
        b(i) = y[static_cast<std::size_t>(i)];
    }
    const Eigen::VectorXd cu = V.colPivHouseholderQr().solve(b);
    // Expand p(u) with u = (x - lo) / scale back into powers of x.
    std::vector<double> c(static_cast<std::size_t>(degree + 1), 0.0);
    for (int p = 0; p <= degree; ++p) {
        double binom = 1.0;
        for (int k = 0; k <= p; ++k) {
            if (k > 0) binom = binom * (p - k + 1) / k;
            c[static_cast<std::size_t>(k)] += cu(p) * binom * std::pow(-lo, p - k) / std::pow(scale, p);
        }
    }
    return c;
}

inline double polyval(std::span<const double> c, double x) {
    double v = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) v = v * x + c[i];
    return v;
}

inline std::vector<double> ranks(std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

// Pearson correlation of ranks (average ranks for ties).
inline double spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw ArgumentError("spearman needs two equal-length series");
    const auto ra = ranks(a), rb = ranks(b);
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

struct IntensityPoint {
    double intensity = 0.0;
    MeanStd accuracy;
    bool absent = false;
};

struct IntensitySweep {
    std::vector<IntensityPoint> points;
    std::vector<double> poly;  // 5th-order fit, ascending powers of intensity
    double spearman_rho = 0.0;
    // Mean of the fitted curve over the range minus the mean of its chord;
    // positive for a curve that flattens out.
    double concavity = 0.0;

    bool concave() const { return concavity > 0.0; }

    std::string to_csv() const {
        std::ostringstream os;
        os << "intensity,mean,std,subjects,fit\n";
        for (const auto& p : points) {
            os << p.intensity << ',';
            if (p.absent) os << ",,0,\n";
            else os << p.accuracy.mean << ',' << p.accuracy.std << ',' << p.accuracy.n << ',' << polyval(poly, p.intensity) << '\n';
        }
        return os.str();
    }
};

struct SweepSpec {
    // Centers of six equal force bins, as fractions of the maximum force.
    std::vector<double> levels{1.0 / 12, 3.0 / 12, 5.0 / 12, 7.0 / 12, 9.0 / 12, 11.0 / 12};
    int subjects = 10;
    ModelKind model = ModelKind::random_forest;
    int window_ms = 500;
    int classes = 6;
    std::size_t trials = kBlocks * kTrialsPerBlock;  // first N trials of the paradigm per session
    SynthConfig synth = default_synth_config();
    Hyperparams hyper;
    std::uint64_t seed = 1;
    int degree = 5;
};

inline IntensitySweep finish_sweep(std::vector<IntensityPoint> points, int degree) {
    IntensitySweep out;
    out.points = std::move(points);
    std::vector<double> x, y;
    for (const auto& p : out.points)
        if (!p.absent) x.push_back(p.intensity), y.push_back(p.accuracy.mean);
    if (x.size() >= 2) out.spearman_rho = spearman(x, y);
    if (x.size() >= static_cast<std::size_t>(degree + 1)) {
        out.poly = polyfit(x, y, degree);
        const double a = x.front(), b = x.back();
        constexpr int kGrid = 1000;
        double area = 0.0;
        for (int i = 0; i < kGrid; ++i) area += polyval(out.poly, a + (b - a) * (i + 0.5) / kGrid);
        area /= kGrid;
        out.concavity = area - 0.5 * (polyval(out.poly, a) + polyval(out.poly, b));
    }
    return out;
}

// One single-day model per subject, trained on the training blocks of a
// session at the configured intensity, then scored on the test blocks of the
// same session resynthesized at each level.
inline IntensitySweep sweep_intensity(const SweepSpec& spec) {
    if (spec.subjects < 1) throw ArgumentError("sweep needs at least one subject");
    if (spec.levels.empty()) throw ArgumentError("sweep needs at least one level");
    const Schedule schedule = paradigm_schedule().truncated(spec.trials);
    const int w[] = {spec.window_ms};
    const std::size_t n_levels = spec.levels.size();
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(spec.subjects), std::vector<double>(n_levels, -1.0));
    detail::parallel_for(static_cast<std::size_t>(spec.subjects), [&](std::size_t k) {
        const int subject = static_cast<int>(k) + 1;
        SplitSpec split;
        split.subject_id = subject;
        const auto train_set = session_features(Synthesizer(spec.synth).session(subject, 1, 0, schedule), w)[spec.window_ms];
        std::vector<std::size_t> train_idx;
        for (std::size_t i = 0; i < train_set.size(); ++i)
            if (train_set.info[i].block <= split.last_train_block && in_task(train_set.info[i].label, spec.classes))
                train_idx.push_back(i);
        if (train_idx.empty()) return;
        const TrainedModel model = train(spec.model, train_set.rows(train_idx), train_set.labels(train_idx), spec.hyper,
                                         detail::fold_seed(spec.seed, split));
        for (std::size_t l = 0; l < n_levels; ++l) {
            SynthConfig cfg = spec.synth;
            cfg.intensity = spec.levels[l];
            const auto test_set = session_features(Synthesizer(cfg).session(subject, 1, 0, schedule), w)[spec.window_ms];
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < test_set.size(); ++i)
                if (test_set.info[i].block > split.last_train_block && in_task(test_set.info[i].label, spec.classes))
                    idx.push_back(i);
            if (idx.empty()) continue;
            const auto y = test_set.labels(idx);
            acc[k][l] = evaluate(model, test_set.rows(idx), y).accuracy;
        }
    });
    std::vector<IntensityPoint> points;
    for (std::size_t l = 0; l < n_levels; ++l) {
        IntensityPoint p;
        p.intensity = spec.levels[l];
        std::vector<double> v;
        for (const auto& row : acc)
            if (row[l] >= 0.0) v.push_back(row[l]);
        if (v.empty()) p.absent = true;
        else p.accuracy = mean_std(v);
        points.push_back(p);
    }
    return finish_sweep(std::move(points), spec.degree);
}

}  // namespace semg
