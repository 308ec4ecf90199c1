// semg: benchmark, synthesis, quality, online simulation and the host service.

#include "semg.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace semg;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

SynthConfig synth_from(const std::string& path) { return path.empty() ? default_synth_config() : load_synth_config(path); }

// ---------------------------------------------------------------------------

struct BenchRunOpts {
    std::vector<std::string> splits{"sd", "cd", "cs"};
    std::vector<int> classes{6, 12};
    std::vector<int> windows{250, 500, 750};
    std::vector<std::string> models{"lda", "nb", "knn", "svm", "rf"};
    int subjects = 10;
    std::vector<std::uint64_t> seeds{1};
    int cs_day = 1;
    std::string out = "results";
    std::string synth;
    bool quiet = false;
};

int bench_run(const BenchRunOpts& o) {
    CorpusSpec cs;
    cs.subjects = o.subjects;
    cs.synth = synth_from(o.synth);
    cs.windows_ms = o.windows;
    BenchmarkSpec bs;
    bs.models.clear();
    for (const auto& m : o.models) bs.models.push_back(parse_model_kind(m));
    bs.splits.clear();
    for (const auto& s : o.splits) bs.splits.push_back(parse_split_kind(s));
    bs.windows_ms = o.windows;
    bs.classes = o.classes;
    bs.seeds = o.seeds;
    bs.cs_day = o.cs_day;
    if (std::find(bs.splits.begin(), bs.splits.end(), SplitKind::cross_day) == bs.splits.end()) cs.days = 1;

    const auto t0 = std::chrono::steady_clock::now();
    std::size_t built = 0;
    const Corpus corpus = build_corpus(cs, [&](int s, int d) {
        if (!o.quiet) std::cerr << "\rsynthesized " << ++built << "/" << cs.subjects * cs.days << " sessions (S" << s
                                << " D" << d << ")   " << std::flush;
    });
    if (!o.quiet) std::cerr << '\n';
    const ResultGrid grid = run_benchmark(corpus, bs, [&](std::size_t done, std::size_t total) {
        if (!o.quiet) std::cerr << "\rfolds " << done << "/" << total << std::flush;
    });
    if (!o.quiet) std::cerr << '\n';
    write_benchmark(o.out, corpus, bs, grid);
    std::cout << grid.to_csv();
    std::cerr << "wrote " << o.out << " in "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    return 0;
}

// Table-style view of a results directory: one row per model and type,
// one column per window and class count.
int bench_report(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "results.json");
    if (!in) throw FormatError("no results.json in " + dir);
    nlohmann::json j;
    in >> j;
    std::vector<std::string> cols;
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> rows;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& c : j.at("cells")) {
        const std::string col = c.at("window").get<std::string>() + " " + c.at("classes").get<std::string>();
        if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
        const auto key = std::make_pair(c.at("model").get<std::string>(), c.at("type").get<std::string>());
        if (!rows.count(key)) order.push_back(key);
        std::ostringstream v;
        if (c.at("absent").get<bool>()) v << "absent";
        else v << std::fixed << std::setprecision(4) << c.at("mean").get<double>() << " ± " << c.at("std").get<double>();
        rows[key][col] = v.str();
    }
    std::sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
        const int wa = std::stoi(a), wb = std::stoi(b);
        if (wa != wb) return wa < wb;
        return a < b;
    });
    std::cout << std::left << std::setw(14) << "model" << std::setw(6) << "type";
    for (const auto& c : cols) std::cout << std::setw(20) << c;
    std::cout << '\n';
    for (const auto& k : order) {
        std::cout << std::setw(14) << k.first << std::setw(6) << k.second;
        for (const auto& c : cols) std::cout << std::setw(20) << (rows[k].count(c) ? rows[k][c] : "-");
        std::cout << '\n';
    }
    return 0;
}

int bench_sweep(int subjects, const std::string& model, const std::string& synth, const std::string& out) {
    SweepSpec sp;
    sp.subjects = subjects;
    sp.model = parse_model_kind(model);
    sp.synth = synth_from(synth);
    const auto r = sweep_intensity(sp);
    std::cout << r.to_csv();
    std::cout << "# spearman_rho=" << r.spearman_rho << " concavity=" << r.concavity << " poly=";
    for (std::size_t i = 0; i < r.poly.size(); ++i) std::cout << (i ? "," : "") << r.poly[i];
    std::cout << '\n';
    if (!out.empty()) write_text(out, r.to_csv());
    return 0;
}

// ---------------------------------------------------------------------------

int synth_generate(int subject, int day, int shift, int trials, const std::string& synth, const std::string& out) {
    Schedule sched = paradigm_schedule();
    if (trials > 0) sched = sched.truncated(static_cast<std::size_t>(trials));
    Recording rec = synth_session(synth_from(synth), subject, day, shift, sched);
    const fs::path path = out.empty() ? session_path("data", subject, day) : fs::path(out);
    write_recording(rec, path);
    std::cout << path.string() << " rows=" << rec.rows() << '\n';
    return 0;
}

int synth_device(int port, int subject, int day, int shift, double rate, const std::string& synth) {
    const SynthConfig cfg = synth_from(synth);
    DeviceServer server(
        port, [=] { return std::make_shared<ScheduleSubject>(cfg, subject, day, shift, paradigm_schedule()); }, rate,
        "0.0.0.0");
    std::cerr << "device listening on port " << server.port() << " (S" << subject << " D" << day << ", x" << rate
              << ")\n";
    wait_for_signal();
    server.stop();
    return 0;
}

int serve(const std::string& config, std::optional<int> port, const std::string& data_dir) {
    ServiceConfig cfg = load_service_config(config.empty() ? std::nullopt : std::optional<fs::path>(config));
    if (port) cfg.port = *port;
    if (!data_dir.empty()) cfg.data_dir = data_dir;
    Service svc(cfg);
    const int p = svc.start();
    std::cerr << "serving on http://" << cfg.host << ":" << p << " data_dir=" << cfg.data_dir.string() << '\n';
    wait_for_signal();
    svc.stop();
    return 0;
}

// Recordings given explicitly, or every session.dat under a directory.
std::vector<fs::path> recording_paths(const std::vector<std::string>& inputs) {
    std::vector<fs::path> out;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::recursive_directory_iterator(in))
                if (e.is_regular_file() && e.path().extension() == ".dat") out.push_back(e.path());
        } else {
            out.emplace_back(in);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

int quality_report(const std::vector<std::string>& inputs, int synth_subjects, const std::string& synth,
                   const std::string& out) {
    std::vector<SubjectQuality> all;
    if (!inputs.empty()) {
        for (const auto& p : recording_paths(inputs)) {
            const auto q = subject_quality(read_recording(p));
            all.insert(all.end(), q.begin(), q.end());
        }
    } else {
        const Synthesizer sy(synth_from(synth));
        for (int s = 1; s <= synth_subjects; ++s) {
            const auto q = subject_quality(sy.session(s, 1, 0, paradigm_schedule()));
            all.insert(all.end(), q.begin(), q.end());
        }
    }
    if (all.empty()) throw DataError("no trials to assess");
    const auto rep = aggregate_quality(std::move(all));
    std::cout << rep.to_csv();
    if (!out.empty()) write_text(out, rep.to_csv());
    return 0;
}

int model_train(const std::vector<std::string>& inputs, int subject, const std::string& model, int window, int classes,
                const std::string& synth, const std::string& out) {
    std::vector<Recording> recs;
    if (!inputs.empty())
        for (const auto& p : recording_paths(inputs)) recs.push_back(read_recording(p));
    else
        recs.push_back(synth_session(synth_from(synth), subject, 1, 0));
    const auto m = train_on_recordings(recs, parse_model_kind(model), window, classes);
    save_model(m, fs::path(out));
    std::cout << out << " kind=" << to_string(m.kind) << " classes=" << m.classes.size() << '\n';
    return 0;
}

int online_simulate(const std::string& model_path, const std::string& model, int subject, std::size_t trials,
                    double window, double step, std::uint64_t seed, int speed, double rate, const std::string& synth,
                    bool verbose) {
    const SynthConfig cfg = synth_from(synth);
    const TrainedModel m = model_path.empty()
                               ? train_on_recordings(std::vector<Recording>{synth_session(cfg, subject, 1, 0)},
                                                     parse_model_kind(model), static_cast<int>(window), 6)
                               : load_model(fs::path(model_path));
    OnlineConfig oc;
    oc.window_ms = window;
    oc.step_ms = step;
    SimulationOptions opt;
    opt.subject_id = subject;
    opt.speed_kmh = speed;
    opt.rate_multiplier = rate;
    OnlineCallbacks cb;
    if (verbose)
        cb.on_trial = [](const OnlineTrialResult& r, std::size_t k) {
            std::cout << "trial " << k + 1 << " cued=" << r.cued_mode << " predicted=" << r.predicted_mode
                      << " dt=" << r.delta_t_s << (r.correct ? "" : " x") << '\n';
        };
    const auto res = simulate_online_session(cfg, m, trials, seed, oc, opt, cb);
    const auto& s = res.summary;
    std::cout << "trials=" << s.trials << " completed=" << s.completed << " accuracy=" << s.accuracy
              << " mean_delta_t_s=" << s.mean_delta_t_s << " mean_latency_ms=" << s.mean_latency_ms
              << " max_latency_ms=" << s.max_latency_ms << (s.aborted ? " aborted: " + s.abort_reason : "") << '\n';
    return s.aborted ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"sEMG force-mode decoding toolkit"};
    app.require_subcommand(1);

    auto* bench = app.add_subcommand("bench", "classification benchmark on a synthetic corpus");
    bench->require_subcommand(1);
    BenchRunOpts bo;
    auto* run = bench->add_subcommand("run", "evaluate models over types, windows and class counts");
    run->add_option("--split", bo.splits, "sd, cd, cs")->check(CLI::IsMember({"sd", "cd", "cs", "SD", "CD", "CS"}));
    run->add_option("--classes", bo.classes)->check(CLI::IsMember({6, 12}));
    run->add_option("--window", bo.windows, "ms")->check(CLI::IsMember({250, 500, 750}));
    run->add_option("--model", bo.models, "lda, nb, knn, svm, rf");
    run->add_option("--subjects", bo.subjects)->check(CLI::Range(1, 99));
    run->add_option("--seed", bo.seeds);
    run->add_option("--cs-day", bo.cs_day, "day used by cross-subject folds (0 = all)");
    run->add_option("--out", bo.out, "output directory");
    run->add_option("--synth-config", bo.synth);
    run->add_flag("--quiet", bo.quiet);
    std::string report_dir = "results";
    auto* report = bench->add_subcommand("report", "print a results directory as a table");
    report->add_option("--in", report_dir);
    int sweep_subjects = 10;
    std::string sweep_model = "rf", sweep_out, sweep_synth;
    auto* sweep = bench->add_subcommand("sweep", "single-day accuracy across force intensity");
    sweep->add_option("--subjects", sweep_subjects)->check(CLI::Range(1, 99));
    sweep->add_option("--model", sweep_model);
    sweep->add_option("--out", sweep_out);
    sweep->add_option("--synth-config", sweep_synth);

    auto* synth = app.add_subcommand("synth", "synthetic sessions and devices");
    synth->require_subcommand(1);
    int g_subject = 1, g_day = 1, g_shift = 0, g_trials = 0;
    std::string g_out, g_synth;
    auto* gen = synth->add_subcommand("generate", "write a session recording");
    gen->add_option("--subject", g_subject)->check(CLI::Range(1, 99));
    gen->add_option("--day", g_day)->check(CLI::PositiveNumber);
    gen->add_option("--shift", g_shift)->check(CLI::Range(0, 7));
    gen->add_option("--trials", g_trials, "first N paradigm trials (0 = all 144)");
    gen->add_option("--out", g_out, "default data/Sxx/Dd/session.dat");
    gen->add_option("--synth-config", g_synth);
    int d_port = 9000;
    double d_rate = 1.0;
    auto* dev = synth->add_subcommand("device", "serve a synthetic wearer's frames over TCP");
    dev->add_option("--port", d_port)->check(CLI::Range(0, 65535));
    dev->add_option("--subject", g_subject)->check(CLI::Range(1, 99));
    dev->add_option("--day", g_day)->check(CLI::PositiveNumber);
    dev->add_option("--shift", g_shift)->check(CLI::Range(0, 7));
    dev->add_option("--rate", d_rate, "real-time multiplier (0 = unpaced)")->check(CLI::NonNegativeNumber);
    dev->add_option("--synth-config", g_synth);

    std::string s_config, s_data;
    std::optional<int> s_port;
    auto* srv = app.add_subcommand("serve", "run the host service");
    srv->add_option("--port", s_port)->check(CLI::Range(0, 65535));
    srv->add_option("--config", s_config);
    srv->add_option("--data-dir", s_data);

    auto* quality = app.add_subcommand("quality", "signal quality");
    quality->require_subcommand(1);
    std::vector<std::string> q_in;
    int q_subjects = 10;
    std::string q_out, q_synth;
    auto* qrep = quality->add_subcommand("report", "SNR, SMR and omega per force mode");
    qrep->add_option("--in", q_in, "recordings or directories (default: synthetic subjects)");
    qrep->add_option("--subjects", q_subjects)->check(CLI::Range(1, 99));
    qrep->add_option("--out", q_out);
    qrep->add_option("--synth-config", q_synth);

    auto* model = app.add_subcommand("model", "classifiers");
    model->require_subcommand(1);
    std::vector<std::string> m_in;
    int m_subject = 1, m_window = 250, m_classes = 6;
    std::string m_kind = "rf", m_out = "model.bin", m_synth;
    auto* train_cmd = model->add_subcommand("train", "train and save a model");
    train_cmd->add_option("--in", m_in, "recordings or directories (default: one synthetic session)");
    train_cmd->add_option("--subject", m_subject)->check(CLI::Range(1, 99));
    train_cmd->add_option("--model", m_kind);
    train_cmd->add_option("--window", m_window)->check(CLI::IsMember({250, 500, 750}));
    train_cmd->add_option("--classes", m_classes)->check(CLI::IsMember({6, 12}));
    train_cmd->add_option("--out", m_out);
    train_cmd->add_option("--synth-config", m_synth);

    auto* online = app.add_subcommand("online", "streaming decoder");
    online->require_subcommand(1);
    std::string o_model_path, o_model = "rf", o_synth;
    int o_subject = 1, o_speed = 0;
    std::size_t o_trials = 50;
    double o_window = 250, o_step = 250, o_rate = 0;
    std::uint64_t o_seed = 1;
    bool o_verbose = false;
    auto* sim = online->add_subcommand("simulate", "cue-and-respond session with a synthetic wearer");
    sim->add_option("--model-file", o_model_path, "saved model (default: train on the subject's session)");
    sim->add_option("--model", o_model);
    sim->add_option("--subject", o_subject)->check(CLI::Range(1, 99));
    sim->add_option("--trials", o_trials);
    sim->add_option("--window", o_window, "ms");
    sim->add_option("--step", o_step, "ms");
    sim->add_option("--seed", o_seed);
    sim->add_option("--speed", o_speed)->check(CLI::IsMember({0, 4, 6, 8}));
    sim->add_option("--rate", o_rate, "real-time multiplier (0 = unpaced)")->check(CLI::NonNegativeNumber);
    sim->add_option("--synth-config", o_synth);
    sim->add_flag("-v,--verbose", o_verbose);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return bench_run(bo);
        if (*report) return bench_report(report_dir);
        if (*sweep) return bench_sweep(sweep_subjects, sweep_model, sweep_synth, sweep_out);
        if (*gen) return synth_generate(g_subject, g_day, g_shift, g_trials, g_synth, g_out);
        if (*dev) return synth_device(d_port, g_subject, g_day, g_shift, d_rate, g_synth);
        if (*srv) return serve(s_config, s_port, s_data);
        if (*qrep) return quality_report(q_in, q_subjects, q_synth, q_out);
        if (*train_cmd) return model_train(m_in, m_subject, m_kind, m_window, m_classes, m_synth, m_out);
        if (*sim)
            return online_simulate(o_model_path, o_model, o_subject, o_trials, o_window, o_step, o_seed, o_speed, o_rate,
                                   o_synth, o_verbose);
    } catch (const semg::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
