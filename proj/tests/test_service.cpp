#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>

#include <unistd.h>

#include "semg/harness.hpp"
#include "semg/service.hpp"

using namespace semg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("semg_test_service_" + std::to_string(::getpid())) / name;
    fs::create_directories(p);
    return p;
}

ServiceConfig fast_config(const std::string& dir) {
    ServiceConfig c;
    c.port = 0;
    c.rate_multiplier = 0.0;
    c.data_dir = scratch(dir);
    c.client_queue = 100000;
    return c;
}

std::vector<json> drain(Subscription& sub) {
    std::vector<json> out;
    while (auto m = sub.next(std::chrono::milliseconds(0))) out.push_back(json::parse(*m));
    return out;
}

std::vector<json> of_type(const std::vector<json>& msgs, const std::string& type) {
    std::vector<json> out;
    for (const auto& m : msgs)
        if (m.at("type") == type) out.push_back(m);
    return out;
}

json post(httplib::Client& cli, const std::string& path, const json& body, int expect) {
    auto r = cli.Post(path, body.dump(), "application/json");
    REQUIRE(r);
    INFO(path << " -> " << r->body);
    CHECK(r->status == expect);
    return json::parse(r->body);
}

const fs::path& saved_model() {
    static const fs::path p = [] {
        const auto rec = synth_session(default_synth_config(), 1, 1, 0, paradigm_schedule().truncated(24));
        const Recording recs[] = {rec};
        const auto m = train_on_recordings(recs, ModelKind::lda, 250, 6);
        const auto path = scratch("model") / "lda.model";
        save_model(m, path);
        return path;
    }();
    return p;
}

}  // namespace

TEST_CASE("service config from json and environment") {
    const auto c = service_config_from_json({{"port", 9001}, {"rate_multiplier", 2.5}, {"data_dir", "/tmp/x"}});
    CHECK(c.port == 9001);
    CHECK(c.rate_multiplier == 2.5);
    CHECK(c.data_dir == fs::path("/tmp/x"));
    CHECK(c.host == "127.0.0.1");
    CHECK_THROWS_AS(service_config_from_json({{"port", 70000}}), ConfigError);
    CHECK_THROWS_AS(service_config_from_json({{"rate_multiplier", -1.0}}), ConfigError);
    CHECK_THROWS_AS(service_config_from_json({{"client_queue", 0}}), ConfigError);

    const auto file = scratch("cfg") / "service.json";
    {
        std::ofstream os(file);
        os << json{{"port", 9001}, {"data_dir", "from_file"}}.dump();
    }
    ::setenv("SEMG_PORT", "9123", 1);
    ::setenv("SEMG_DATA_DIR", "/tmp/from_env", 1);
    const auto e = load_service_config(file);
    CHECK(e.port == 9123);
    CHECK(e.data_dir == fs::path("/tmp/from_env"));
    ::setenv("SEMG_PORT", "notaport", 1);
    CHECK_THROWS_AS(load_service_config(file), ConfigError);
    ::unsetenv("SEMG_PORT");
    ::unsetenv("SEMG_DATA_DIR");
    CHECK(load_service_config(file).port == 9001);
    CHECK(load_service_config(std::nullopt).port == 8080);
    CHECK_THROWS_AS(load_service_config(scratch("cfg") / "missing.json"), ConfigError);
}

TEST_CASE("slow clients lose display messages only") {
    StreamHub hub(5);
    auto slow = hub.subscribe();
    for (int i = 0; i < 20; ++i) {
        hub.publish("display", {{"i", i}}, Plane::display);
        if (i % 4 == 0) hub.publish("trigger", {{"i", i}});
    }
    hub.publish("display", {{"i", 20}}, Plane::display);
    const auto msgs = drain(*slow);
    CHECK(of_type(msgs, "trigger").size() == 5);
    CHECK(of_type(msgs, "display").size() == 5);
    CHECK(slow->dropped() == 16);
    CHECK(hub.dropped() == 16);

    // after draining, the next display message is preceded by a drop report
    hub.publish("display", {{"i", 21}}, Plane::display);
    const auto after = drain(*slow);
    REQUIRE(after.size() == 2);
    CHECK(after[0].at("type") == "drops");
    CHECK(after[0].at("dropped") == 16);
    CHECK(after[1].at("type") == "display");

    std::uint64_t last = 0;
    bool first = true;
    for (const auto& m : msgs) {
        CHECK(m.contains("seq"));
        CHECK(m.contains("t_ms"));
        if (!first) CHECK(m.at("seq").get<std::uint64_t>() > last);
        last = m.at("seq").get<std::uint64_t>();
        first = false;
    }
    hub.close_all();
    CHECK(slow->closed());
    CHECK(hub.subscribe()->closed());
}

TEST_CASE("two-trial recording over http") {
    const auto cfg = fast_config("rec2");
    Service svc(cfg);
    const int port = svc.start();
    auto sub = svc.hub().subscribe();
    httplib::Client cli("127.0.0.1", port);

    auto st = cli.Get("/status");
    REQUIRE(st);
    CHECK(json::parse(st->body).at("phase") == "idle");

    post(cli, "/session/start", {{"subject_id", 3}, {"day_id", 1}, {"trials", 2}}, 200);
    REQUIRE(svc.controller().wait_idle(std::chrono::seconds(60)));
    const auto status = json::parse(cli.Get("/status")->body);
    CHECK(status.at("phase") == "idle");
    CHECK(status.at("rows") == 10000);
    CHECK(status.at("trials_done") == 2);
    CHECK(status.at("last_session").at("complete") == true);
    const fs::path path = status.at("last_session").at("path").get<std::string>();
    CHECK(path == session_path(cfg.data_dir, 3, 1));
    const auto rec = read_recording(path);
    CHECK(rec.rows() == 10000);
    CHECK(validate_recording(rec).empty());
    CHECK(extract_trials(rec).trials.size() == 2);

    // identical to the samples the synthetic wearer generates through the framing
    const auto direct = synth_session(default_synth_config(), 3, 1, 0, paradigm_schedule().truncated(2));
    const auto expect = read_recording([&] {
        const auto p = scratch("rec2_direct") / "s.dat";
        write_recording(direct, p);
        return p;
    }());
    for (std::size_t r = 0; r < rec.rows(); r += 997)
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::fabs(rec.at(r, c) - expect.at(r, c)) <= 0.03);

    const auto msgs = drain(*sub);
    CHECK(of_type(msgs, "display").size() == 1000);
    CHECK(of_type(msgs, "session_end").size() == 1);
    CHECK(of_type(msgs, "session_end")[0].at("rows") == 10000);
    const auto d = of_type(msgs, "display")[0];
    CHECK(d.at("emg").size() == 8);
    CHECK(d.at("accel").size() == 3);
    CHECK(d.contains("trigger"));
    CHECK(d.contains("block"));
    CHECK(d.contains("speed"));
    const auto phases = of_type(msgs, "phase");
    REQUIRE(phases.size() == 2);
    CHECK(phases[0].at("phase") == "recording");
    CHECK(phases[1].at("phase") == "idle");
    svc.stop();
}

TEST_CASE("block one prompts and per-trial progress") {
    Service svc(fast_config("block1"));
    svc.start();
    auto sub = svc.hub().subscribe();
    RecordingRequest req;
    req.subject_id = 2;
    req.schedule = paradigm_schedule().truncated(12);
    svc.controller().start_session(req);
    REQUIRE(svc.controller().wait_idle(std::chrono::seconds(120)));
    const auto msgs = drain(*sub);

    const auto prompts = of_type(msgs, "prompt");
    REQUIRE(prompts.size() == 12);
    for (int k = 0; k < 12; ++k) {
        CHECK(prompts[static_cast<std::size_t>(k)].at("mode_id") == k + 1);
        CHECK(prompts[static_cast<std::size_t>(k)].at("block") == 1);
        CHECK(prompts[static_cast<std::size_t>(k)].at("speed") == 0);
        CHECK(prompts[static_cast<std::size_t>(k)].at("text") == ForceMode::from_id(k + 1).label());
    }
    std::map<int, double> last;
    for (const auto& p : of_type(msgs, "progress")) {
        const double v = p.at("progress").get<double>();
        const int trial = p.at("trial").get<int>();
        CHECK(v > (last.count(trial) ? last[trial] : 0.0));
        CHECK(v <= 1.0);
        last[trial] = v;
    }
    REQUIRE(last.size() == 12);
    for (const auto& [t, v] : last) CHECK(v == 1.0);

    // trigger messages follow rest -> mode -> rest
    const auto trig = of_type(msgs, "trigger");
    REQUIRE(trig.size() == 24);
    for (std::size_t i = 0; i < trig.size(); ++i)
        CHECK(trig[i].at("trigger") == (i % 2 == 0 ? 0 : static_cast<int>(i / 2) + 1));
    svc.stop();
}

TEST_CASE("illegal transitions are conflicts") {
    auto cfg = fast_config("conflict");
    cfg.rate_multiplier = 1.0;
    Service svc(cfg);
    const int port = svc.start();
    httplib::Client cli("127.0.0.1", port);
    post(cli, "/params", {{"model", saved_model().string()}}, 200);
    post(cli, "/session/start", {{"subject_id", 1}, {"day_id", 1}, {"trials", 2}}, 200);
    const auto c1 = post(cli, "/online/start", {{"n_trials", 3}}, 409);
    CHECK(c1.at("phase") == "recording");
    post(cli, "/session/start", {{"trials", 1}}, 409);
    post(cli, "/params", {{"window_ms", 500}}, 409);
    post(cli, "/reaction/start", {{"n", 10}}, 409);

    const auto stopped = post(cli, "/session/stop", json::object(), 200);
    CHECK(stopped.at("phase") == "idle");
    CHECK(stopped.at("last_session").at("complete") == false);
    const auto rows = stopped.at("last_session").at("rows").get<std::size_t>();
    CHECK(rows > 0);
    CHECK(rows < 10000);
    CHECK(read_recording(stopped.at("last_session").at("path").get<std::string>()).rows() == rows);
    svc.stop();
}

TEST_CASE("bad requests are rejected") {
    Service svc(fast_config("bad"));
    const int port = svc.start();
    httplib::Client cli("127.0.0.1", port);
    auto r = cli.Post("/session/start", "{not json", "application/json");
    REQUIRE(r);
    CHECK(r->status == 400);
    post(cli, "/session/start", {{"subject_id", 0}}, 400);
    post(cli, "/session/start", {{"trials", 0}}, 400);
    post(cli, "/session/start", {{"wearing_shift", 8}}, 400);
    post(cli, "/online/start", {{"n_trials", 3}}, 400);  // no model yet
    post(cli, "/online/start", {{"n_trials", 3}, {"speed_kmh", 5}}, 400);
    post(cli, "/params", {{"window_ms", 1.0}}, 400);
    post(cli, "/params", {{"model", "/nonexistent/model.bin"}}, 400);
    post(cli, "/reaction/start", {{"n", 5}}, 400);
    post(cli, "/reaction/submit", {{"latencies_s", {0.4, 0.4}}}, 400);
    post(cli, "/reaction/submit", json::object(), 400);
    CHECK(json::parse(cli.Get("/status")->body).at("phase") == "idle");
    svc.stop();
}

TEST_CASE("params and reaction calibration echo in status") {
    Service svc(fast_config("params"));
    const int port = svc.start();
    httplib::Client cli("127.0.0.1", port);
    const auto p = post(cli, "/params", {{"window_ms", 500}, {"step_ms", 125}}, 200);
    CHECK(p.at("window_ms") == 500.0);
    auto status = json::parse(cli.Get("/status")->body);
    CHECK(status.at("params").at("window_ms") == 500.0);
    CHECK(status.at("params").at("step_ms") == 125.0);

    post(cli, "/reaction/start", {{"n", 10}}, 200);
    std::vector<double> lat(10, 0.35);
    lat[0] = 0.2;
    lat[9] = 3.0;
    const auto r = post(cli, "/reaction/submit", {{"latencies_s", lat}}, 200);
    CHECK(r.at("reaction_const_s").get<double>() == Catch::Approx(0.35));
    status = json::parse(cli.Get("/status")->body);
    CHECK(status.at("params").at("reaction_const_s").get<double>() == Catch::Approx(0.35));
    svc.stop();
}

TEST_CASE("online test over http") {
    Service svc(fast_config("online"));
    const int port = svc.start();
    auto sub = svc.hub().subscribe();
    httplib::Client cli("127.0.0.1", port);
    post(cli, "/params", {{"model", saved_model().string()}}, 200);
    post(cli, "/online/start", {{"n_trials", 4}, {"seed", 3}}, 200);
    REQUIRE(svc.controller().wait_idle(std::chrono::seconds(120)));
    const auto status = json::parse(cli.Get("/status")->body);
    CHECK(status.at("progress") == 1.0);
    const auto& lo = status.at("last_online");
    CHECK(lo.at("trials") == 4);
    CHECK(lo.at("aborted") == false);

    const auto msgs = drain(*sub);
    const auto cues = of_type(msgs, "cue");
    const auto results = of_type(msgs, "trial_result");
    REQUIRE(cues.size() == 4);
    REQUIRE(results.size() == 4);
    const auto plan = make_online_plan(4, 3);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(cues[k].at("mode_id") == plan.cues[k].mode_id);
        CHECK(cues[k].at("sample") == plan.cues[k].sample);
        CHECK(results[k].at("cued_mode") == plan.cues[k].mode_id);
        for (const char* f : {"index", "predicted_mode", "t0", "t3", "delta_t_s", "correct", "completed", "timed_out"})
            CHECK(results[k].contains(f));
    }
    const auto preds = of_type(msgs, "prediction");
    CHECK(preds.size() == plan.total_samples / 125);
    for (const char* f : {"label", "t_s", "sample_end", "latency_ms"}) CHECK(preds.front().contains(f));
    const auto end = of_type(msgs, "online_end");
    REQUIRE(end.size() == 1);
    for (const char* f : {"accuracy", "mean_delta_t_s", "completed", "trials", "aborted", "abort_reason",
                          "mean_latency_ms", "max_latency_ms"})
        CHECK(end[0].contains(f));
    svc.stop();
}

TEST_CASE("display rate in real time") {
    auto cfg = fast_config("realtime");
    cfg.rate_multiplier = 1.0;
    Service svc(cfg);
    svc.start();
    auto sub = svc.hub().subscribe();
    svc.controller().start_session(recording_request_from_json({{"trials", 1}}));
    std::this_thread::sleep_for(std::chrono::seconds(2));
    svc.controller().stop_session();
    const auto msgs = drain(*sub);
    // 50 display messages per second of signal
    const auto n = of_type(msgs, "display").size();
    CHECK(n >= 80);
    CHECK(n <= 110);
    svc.stop();
}

TEST_CASE("stream endpoint delivers newline-delimited json") {
    Service svc(fast_config("stream"));
    const int port = svc.start();
    std::vector<json> got;
    std::thread reader([&] {
        httplib::Client cli("127.0.0.1", port);
        std::string buf;
        cli.Get("/stream", [&](const char* data, std::size_t len) {
            buf.append(data, len);
            std::size_t nl;
            while ((nl = buf.find('\n')) != std::string::npos) {
                got.push_back(json::parse(buf.substr(0, nl)));
                buf.erase(0, nl + 1);
            }
            return got.size() < 3;
        });
    });
    for (int i = 0; i < 100 && svc.hub().subscribers() == 0; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(20));
    REQUIRE(svc.hub().subscribers() == 1);
    httplib::Client cli("127.0.0.1", port);
    post(cli, "/reaction/start", {{"n", 12}}, 200);
    post(cli, "/reaction/submit", {{"latencies_s", std::vector<double>(12, 0.5)}}, 200);
    post(cli, "/reaction/start", {{"n", 10}}, 200);
    reader.join();
    REQUIRE(got.size() == 3);
    CHECK(got[0].at("type") == "reaction_start");
    CHECK(got[0].at("n") == 12);
    CHECK(got[1].at("type") == "reaction_done");
    CHECK(got[1].at("reaction_const_s") == 0.5);
    CHECK(got[1].at("samples") == 12);
    CHECK(got[2].at("seq").get<int>() > got[1].at("seq").get<int>());
    svc.stop();
}

TEST_CASE("recording from a tcp device") {
    const auto sched = paradigm_schedule().truncated(2);
    DeviceServer dev(0, [&] { return std::make_shared<ScheduleSubject>(default_synth_config(), 4, 2, 1, sched); }, 0.0);
    auto cfg = fast_config("tcp");
    cfg.device = "127.0.0.1:" + std::to_string(dev.port());
    Service svc(cfg);
    svc.start();
    RecordingRequest req;
    req.subject_id = 4;
    req.day_id = 2;
    req.wearing_shift = 1;
    req.schedule = sched;
    svc.controller().start_session(req);
    REQUIRE(svc.controller().wait_idle(std::chrono::seconds(60)));
    const auto st = svc.controller().status();
    CHECK(st.at("device").at("kind") == "tcp");
    CHECK(st.at("rows") == 10000);
    const auto rec = read_recording(session_path(cfg.data_dir, 4, 2));
    const auto ref = synth_session(default_synth_config(), 4, 2, 1, sched);
    for (std::size_t r = 0; r < rec.rows(); r += 1009)
        for (std::size_t c = 0; c < 8; ++c) CHECK(std::fabs(rec.at(r, c) - ref.at(r, c)) <= 0.03);
    CHECK(dev.clients_served() == 1);
    svc.stop();
    dev.stop();
}
