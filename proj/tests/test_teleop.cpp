#include <doctest.h>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <future>
#include <set>
#include <thread>

#include "helpers.hpp"

using namespace safeqil;
using namespace safeqil::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Fixture {
  fs::path dir;
  fs::path file;
  DemoSink sink;
  TeleopSession session;

  explicit Fixture(const std::string& name)
      : dir(scratch_dir(name)),
        file(dir / "teleop.jsonl"),
        sink(file, true),
        session(make_env("toygoal", MapConfig{}), &sink) {}

  std::vector<json> send(const json& m) { return session.handle(m.dump()); }
};

// Drives toward a point with the scripted expert's proportional heading.
json toward(const std::vector<double>& s, double gx, double gy) {
  return {{"type", "action"}, {"a", {std::clamp(3.0 * (gx - s[0]), -1.0, 1.0),
                                     std::clamp(3.0 * (gy - s[1]), -1.0, 1.0)}}};
}

}  // namespace

TEST_SUITE("teleop") {
  TEST_CASE("reset returns the initial state and scene") {
    Fixture f("teleop_reset");
    const auto r = f.send({{"type", "reset"}, {"seed", 3}});
    REQUIRE(r.size() == 1);
    CHECK(r[0]["type"] == "state");
    CHECK(r[0]["r"] == 0.0);
    CHECK(r[0]["c"] == 0.0);
    CHECK(r[0]["done"] == false);
    CHECK(r[0]["s"].size() == make_env("toygoal", MapConfig{})->spec().state_dim);
    const json& sc = r[0]["scene"];
    CHECK(sc["agent"].size() == 2);
    CHECK(sc["goal"].size() == 2);
    CHECK(sc["hazards"].size() == MapConfig{}.hazards.size());
    CHECK(sc.contains("boundary"));
    CHECK(sc["episode_cost"] == 0.0);
    // Same seed, same state.
    Fixture g("teleop_reset2");
    CHECK(g.send({{"type", "reset"}, {"seed", 3}})[0]["s"] == r[0]["s"]);
  }

  TEST_CASE("malformed and out-of-order messages are errors") {
    Fixture f("teleop_errors");
    auto err = [&](const std::string& raw) {
      const auto r = f.session.handle(raw);
      return r.size() == 1 && r[0]["type"] == "error" && r[0]["msg"].is_string();
    };
    CHECK(err("not json"));
    CHECK(err("[1,2]"));
    CHECK(err(R"({"seed": 1})"));
    CHECK(err(R"({"type": "jump"})"));
    CHECK(err(R"({"type": "action", "a": [0.1, 0.2]})"));  // before any reset
    CHECK(err(R"({"type": "reset"})"));
    CHECK(err(R"({"type": "reset", "seed": -4})"));
    CHECK(err(R"({"type": "reset", "seed": 1.5})"));
    f.send({{"type", "reset"}, {"seed", 0}});
    CHECK(err(R"({"type": "action", "a": [0.1]})"));
    CHECK(err(R"({"type": "action", "a": [0.1, "x"]})"));
    CHECK(err(R"({"type": "action"})"));
    CHECK(err(R"({"type": "record"})"));
    TeleopSession bare(make_env("toygoal", MapConfig{}), nullptr);
    CHECK(bare.handle(R"({"type": "record", "on": true})")[0]["type"] == "error");
  }

  TEST_CASE("a safe episode is appended and a hazardous one dropped") {
    Fixture f("teleop_record");
    const MapConfig map;
    CHECK(f.send({{"type", "record"}, {"on", true}})[0]["type"] == "notice");
    CHECK(f.session.recording());

    // Safe: follow the scripted expert until the episode ends.
    auto expert = make_env("toygoal", map);
    auto s = f.send({{"type", "reset"}, {"seed", 11}})[0]["s"].get<std::vector<double>>();
    std::vector<double> es = expert->reset(11);
    CHECK(es == s);
    std::vector<json> last;
    for (int i = 0; i < 10000; ++i) {
      const auto a = expert->expert_action();
      expert->step(a);
      last = f.send({{"type", "action"}, {"a", a}});
      if (last[0]["done"].get<bool>()) break;
    }
    REQUIRE(last.size() == 2);
    CHECK(last[1]["type"] == "notice");
    CHECK(last[1]["retained"] == true);
    CHECK(f.sink.retained() == 1);
    CHECK(f.send({{"type", "action"}, {"a", {0.0, 0.0}}})[0]["type"] == "error");

    // Hazardous: drive into the first hazard and sit there.
    const auto& h = map.hazards.front();
    s = f.send({{"type", "reset"}, {"seed", 12}})[0]["s"].get<std::vector<double>>();
    double cost = 0.0;
    for (int i = 0; i < 10000; ++i) {
      last = f.send(toward(s, h.x, h.y));
      s = last[0]["s"].get<std::vector<double>>();
      cost += last[0]["c"].get<double>();
      if (last[0]["done"].get<bool>()) break;
    }
    CHECK(cost > 0.0);
    REQUIRE(last.size() == 2);
    CHECK(last[1]["retained"] == false);
    CHECK(f.sink.retained() == 1);

    const auto ts = read_transitions(f.file);
    CHECK_FALSE(ts.empty());
    for (const auto& t : ts) {
      CHECK(t.episode == 0);
      CHECK(t.cost == 0.0);
    }
    CHECK(ts.front().state == es);
  }

  TEST_CASE("recording switched on mid-episode starts at the next reset") {
    Fixture f("teleop_midway");
    f.send({{"type", "reset"}, {"seed", 1}});
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    const auto r = f.send({{"type", "record"}, {"on", true}});
    CHECK(r[0]["msg"].get<std::string>().find("next reset") != std::string::npos);
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    CHECK(f.session.pending_steps() == 0);
    f.send({{"type", "reset"}, {"seed", 2}});
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    CHECK(f.session.pending_steps() == 2);
    f.send({{"type", "discard"}});
    CHECK(f.session.pending_steps() == 0);
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    CHECK(f.session.pending_steps() == 0);
    // An unfinished episode is dropped at reset, with a notice.
    f.send({{"type", "reset"}, {"seed", 3}});
    f.send({{"type", "action"}, {"a", {0.1, 0.1}}});
    const auto rr = f.send({{"type", "reset"}, {"seed", 4}});
    REQUIRE(rr.size() == 2);
    CHECK(rr[0]["type"] == "state");
    CHECK(rr[1]["type"] == "notice");
    CHECK(f.sink.retained() == 0);
  }

  TEST_CASE("teleop episodes mix with scripted ones and feed training") {
    const fs::path dir = scratch_dir("teleop_mixed");
    const fs::path file = dir / "mixed.jsonl";
    save_demos(DemoSet(collect_scripted("toygoal", MapConfig{}, 3, true, 100, 0)), file);
    DemoSink sink(file, true);
    TeleopSession session(make_env("toygoal", MapConfig{}), &sink);
    auto expert = make_env("toygoal", MapConfig{});
    session.handle(R"({"type":"record","on":true})");
    session.handle(R"({"type":"reset","seed":77})");
    expert->reset(77);
    while (!expert->done()) {
      const auto a = expert->expert_action();
      expert->step(a);
      session.handle(json{{"type", "action"}, {"a", a}}.dump());
    }
    REQUIRE(sink.retained() == 1);
    const DemoSet d = load_demos(file, true);
    CHECK(d.episode_count() == 4);
    std::set<std::int64_t> ids;
    for (const auto& t : d.transitions()) ids.insert(t.episode);
    CHECK(ids == std::set<std::int64_t>{0, 1, 2, 3});

    Rig rig = make_rig(1, 200);
    AgentConfig cfg;
    cfg.batch_size = 16;
    Rng rng(1);
    Agent agent(rig.env->spec(), cfg, rng);
    const UpdateBatch b = make_batch(rig.buffer, d, 16, cfg, rng);
    const Diagnostics diag = agent.update(b, rng);
    CHECK(std::isfinite(diag.critic_loss));
  }

  TEST_CASE("WebSocket loopback session") {
    namespace beast = boost::beast;
    namespace websocket = beast::websocket;
    namespace asio = boost::asio;
    const fs::path dir = scratch_dir("teleop_ws");
    DemoSink sink(dir / "ws.jsonl", true);
    std::atomic<bool> stop{false};
    std::promise<std::uint16_t> port;
    std::thread server([&] {
      run_teleop_server("toygoal", MapConfig{}, sink, 0, 0, stop,
                        [&](std::uint16_t p) { port.set_value(p); });
    });
    const std::uint16_t p = port.get_future().get();
    CHECK(p != 0);
    {
      asio::io_context io;
      websocket::stream<asio::ip::tcp::socket> ws(io);
      ws.next_layer().connect({asio::ip::make_address("127.0.0.1"), p});
      ws.handshake("127.0.0.1", "/");
      auto roundtrip = [&](const json& m) {
        ws.write(asio::buffer(m.dump()));
        beast::flat_buffer buf;
        ws.read(buf);
        return json::parse(beast::buffers_to_string(buf.data()));
      };
      const json st = roundtrip({{"type", "reset"}, {"seed", 5}});
      CHECK(st["type"] == "state");
      CHECK(st["done"] == false);
      const json step = roundtrip({{"type", "action"}, {"a", {0.5, -0.5}}});
      CHECK(step["type"] == "state");
      CHECK(step["s"] != st["s"]);
      CHECK(roundtrip({{"type", "nope"}})["type"] == "error");
      ws.close(websocket::close_code::normal);
    }
    stop = true;
    server.join();
  }
}
