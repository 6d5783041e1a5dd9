#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <cmath>
#include <deque>

#include "safeqil/runtime.hpp"

namespace safeqil {

namespace fs = std::filesystem;

DemoSink::DemoSink(fs::path path, bool safe_only) : path_(std::move(path)), safe_only_(safe_only) {
  if (fs::exists(path_)) {
    for (const auto& t : read_transitions(path_))
      next_episode_ = std::max(next_episode_, t.episode + 1);
  }
}

bool DemoSink::offer(std::vector<Transition> episode) {
  if (episode.empty()) return false;
  double cost = 0.0;
  for (const auto& t : episode) cost += t.cost;
  if (safe_only_ && cost > 0.0) return false;
  std::lock_guard lock(mutex_);
  link_next_actions(episode);
  for (std::size_t i = 0; i < episode.size(); ++i) {
    episode[i].episode = next_episode_;
    episode[i].step = static_cast<std::int64_t>(i);
  }
  append_transitions(episode, path_);
  ++next_episode_;
  ++retained_;
  return true;
}

std::size_t DemoSink::retained() const {
  std::lock_guard lock(mutex_);
  return retained_;
}

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json hazards = nlohmann::json::array();
  for (const auto& h : scene.hazards) hazards.push_back({h[0], h[1], h[2]});
  return {{"agent", {scene.agent[0], scene.agent[1]}},
          {"goal", {scene.goal[0], scene.goal[1]}},
          {"hazards", hazards},
          {"boundary", scene.boundary ? nlohmann::json(*scene.boundary) : nlohmann::json(nullptr)},
          {"episode_cost", scene.episode_cost},
          {"episode_reward", scene.episode_reward},
          {"bounds", {scene.bounds[0], scene.bounds[1], scene.bounds[2], scene.bounds[3]}}};
}

TeleopSession::TeleopSession(std::unique_ptr<Env> env, DemoSink* sink)
    : env_(std::move(env)), sink_(sink) {}

nlohmann::json TeleopSession::state_message(double r, double c, bool done) const {
  return {{"type", "state"}, {"s", state_},   {"r", r},
          {"c", c},          {"done", done},  {"scene", scene_to_json(env_->scene())}};
}

nlohmann::json TeleopSession::error(const std::string& msg) const {
  return {{"type", "error"}, {"msg", msg}};
}

namespace {
nlohmann::json notice(const std::string& msg) { return {{"type", "notice"}, {"msg", msg}}; }
}  // namespace

std::vector<nlohmann::json> TeleopSession::handle(const std::string& message) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(message);
  } catch (const nlohmann::json::exception& e) {
    return {error(std::string("malformed JSON: ") + e.what())};
  }
  if (!m.is_object() || !m.contains("type") || !m["type"].is_string())
    return {error("message must be an object with a string \"type\"")};
  const std::string type = m["type"].get<std::string>();

  if (type == "reset") {
    if (!m.contains("seed") || !m["seed"].is_number_integer() ||
        (m["seed"].is_number_integer() && !m["seed"].is_number_unsigned() &&
         m["seed"].get<std::int64_t>() < 0))
      return {error("reset needs a non-negative integer \"seed\"")};
    std::vector<nlohmann::json> out;
    if (!episode_.empty()) {
      out.push_back(notice("unfinished episode discarded (" + std::to_string(episode_.size()) +
                           " steps)"));
      episode_.clear();
    }
    state_ = env_->reset(m["seed"].get<std::uint64_t>());
    started_ = true;
    capturing_ = recording_;
    out.insert(out.begin(), state_message(0.0, 0.0, false));
    return out;
  }

  if (type == "action") {
    if (!m.contains("a") || !m["a"].is_array()) return {error("action needs an array \"a\"")};
    const std::size_t dim = env_->spec().action_dim;
    if (m["a"].size() != dim)
      return {error("action must have " + std::to_string(dim) + " entries")};
    std::vector<double> a;
    for (const auto& v : m["a"]) {
      if (!v.is_number()) return {error("action entries must be numbers")};
      a.push_back(v.get<double>());
      if (!std::isfinite(a.back())) return {error("action entries must be finite")};
    }
    if (!started_ || env_->done()) return {error("episode is done; send reset")};
    StepResult r = env_->step(a);
    if (capturing_) {
      Transition t;
      t.state = state_;
      t.action = a;
      t.reward = r.reward;
      t.cost = r.cost;
      t.next_state = r.next_state;
      t.done = r.terminal;
      t.step = static_cast<std::int64_t>(episode_.size());
      episode_.push_back(std::move(t));
    }
    state_ = r.next_state;
    std::vector<nlohmann::json> out{state_message(r.reward, r.cost, r.done)};
    if (r.done && capturing_) {
      double cost = 0.0;
      for (const auto& t : episode_) cost += t.cost;
      const bool kept = sink_->offer(std::move(episode_));
      episode_.clear();
      capturing_ = false;
      nlohmann::json n = notice(kept ? "episode appended"
                                     : "episode dropped: cost " + std::to_string(cost) + " > 0");
      n["retained"] = kept;
      out.push_back(n);
    }
    return out;
  }

  if (type == "record") {
    if (!m.contains("on") || !m["on"].is_boolean()) return {error("record needs a boolean \"on\"")};
    if (!sink_) return {error("this session has no demo file")};
    recording_ = m["on"].get<bool>();
    if (!recording_) {
      const std::size_t dropped = episode_.size();
      episode_.clear();
      capturing_ = false;
      return {notice("recording off; " + std::to_string(dropped) + " pending steps discarded")};
    }
    // Episodes are recorded from their first step only.
    if (started_ && !env_->done() && env_->steps() == 0) capturing_ = true;
    return {notice(capturing_ ? "recording on"
                              : "recording on; capture starts at the next reset")};
  }

  if (type == "discard") {
    const std::size_t dropped = episode_.size();
    episode_.clear();
    capturing_ = false;
    return {notice("discarded " + std::to_string(dropped) + " steps")};
  }

  return {error("unknown message type \"" + type + "\"")};
}

namespace {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace asio = boost::asio;
using tcp = asio::ip::tcp;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(tcp::socket socket, std::unique_ptr<Env> env, DemoSink* sink)
      : ws_(std::move(socket)), session_(std::move(env), sink) {}

  void start() {
    ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->read();
    });
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      const std::string msg = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      for (const auto& r : self->session_.handle(msg)) self->pending_.push_back(r.dump());
      self->write_next();
    });
  }

  // Responses go out in order; the next request is read only afterwards, so
  // a session never has more than one step in flight.
  void write_next() {
    if (pending_.empty()) {
      read();
      return;
    }
    ws_.text(true);
    ws_.async_write(asio::buffer(pending_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return;
                      self->pending_.pop_front();
                      self->write_next();
                    });
  }

  websocket::stream<tcp::socket> ws_;
  beast::flat_buffer buffer_;
  TeleopSession session_;
  std::deque<std::string> pending_;
};

}  // namespace

void run_teleop_server(const std::string& env_id, const MapConfig& map, DemoSink& sink,
                       std::uint16_t port, std::size_t target_episodes, std::atomic<bool>& stop,
                       const std::function<void(std::uint16_t)>& on_listen) {
  make_env(env_id, map);  // validates the id before binding
  asio::io_context io;
  tcp::acceptor acceptor(io, tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
  if (on_listen) on_listen(acceptor.local_endpoint().port());

  std::function<void()> accept = [&] {
    acceptor.async_accept([&](beast::error_code ec, tcp::socket socket) {
      if (!ec)
        std::make_shared<Connection>(std::move(socket), make_env(env_id, map), &sink)->start();
      accept();
    });
  };
  accept();
  while (!stop.load() && (target_episodes == 0 || sink.retained() < target_episodes)) {
    io.run_for(std::chrono::milliseconds(50));
    if (io.stopped()) io.restart();
  }
}

}  // namespace safeqil

namespace safeqil {

std::size_t cmd_collect(const CollectOptions& o) {
  if (o.episodes == 0) throw std::invalid_argument("episodes must be >= 1");
  if (o.out.empty()) throw std::invalid_argument("collect needs an output file");
  if (o.mode == "scripted") {
    auto ts = collect_scripted(o.env, o.map, o.episodes, o.safe_only, o.attempt_cap, o.seed);
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    save_demos(DemoSet(std::move(ts)), o.out);
    return o.episodes;
  }
  if (o.mode == "teleop") {
    if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
    DemoSink sink(o.out, o.safe_only);
    std::atomic<bool> never{false};
    run_teleop_server(o.env, o.map, sink, o.port, o.episodes, o.stop ? *o.stop : never,
                      o.on_listen);
    return sink.retained();
  }
  throw std::invalid_argument("collect mode must be scripted or teleop, got \"" + o.mode + "\"");
}

}  // namespace safeqil
