#include "safeqil/buffers.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "safeqil/kernels.hpp"

namespace safeqil {

// ----------------------------------------------------------- ReplayBuffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
    return;
  }
  items_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay buffer index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i : sample_indices(n, rng)) out.push_back(at(i));
  return out;
}

// ---------------------------------------------------------------- DemoSet

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return -1.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

DemoSet::DemoSet(std::vector<Transition> transitions)
    : transitions_(std::move(transitions)) {
  if (!transitions_.empty()) {
    state_dim_ = transitions_.front().state.size();
    action_dim_ = transitions_.front().action.size();
  }
  for (std::size_t i = 0; i < transitions_.size(); ++i) {
    const Transition& t = transitions_[i];
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ ||
        t.action.size() != action_dim_ ||
        (t.next_action && t.next_action->size() != action_dim_))
      throw DimensionError("demonstration transition " + std::to_string(i) +
                           " has inconsistent dimensions");
  }
  rebuild();
}

std::size_t DemoSet::episode_count() const {
  std::set<std::int64_t> ids;
  for (const auto& t : transitions_) ids.insert(t.episode);
  return ids.size();
}

void DemoSet::set_standardize(bool on) {
  if (on == standardize_) return;
  standardize_ = on;
  rebuild();
}

void DemoSet::project(std::span<const double> in, std::span<double> out) const {
  if (!standardize_) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  for (std::size_t j = 0; j < in.size(); ++j) out[j] = (in[j] - mean_[j]) * scale_[j];
}

void DemoSet::rebuild() {
  const std::size_t n = transitions_.size();
  mean_.assign(state_dim_, 0.0);
  scale_.assign(state_dim_, 1.0);
  if (standardize_ && n > 0) {
    std::vector<double> var(state_dim_, 0.0);
    for (const auto& t : transitions_)
      for (std::size_t j = 0; j < state_dim_; ++j) mean_[j] += t.state[j];
    for (double& m : mean_) m /= static_cast<double>(n);
    for (const auto& t : transitions_)
      for (std::size_t j = 0; j < state_dim_; ++j)
        var[j] += (t.state[j] - mean_[j]) * (t.state[j] - mean_[j]);
    for (std::size_t j = 0; j < state_dim_; ++j) {
      const double sd = std::sqrt(var[j] / static_cast<double>(n));
      scale_[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }
  states_.resize(n, state_dim_);
  norms_.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    project(transitions_[i].state, states_.row(i));
    double sq = 0.0;
    for (double v : states_.row(i)) sq += v * v;
    norms_[i] = std::sqrt(sq);
  }
}

std::vector<std::size_t> DemoSet::retrieve_batch(const Matrix& queries,
                                                 std::vector<double>* similarity) const {
  if (transitions_.empty()) throw std::logic_error("retrieval from an empty demonstration set");
  if (queries.cols != state_dim_)
    throw DimensionError("query has dimension " + std::to_string(queries.cols) +
                         ", demonstrations have " + std::to_string(state_dim_));
  const std::size_t n = transitions_.size();
  const std::size_t nq = queries.rows;
  Matrix projected(nq, state_dim_);
  std::vector<double> qnorm(nq);
  for (std::size_t q = 0; q < nq; ++q) {
    project(queries.row(q), projected.row(q));
    double sq = 0.0;
    for (double v : projected.row(q)) sq += v * v;
    qnorm[q] = std::sqrt(sq);
  }
  std::vector<std::size_t> best(nq, 0);
  if (similarity) similarity->assign(nq, -1.0);

  constexpr std::size_t kChunk = 64;
  std::vector<double> dots(std::min(nq, kChunk) * n);
  const auto& k = kernels::active();
  for (std::size_t q0 = 0; q0 < nq; q0 += kChunk) {
    const std::size_t rows = std::min(kChunk, nq - q0);
    k.gemm_nt(rows, n, state_dim_, projected.data.data() + q0 * state_dim_,
              states_.data.data(), dots.data(), false);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t q = q0 + r;
      double best_sim = -1.0;
      std::size_t best_i = 0;
      if (qnorm[q] > 0.0) {
        const double* d = dots.data() + r * n;
        bool first = true;
        for (std::size_t i = 0; i < n; ++i) {
          const double sim = norms_[i] > 0.0 ? d[i] / (qnorm[q] * norms_[i]) : -1.0;
          if (first || sim > best_sim) {
            best_sim = sim;
            best_i = i;
            first = false;
          }
        }
      }
      best[q] = best_i;
      if (similarity) (*similarity)[q] = best_sim;
    }
  }
  return best;
}

std::size_t DemoSet::retrieve(std::span<const double> query, double* similarity) const {
  Matrix q(1, query.size());
  q.set_row(0, query);
  std::vector<double> sim;
  const auto idx = retrieve_batch(q, &sim);
  if (similarity) *similarity = sim[0];
  return idx[0];
}

Anchor DemoSet::anchor(std::size_t i, double similarity) const {
  const Transition& t = transitions_.at(i);
  Anchor a;
  a.index = i;
  a.similarity = similarity;
  a.state = t.state;
  a.action = t.action;
  a.reward = t.reward;
  a.done = t.done;
  if (t.next_action) {
    a.next_state = t.next_state;
    a.next_action = *t.next_action;
  } else {
    a.next_state = t.state;
    a.next_action = t.action;
  }
  return a;
}

Anchor DemoSet::retrieve_anchor(std::span<const double> query) const {
  double sim = -1.0;
  const std::size_t i = retrieve(query, &sim);
  return anchor(i, sim);
}

// ------------------------------------------------------------- file format

std::string transition_to_json_line(const Transition& t) {
  nlohmann::json j = {{"ep", t.episode},
                      {"t", t.step},
                      {"s", t.state},
                      {"a", t.action},
                      {"r", t.reward},
                      {"c", t.cost},
                      {"s_next", t.next_state},
                      {"a_next", nullptr},
                      {"done", t.done}};
  if (t.next_action) j["a_next"] = *t.next_action;
  return j.dump();
}

namespace {

std::vector<double> number_array(const nlohmann::json& j, const char* key,
                                 std::size_t line) {
  if (!j.contains(key)) throw DemoFormatError(std::string("missing key \"") + key + "\"", line);
  const auto& v = j.at(key);
  if (!v.is_array()) throw DemoFormatError(std::string("\"") + key + "\" must be an array", line);
  std::vector<double> out;
  for (const auto& x : v) {
    if (!x.is_number())
      throw DemoFormatError(std::string("\"") + key + "\" must contain numbers", line);
    out.push_back(x.get<double>());
  }
  return out;
}

double number(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j.at(key).is_number())
    throw DemoFormatError(std::string("\"") + key + "\" must be a number", line);
  return j.at(key).get<double>();
}

}  // namespace

Transition transition_from_json_line(const std::string& text, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DemoFormatError(std::string("invalid JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw DemoFormatError("expected a JSON object", line);
  Transition t;
  if (!j.contains("ep") || !j.at("ep").is_number_integer())
    throw DemoFormatError("\"ep\" must be an integer", line);
  if (!j.contains("t") || !j.at("t").is_number_integer())
    throw DemoFormatError("\"t\" must be an integer", line);
  t.episode = j.at("ep").get<std::int64_t>();
  t.step = j.at("t").get<std::int64_t>();
  t.state = number_array(j, "s", line);
  t.action = number_array(j, "a", line);
  t.reward = number(j, "r", line);
  t.cost = number(j, "c", line);
  t.next_state = number_array(j, "s_next", line);
  if (!j.contains("a_next")) throw DemoFormatError("missing key \"a_next\"", line);
  if (!j.at("a_next").is_null()) t.next_action = number_array(j, "a_next", line);
  if (!j.contains("done") || !j.at("done").is_boolean())
    throw DemoFormatError("\"done\" must be a boolean", line);
  t.done = j.at("done").get<bool>();
  return t;
}

std::vector<Transition> read_transitions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open demonstration file " + path.string());
  std::vector<Transition> out;
  std::string text;
  std::size_t line = 0;
  std::size_t sdim = 0, adim = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Transition t = transition_from_json_line(text, line);
    if (out.empty()) {
      sdim = t.state.size();
      adim = t.action.size();
    }
    if (t.state.size() != sdim || t.next_state.size() != sdim ||
        t.action.size() != adim || (t.next_action && t.next_action->size() != adim))
      throw DemoFormatError("dimensions differ from earlier transitions", line);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Transition> filter_safe_episodes(const std::vector<Transition>& ts) {
  std::map<std::int64_t, double> episode_cost;
  for (const auto& t : ts) episode_cost[t.episode] += t.cost;
  std::vector<Transition> out;
  for (const auto& t : ts)
    if (episode_cost[t.episode] <= 0.0) out.push_back(t);
  return out;
}

DemoSet load_demos(const std::filesystem::path& path, bool safe_only) {
  auto ts = read_transitions(path);
  if (safe_only) ts = filter_safe_episodes(ts);
  return DemoSet(std::move(ts));
}

void save_demos(const DemoSet& demos, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write demonstration file " + path.string());
  for (const auto& t : demos.transitions()) out << transition_to_json_line(t) << '\n';
}

void append_transitions(const std::vector<Transition>& ts,
                        const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to demonstration file " + path.string());
  for (const auto& t : ts) out << transition_to_json_line(t) << '\n';
}

}  // namespace safeqil
