#pragma once

// Rollout replay buffer, demonstration set with cosine-similarity anchor
// retrieval, and the JSON Lines demonstration file format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "safeqil/numerics.hpp"

namespace safeqil {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  double cost = 0.0;  // evaluation and filtering only
  std::vector<double> next_state;
  std::optional<std::vector<double>> next_action;
  bool done = false;  // true termination: no bootstrap past this step
  std::int64_t episode = 0;
  std::int64_t step = 0;

  bool operator==(const Transition&) const = default;
};

/// Fixed-capacity FIFO ring of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1'000'000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  /// i = 0 is the oldest retained transition.
  const Transition& at(std::size_t i) const;

  /// n uniform draws with replacement, as positions accepted by at().
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
  std::vector<Transition> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t head_ = 0;  // oldest element once full
};

/// Demonstration transition used as a local value bound for a rollout state.
struct Anchor {
  std::size_t index = 0;
  double similarity = -1.0;
  std::span<const double> state;
  std::span<const double> action;
  double reward = 0.0;
  std::span<const double> next_state;
  std::span<const double> next_action;
  bool done = false;
};

class DemoSet {
 public:
  DemoSet() = default;
  explicit DemoSet(std::vector<Transition> transitions);

  std::size_t size() const { return transitions_.size(); }
  bool empty() const { return transitions_.empty(); }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t action_dim() const { return action_dim_; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  const Transition& at(std::size_t i) const { return transitions_[i]; }
  std::size_t episode_count() const;

  /// Retrieval space: raw states, or per-dimension standardized states.
  const Matrix& state_matrix() const { return states_; }
  std::span<const double> norms() const { return norms_; }
  void set_standardize(bool on);
  bool standardized() const { return standardize_; }

  /// Index of the stored state with the largest cosine similarity to the
  /// query; lowest index on ties. Pairs involving a zero vector score -1.
  std::size_t retrieve(std::span<const double> query, double* similarity = nullptr) const;
  std::vector<std::size_t> retrieve_batch(const Matrix& queries,
                                          std::vector<double>* similarity = nullptr) const;

  /// Transition i as an anchor. Without a stored next action the anchor
  /// reuses its own (state, action) as the next pair.
  Anchor anchor(std::size_t i, double similarity = -1.0) const;
  Anchor retrieve_anchor(std::span<const double> query) const;

 private:
  void rebuild();
  void project(std::span<const double> in, std::span<double> out) const;

  std::vector<Transition> transitions_;
  std::size_t state_dim_ = 0;
  std::size_t action_dim_ = 0;
  bool standardize_ = false;
  std::vector<double> mean_;
  std::vector<double> scale_;
  Matrix states_;
  std::vector<double> norms_;
};

/// Cosine similarity with the zero-vector convention used by retrieval.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

class DemoFormatError : public std::runtime_error {
 public:
  DemoFormatError(const std::string& msg, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::string transition_to_json_line(const Transition& t);
Transition transition_from_json_line(const std::string& line, std::size_t line_number);

/// Reads a JSON Lines demonstration file. safe_only drops every episode whose
/// total cost is positive.
DemoSet load_demos(const std::filesystem::path& path, bool safe_only);
std::vector<Transition> read_transitions(const std::filesystem::path& path);
void save_demos(const DemoSet& demos, const std::filesystem::path& path);
void append_transitions(const std::vector<Transition>& ts,
                        const std::filesystem::path& path);

/// Drops episodes with positive total cost; keeps the input order.
std::vector<Transition> filter_safe_episodes(const std::vector<Transition>& ts);

}  // namespace safeqil
