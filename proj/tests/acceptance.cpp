// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any
// fails. Pass criterion names as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gradient_checks.hpp"
#include "helpers.hpp"
#include "reference_tables.hpp"

using namespace safeqil;
using namespace safeqil::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome gradient_correctness() {
  const double tol = 1e-4;
  double worst[4] = {0, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    worst[0] = std::max(worst[0], critic_fd_error(seed));
    worst[1] = std::max(worst[1], policy_fd_error(seed));
    worst[2] = std::max(worst[2], discriminator_fd_error(seed));
    worst[3] = std::max(worst[3], net_fd_error(seed));
  }
  const bool ok = worst[0] < tol && worst[1] < tol && worst[2] < tol && worst[3] < tol;
  return {ok, "20 instances each, max rel err critic " + fmt("%.2e", worst[0]) + " policy " +
                  fmt("%.2e", worst[1]) + " discriminator " + fmt("%.2e", worst[2]) + " net " +
                  fmt("%.2e", worst[3]) + " (tol 1e-4)"};
}

Outcome sac_reduction() {
  Rig rig = make_rig(10, 1000);
  double worst = 0.0;
  bool gates_ok = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    AgentConfig cfg;
    cfg.forced_gate = 1.0;
    Rng rng(seed);
    Agent agent(rig.env->spec(), cfg, rng);
    const UpdateBatch b = make_batch(rig.buffer, rig.demos, 64, cfg, rng);
    const CriticTargets t = agent.compute_targets(b, rng);
    for (double g : t.gate) gates_ok = gates_ok && g == 1.0;
    const CriticPair& cr = agent.critics();
    std::vector<double> g1(cr.online[0].num_params(), 0.0), g2(g1.size(), 0.0);
    critic_loss(cr, b, t, Ablation{}, g1, g2);
    const double inv = 1.0 / (2.0 * b.size());
    for (std::size_t j = 0; j < 2; ++j) {
      // SAC regression on B plus demonstration regression on D, by hand.
      const DenseNet& net = cr.online[j];
      ForwardTrace tb, td;
      net.forward(concat_columns(b.s_B, b.a_B), tb);
      net.forward(concat_columns(b.s_D, b.a_D), td);
      Matrix gb(b.size(), 1), gd(b.size(), 1);
      for (std::size_t i = 0; i < b.size(); ++i) {
        gb(i, 0) = inv * 2.0 * (tb.output()(i, 0) - t.sac[i]);
        gd(i, 0) = inv * 2.0 * (td.output()(i, 0) - t.demo[i]);
      }
      std::vector<double> ref(net.num_params(), 0.0);
      net.backward(tb, gb, ref, nullptr);
      net.backward(td, gd, ref, nullptr);
      const auto& got = j == 0 ? g1 : g2;
      for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(got[k] - ref[k]));
    }
  }
  return {gates_ok && worst <= 1e-12,
          "5 frozen batches of 64, max elementwise diff " + fmt("%.2e", worst) + " (tol 1e-12)"};
}

Outcome theorem_oracle() {
  Rng rng(2024);
  std::size_t violations = 0, hypothesis = 0, pairs = 0;
  for (int k = 0; k < 200; ++k) {
    const TheoremInstance inst = random_theorem_instance(rng);
    const TheoremReport r = verify_theorem(inst.mdp, inst.policy, inst.demo_policy);
    violations += r.violations.size();
    hypothesis += !r.hypotheses_hold;
    pairs += r.checked_pairs;
  }
  const TheoremInstance neg = positive_penalty_instance();
  const TheoremReport nr = verify_theorem(neg.mdp, neg.policy, neg.demo_policy);
  const TheoremInstance grid = grid_theorem_instance(MapConfig{}, 10, 0.9);
  const TheoremReport gr = verify_theorem(grid.mdp, grid.policy, grid.demo_policy);
  const bool ok = violations == 0 && hypothesis == 0 && pairs > 0 && !nr.violations.empty() &&
                  gr.violations.empty();
  return {ok, "200 instances, " + std::to_string(pairs) + " pairs, " +
                  std::to_string(violations) + " violations; negative control " +
                  std::to_string(nr.violations.size()) + " violations; gridworld " +
                  std::to_string(gr.violations.size())};
}

Outcome retrieval_oracle() {
  Rng rng(77);
  std::uniform_int_distribution<int> rows(1, 24), dims(1, 5), small(-2, 2), kind(0, 3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::size_t mismatches = 0, zero_cases = 0, tie_cases = 0;
  for (int inst = 0; inst < 10000; ++inst) {
    const std::size_t m = rows(rng), d = dims(rng);
    const int k = kind(rng);
    // Kinds: gaussian, small integers (many exact ties), gaussian with zero
    // rows and duplicates, zero query.
    auto draw = [&] { return k == 1 ? double(small(rng)) : n(rng); };
    std::vector<std::vector<double>> states(m, std::vector<double>(d));
    for (auto& s : states)
      for (double& v : s) v = draw();
    if (k == 2) {
      states[rng() % m].assign(d, 0.0);
      states[rng() % m] = states[rng() % m];
    }
    std::vector<double> q(d);
    for (double& v : q) v = draw();
    if (k == 3) q.assign(d, 0.0);
    std::vector<Transition> ts;
    for (std::size_t i = 0; i < m; ++i) {
      Transition t;
      t.state = states[i];
      t.action = {0.0};
      t.next_state = states[i];
      t.episode = 0;
      t.step = std::int64_t(i);
      ts.push_back(t);
    }
    const DemoSet demos(std::move(ts));
    const std::size_t want = brute_force_retrieve(states, q);
    const Anchor a = demos.retrieve_anchor(q);
    if (a.index != want || demos.retrieve(q) != want) ++mismatches;
    bool zero = k == 3;
    for (const auto& s : states) zero = zero || std::all_of(s.begin(), s.end(), [](double v) { return v == 0.0; });
    zero_cases += zero;
    std::set<std::vector<double>> distinct(states.begin(), states.end());
    tie_cases += distinct.size() < states.size() || k == 1;
  }
  return {mismatches == 0, "10000 instances (" + std::to_string(zero_cases) + " with zero vectors, " +
                               std::to_string(tie_cases) + " with ties), " +
                               std::to_string(mismatches) + " mismatches"};
}

Outcome tradeoff_tables() {
  const TableCheck t = check_tables();
  std::string detail = std::to_string(t.cells) + " cells, 8 winners";
  bool ok = t.unattainable.empty() && t.winners.empty();
  for (const auto& w : t.winners) detail += "; " + w;
  for (const auto& u : t.unattainable) detail += "; not reproducible: " + u;
  if (!t.exact_mismatch.empty()) {
    detail += "; " + std::to_string(t.exact_mismatch.size()) +
              " cells match only within the rounding of their printed inputs:";
    for (const auto& m : t.exact_mismatch) detail += " [" + m + "]";
  }
  return {ok, detail};
}

struct E2E {
  double reward = 0.0;
  double cost = 0.0;
};

E2E train_and_eval(Mode mode, const DemoSet& demos, std::uint64_t seed) {
  RunConfig rc;
  rc.agent.mode = mode;
  MapConfig map;
  Trainer tr(make_env("toygoal", map), rc.agent, mode == Mode::sac ? DemoSet{} : demos, seed);
  for (std::size_t s = 0; s < 50'000; ++s) tr.train_step();
  auto env = make_env("toygoal", map);
  const RunStats st = evaluate(tr.agent().actor(), *env, rc.eval_episodes, 1, "x");
  return {st.reward_mean, st.cost_mean};
}

Outcome end_to_end() {
  const DemoSet demos(collect_scripted("toygoal", MapConfig{}, 40, true, 1000, 0));
  double demo_cost = 0.0;
  for (const auto& t : demos.transitions()) demo_cost += t.cost;
  E2E q, s;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const E2E a = train_and_eval(Mode::safeqil, demos, seed);
    const E2E b = train_and_eval(Mode::sac, demos, seed);
    q.reward += a.reward / 3;
    q.cost += a.cost / 3;
    s.reward += b.reward / 3;
    s.cost += b.cost / 3;
    per_seed += " seed" + std::to_string(seed) + " SafeQIL(" + fmt("%.2f", a.reward) + "," +
                fmt("%.2f", a.cost) + ") SAC(" + fmt("%.2f", b.reward) + "," + fmt("%.2f", b.cost) + ")";
  }
  const bool ok = demo_cost == 0.0 && q.reward > 0.0 && q.cost <= 0.5 * s.cost;
  return {ok, "50k steps x 3 seeds, 40 eval episodes: SafeQIL reward " + fmt("%.2f", q.reward) +
                  " cost " + fmt("%.2f", q.cost) + ", SAC reward " + fmt("%.2f", s.reward) +
                  " cost " + fmt("%.2f", s.cost) + ";" + per_seed};
}

Outcome ablation_orthogonality() {
  Rig rig = make_rig(10, 1000);
  static const char* names[] = {"anchor_similarity", "max_clip", "constraint", "ood", "demo", "sac"};
  std::string bad;
  for (std::size_t v = 0; v < kVariants.size(); ++v) {
    AgentConfig cfg;
    cfg.ablation = Ablation::from_variant(kVariants[v]);
    Rng init(8);
    Agent agent(rig.env->spec(), cfg, init);
    Rng rng(9);
    const UpdateBatch b = make_batch(rig.buffer, rig.demos, 64, cfg, rng);
    const CriticTargets t = agent.compute_targets(b, rng);
    const Diagnostics d = agent.evaluate(b, t);
    const double c[6] = {d.anchor_similarity, d.terms.max_clip, d.terms.constraint,
                         d.terms.ood, d.terms.demo, d.terms.sac};
    for (std::size_t k = 0; k < 6; ++k) {
      const bool own = v == k + 1;
      if (own != (c[k] == 0.0))
        bad += std::string(" ") + std::string(kVariants[v]) + ":" + names[k] + "=" + fmt("%.3g", c[k]);
    }
  }
  return {bad.empty(), bad.empty() ? "7 variants x 6 components on a frozen batch"
                                   : "unexpected components:" + bad};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  const fs::path dir = scratch_dir("acceptance_determinism");
  const fs::path demos = dir / "demos.jsonl";
  save_demos(DemoSet(collect_scripted("toygoal", MapConfig{}, 40, true, 1000, 0)), demos);
  RunConfig c;
  c.demos = demos.string();
  c.seed = 11;
  c.total_steps = 6000;
  cmd_train(c, dir / "a");
  cmd_train(c, dir / "b");
  const std::string a = slurp(dir / "a" / "log.csv"), b = slurp(dir / "b" / "log.csv");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {!a.empty() && a == b, "two 6000-step runs, log.csv " + std::to_string(a.size()) +
                                    " bytes, " + std::to_string(lines) + " lines, " +
                                    (a == b ? "identical" : "different")};
}

Outcome discriminator_sanity() {
  Rng rng(4);
  DiscriminatorConfig cfg;
  Discriminator d(2, cfg, rng);
  auto cloud = [&](double cx, std::size_t n) {
    Matrix m = normal_matrix(n, 2, rng, 0.5);
    for (std::size_t i = 0; i < n; ++i) {
      m(i, 0) += cx;
      m(i, 1) += cx;
    }
    return m;
  };
  for (int step = 0; step < 2000; ++step) d.update(cloud(-2.0, 64), cloud(2.0, 64), rng);
  const Matrix demo = cloud(2.0, 500), far = cloud(-2.0, 500);
  int correct = 0;
  for (double g : d.gate_batch(demo)) correct += g > 0.5;
  for (double g : d.gate_batch(far)) correct += g < 0.5;
  const double acc = correct / 1000.0;

  Discriminator e(4, cfg, rng);
  const Matrix x = normal_matrix(1000, 4, rng, 2.0);
  const auto gate = e.gate_batch(x);
  const auto reward = e.safety_reward_batch(x);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < 1000; ++i) exact += reward[i] == std::log(gate[i]);
  return {acc >= 0.95 && exact == 1000, "accuracy " + fmt("%.3f", acc) +
                                            " after 2000 updates; log(gate) exact on " +
                                            std::to_string(exact) + "/1000 states"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient_correctness", gradient_correctness},
      {"sac_reduction", sac_reduction},
      {"theorem_oracle", theorem_oracle},
      {"retrieval_oracle", retrieval_oracle},
      {"tradeoff_tables", tradeoff_tables},
      {"end_to_end_safety", end_to_end},
      {"ablation_orthogonality", ablation_orthogonality},
      {"determinism", determinism},
      {"discriminator_sanity", discriminator_sanity},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
