#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "safeqil/buffers.hpp"
#include "safeqil/oracle.hpp"

using namespace safeqil;
namespace fs = std::filesystem;

namespace {

Transition make_t(std::int64_t ep, std::int64_t step, double cost, std::vector<double> s = {0.0, 1.0}) {
  Transition t;
  t.state = s;
  t.action = {0.5};
  t.reward = 1.0;
  t.cost = cost;
  t.next_state = {s[0] + 1.0, s[1]};
  t.episode = ep;
  t.step = step;
  return t;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "safeqil_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("buffers") {
  TEST_CASE("single-element buffer is drawn every time") {
    ReplayBuffer b(10);
    b.push(make_t(0, 0, 0.0));
    Rng rng(1);
    auto xs = b.sample(3, rng);
    REQUIRE(xs.size() == 3);
    for (const auto& x : xs) CHECK(x == b.at(0));
  }

  TEST_CASE("sampling is reproducible") {
    ReplayBuffer b(100);
    for (int i = 0; i < 50; ++i) b.push(make_t(0, i, 0.0));
    Rng r1(7), r2(7);
    CHECK(b.sample_indices(200, r1) == b.sample_indices(200, r2));
  }

  TEST_CASE("sampling is uniform") {
    ReplayBuffer b(10);
    for (int i = 0; i < 10; ++i) b.push(make_t(0, i, 0.0));
    Rng rng(11);
    std::vector<int> count(10, 0);
    const int n = 100000;
    for (auto i : b.sample_indices(n, rng)) ++count[i];
    const double p = 0.1, mean = n * p, sd = std::sqrt(n * p * (1 - p));
    double chi2 = 0.0;
    for (int c : count) {
      CHECK(std::abs(c - mean) <= 3 * sd);
      chi2 += (c - mean) * (c - mean) / mean;
    }
    CHECK(chi2 < 27.88);  // chi-square 9 dof, p = 0.001
  }

  TEST_CASE("ring buffer evicts the oldest") {
    ReplayBuffer b(3);
    for (int i = 0; i < 5; ++i) b.push(make_t(0, i, 0.0));
    CHECK(b.size() == 3);
    CHECK(b.at(0).step == 2);
    CHECK(b.at(2).step == 4);
  }

  TEST_CASE("retrieval identity and near alignment") {
    DemoSet d({make_t(0, 0, 0.0, {1.0, 0.0}), make_t(0, 1, 0.0, {0.0, 1.0})});
    double sim = 0.0;
    CHECK(d.retrieve(std::vector<double>{0.0, 1.0}, &sim) == 1);
    CHECK(sim == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d.retrieve(std::vector<double>{1.0, 0.01}) == 0);
  }

  TEST_CASE("retrieval matches an exhaustive scan") {
    Rng rng(13);
    std::normal_distribution<double> n;
    std::vector<Transition> ts;
    std::vector<std::vector<double>> states;
    for (int i = 0; i < 500; ++i) {
      std::vector<double> s{n(rng), n(rng), n(rng)};
      states.push_back(s);
      Transition t = make_t(i / 50, i % 50, 0.0, {0.0, 0.0});
      t.state = s;
      t.next_state = s;
      ts.push_back(t);
    }
    DemoSet d(ts);
    Matrix q(1000, 3);
    for (double& v : q.data) v = n(rng);
    auto idx = d.retrieve_batch(q);
    for (std::size_t i = 0; i < 1000; ++i) {
      std::vector<double> query(q.row(i).begin(), q.row(i).end());
      CHECK(idx[i] == brute_force_retrieve(states, query));
      CHECK(d.retrieve(query) == idx[i]);
    }
  }

  TEST_CASE("cosine similarity zero-vector convention") {
    CHECK(cosine_similarity(std::vector<double>{0.0, 0.0}, std::vector<double>{1.0, 0.0}) == -1.0);
    CHECK(cosine_similarity(std::vector<double>{2.0, 0.0}, std::vector<double>{1.0, 0.0}) == 1.0);
  }

  TEST_CASE("anchor carries the stored next action or reuses its own pair") {
    Transition a = make_t(0, 0, 0.0, {1.0, 0.0});
    Transition b = make_t(0, 1, 0.0, {0.0, 1.0});
    a.next_action = std::vector<double>{0.25};
    b.done = true;
    DemoSet d({a, b});
    Anchor x = d.anchor(0);
    CHECK(x.next_action[0] == 0.25);
    Anchor y = d.anchor(1);
    CHECK(y.next_action[0] == b.action[0]);
    CHECK(y.done);
  }

  TEST_CASE("empty demo file is a valid empty set") {
    auto p = temp_file("empty.jsonl");
    std::ofstream(p).close();
    CHECK(load_demos(p, true).empty());
  }

  TEST_CASE("safe-only filter keeps zero-cost episodes") {
    std::vector<Transition> ts;
    const double costs[] = {0.0, 2.0, 0.0};
    for (int ep = 0; ep < 3; ++ep)
      for (int s = 0; s < 4; ++s) ts.push_back(make_t(ep, s, s == 1 ? costs[ep] : 0.0));
    auto p = temp_file("mixed.jsonl");
    fs::remove(p);
    append_transitions(ts, p);
    DemoSet safe = load_demos(p, true);
    CHECK(safe.episode_count() == 2);
    CHECK(safe.size() == 8);
    CHECK(load_demos(p, false).episode_count() == 3);

    auto single = temp_file("single.jsonl");
    fs::remove(single);
    append_transitions({make_t(0, 0, 0.0), make_t(0, 1, 0.0)}, single);
    CHECK(load_demos(single, true).episode_count() == 1);
  }

  TEST_CASE("demo file round trip is lossless") {
    std::vector<Transition> ts;
    Rng rng(5);
    std::normal_distribution<double> n;
    for (int i = 0; i < 20; ++i) {
      Transition t = make_t(i / 10, i % 10, 0.0, {n(rng), n(rng) * 1e-7});
      t.reward = n(rng) / 3.0;
      if (i % 10 != 9) t.next_action = std::vector<double>{n(rng)};
      else t.done = true;
      ts.push_back(t);
    }
    auto p = temp_file("roundtrip.jsonl");
    save_demos(DemoSet(ts), p);
    CHECK(read_transitions(p) == ts);
  }

  TEST_CASE("malformed lines are reported with their line number") {
    auto p = temp_file("bad.jsonl");
    {
      std::ofstream out(p);
      out << transition_to_json_line(make_t(0, 0, 0.0)) << "\n";
      out << "{not json\n";
    }
    try {
      read_transitions(p);
      FAIL("expected DemoFormatError");
    } catch (const DemoFormatError& e) {
      CHECK(e.line() == 2);
    }
    {
      std::ofstream out(p);
      out << transition_to_json_line(make_t(0, 0, 0.0)) << "\n";
      out << transition_to_json_line(make_t(0, 1, 0.0, {1.0, 2.0, 3.0})) << "\n";
    }
    CHECK_THROWS_AS(read_transitions(p), DemoFormatError);
  }
}
