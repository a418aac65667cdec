#include "fbrl/dataset.hpp"

#include "test_util.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <map>

using namespace fbrl;
using namespace fbrl::data;

TEST_SUITE_BEGIN("dataset");

TEST_CASE("sticky policy: repeat_prob 0 is uniform") {
  Rng rng(42);
  std::vector<long> counts(4, 0);
  std::optional<int> last;
  for (int i = 0; i < 10000; ++i) {
    int a = sticky_random_policy(rng, 0.0, last);
    last = a;
    counts[static_cast<std::size_t>(a)] += 1;
  }
  double chi2 = testutil::chi_square(counts, {2500, 2500, 2500, 2500});
  CHECK(chi2 < testutil::chi2_crit_99(3));
}

TEST_CASE("sticky policy: repeat frequency matches repeat_prob") {
  Rng rng(43);
  int repeats = 0;
  std::optional<int> last = 1;
  for (int i = 0; i < 10000; ++i) {
    int a = sticky_random_policy(rng, 0.9, last);
    // a uniform draw can also repeat by chance; count exact repeats
    if (a == *last) ++repeats;
    last = a;
  }
  // P(repeat) = 0.9 + 0.1 * 0.25
  CHECK(std::abs(repeats / 10000.0 - 0.925) < 0.02);
}

TEST_CASE("sticky policy: first call is uniform and valid") {
  std::vector<long> counts(4, 0);
  for (std::uint64_t s = 0; s < 4000; ++s) {
    Rng rng(s);
    int a = sticky_random_policy(rng, 0.99, std::nullopt);
    REQUIRE(a >= 0);
    REQUIRE(a < 4);
    counts[static_cast<std::size_t>(a)] += 1;
  }
  double chi2 = testutil::chi_square(counts, {1000, 1000, 1000, 1000});
  CHECK(chi2 < testutil::chi2_crit_99(3));
  Rng rng(0);
  CHECK_THROWS_AS(sticky_random_policy(rng, 1.0, std::nullopt), std::invalid_argument);
}

TEST_CASE("collection arithmetic matches the declared table rows") {
  Dataset d30 = collect_dataset(envs::EnvFamily::FourRooms, 30, 250, 100,
                                PolicySpec::uniform(), 7);
  CHECK(d30.manifest.total_transitions == 750000);
  Dataset d10 = collect_dataset(envs::EnvFamily::FourRooms, 10, 1000, 100,
                                PolicySpec::uniform(), 7);
  CHECK(d10.manifest.total_transitions == 1000000);
}

TEST_CASE("every collected episode re-simulates under the recorded layout") {
  Dataset d = collect_dataset(envs::EnvFamily::Doors, 5, 20, 60, PolicySpec::sticky(0.4), 3);
  CHECK(audit_dynamics(d));
  Dataset pm = collect_dataset(envs::EnvFamily::PointmassMaze, 3, 10, 100,
                               PolicySpec::sticky(0.5), 5);
  CHECK(audit_dynamics(pm));
}

TEST_CASE("collection is deterministic") {
  Dataset a = collect_dataset(envs::EnvFamily::FourRooms, 4, 10, 50, PolicySpec::uniform(), 11);
  Dataset b = collect_dataset(envs::EnvFamily::FourRooms, 4, 10, 50, PolicySpec::uniform(), 11);
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    CHECK(a.episodes[i].layout_seed == b.episodes[i].layout_seed);
    CHECK(a.episodes[i].actions == b.episodes[i].actions);
    CHECK(a.episodes[i].obs == b.episodes[i].obs);
  }
}

TEST_CASE("batch sampling on a single-transition dataset repeats that row") {
  Dataset d = collect_dataset(envs::EnvFamily::FourRooms, 1, 1, 1, PolicySpec::uniform(), 0);
  Rng rng(1);
  Batch b = sample_batch(d, 16, rng);
  for (int i = 1; i < 16; ++i) {
    CHECK(b.s.row(i) == b.s.row(0));
    CHECK(b.s_next.row(i) == b.s_next.row(0));
    CHECK(b.a[i] == b.a[0]);
    CHECK(b.s_anchor.row(i) == b.s_anchor.row(0));
  }
}

TEST_CASE("anchor marginal matches the next-state histogram") {
  Dataset d = collect_dataset(envs::EnvFamily::FourRooms, 3, 30, 80, PolicySpec::uniform(), 9);
  std::map<std::pair<double, double>, double> hist;
  for (const auto& ep : d.episodes)
    for (int t = 1; t < ep.obs.rows(); ++t)
      hist[{ep.obs(t, 0), ep.obs(t, 1)}] += 1.0;
  for (auto& [k, v] : hist) v /= static_cast<double>(d.manifest.total_transitions);

  Rng rng(4);
  std::map<std::pair<double, double>, double> sampled;
  const int n = 100000;
  for (int i = 0; i < n / 100; ++i) {
    Batch b = sample_batch(d, 100, rng);
    for (int j = 0; j < 100; ++j) sampled[{b.s_anchor(j, 0), b.s_anchor(j, 1)}] += 1.0;
  }
  double tv = 0.0;
  for (auto& [k, p] : hist) {
    double q = sampled.count(k) ? sampled[k] / n : 0.0;
    tv += std::abs(p - q);
  }
  for (auto& [k, q] : sampled)
    if (!hist.count(k)) tv += q / n;
  CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("batch sampling is deterministic in the seed") {
  Dataset d = collect_dataset(envs::EnvFamily::Doors, 2, 5, 40, PolicySpec::uniform(), 2);
  Rng r1(77), r2(77);
  Batch a = sample_batch(d, 64, r1);
  Batch b = sample_batch(d, 64, r2);
  CHECK(a.s == b.s);
  CHECK(a.a == b.a);
  CHECK(a.s_next == b.s_next);
  CHECK(a.s_anchor == b.s_anchor);
}

TEST_CASE("context windows stay inside a single episode") {
  Dataset d = collect_dataset(envs::EnvFamily::Doors, 3, 10, 50, PolicySpec::uniform(), 6);
  Rng rng(5);

  SUBCASE("full-length window returns a whole episode") {
    ContextWindow w = sample_context_window(d, 50, rng);
    CHECK(w.transitions.size() == 50);
    CHECK(w.offset == 0);
    const auto& ep = d.episodes[static_cast<std::size_t>(w.episode_index)];
    CHECK(w.layout_seed == ep.layout_seed);
    for (int t = 0; t < 50; ++t) {
      CHECK(w.transitions[static_cast<std::size_t>(t)].s == ep.transition(t).s);
      CHECK(w.transitions[static_cast<std::size_t>(t)].a == ep.transition(t).a);
    }
  }

  SUBCASE("chained transitions and over-long windows rejected") {
    ContextWindow w = sample_context_window(d, 20, rng);
    for (std::size_t t = 0; t + 1 < w.transitions.size(); ++t)
      CHECK(w.transitions[t].s_next == w.transitions[t + 1].s);
    CHECK_THROWS_AS(sample_context_window(d, 51, rng), std::invalid_argument);
  }

  SUBCASE("window offsets are uniform") {
    std::vector<long> counts(26, 0);
    Dataset d2 = collect_dataset(envs::EnvFamily::Doors, 1, 4, 100, PolicySpec::uniform(), 6);
    for (int i = 0; i < 10000; ++i)
      counts[static_cast<std::size_t>(sample_context_window(d2, 75, rng).offset)] += 1;
    // 26 possible offsets; chi-square 0.99 quantile for dof 25 is 44.314
    std::vector<double> expected(26, 10000.0 / 26.0);
    CHECK(testutil::chi_square(counts, expected) < 44.314);
  }
}

TEST_CASE("coverage accounting") {
  Dataset d = collect_dataset(envs::EnvFamily::FourRooms, 4, 20, 60, PolicySpec::uniform(), 8);
  CoverageGrids g = coverage_heatmap(d);
  long total = g.pooled.sum();
  CHECK(total == d.manifest.total_transitions + static_cast<long>(d.episodes.size()));
  for (const auto& [seed, grid] : g.per_layout) {
    envs::LayoutSpec l = envs::generate_layout(envs::EnvFamily::FourRooms, seed);
    for (int y = 0; y < l.height; ++y)
      for (int x = 0; x < l.width; ++x)
        if (l.at(x, y) == envs::CellKind::Wall) CHECK(grid(y, x) == 0);
  }
}

TEST_CASE("coverage counts match the exact chain occupancy in an open room") {
  // 7x7 open room: expected visits from the uniform random walk are
  // computable exactly via the transition matrix
  envs::LayoutSpec room;
  room.env_family = envs::EnvFamily::Doors;
  room.width = room.height = 7;
  room.grid.assign(49, envs::CellKind::Empty);
  for (int i = 0; i < 7; ++i) {
    room.at(i, 0) = room.at(i, 6) = envs::CellKind::Wall;
    room.at(0, i) = room.at(6, i) = envs::CellKind::Wall;
  }
  room.start = {1, 1};
  room.eval_goals.push_back({5, 5});

  const int episode_len = 40;
  const int episodes = 3000;
  auto idx = [](envs::Coord c) { return (c.y - 1) * 5 + (c.x - 1); };
  Mat P = Mat::Zero(25, 25);
  for (int y = 1; y <= 5; ++y)
    for (int x = 1; x <= 5; ++x)
      for (int a = 0; a < 4; ++a)
        P(idx({x, y}), idx(envs::next_pos(room, {x, y}, a))) += 0.25;
  Vec mu = Vec::Zero(25);
  mu[idx(room.start)] = 1.0;
  Vec expected_visits = mu;  // initial state counts as a visit
  for (int t = 0; t < episode_len; ++t) {
    mu = P.transpose() * mu;
    expected_visits += mu;
  }

  // per-episode visit variance from an independent seeded run
  std::vector<envs::LayoutSpec> layouts{room};
  Dataset oracle = collect_dataset_from_layouts(layouts, episodes, episode_len,
                                                PolicySpec::uniform(), 1234567);
  Mat per_ep = Mat::Zero(episodes, 25);
  for (int e = 0; e < episodes; ++e) {
    const auto& ep = oracle.episodes[static_cast<std::size_t>(e)];
    for (int t = 0; t < ep.obs.rows(); ++t)
      per_ep(e, idx(denormalize_obs(ep.obs.row(t).transpose(), room))) += 1.0;
  }
  Vec var = Vec::Zero(25);
  Vec mean = per_ep.colwise().mean().transpose();
  for (int c = 0; c < 25; ++c)
    var[c] = (per_ep.col(c).array() - mean[c]).square().sum() / (episodes - 1);

  Dataset test = collect_dataset_from_layouts(layouts, episodes, episode_len,
                                              PolicySpec::uniform(), 24680);
  CoverageGrids g = coverage_heatmap(test, layouts);
  const auto& grid = g.per_layout.begin()->second;
  for (int y = 1; y <= 5; ++y)
    for (int x = 1; x <= 5; ++x) {
      double exp_total = episodes * expected_visits[idx({x, y})];
      double sigma = std::sqrt(episodes * var[idx({x, y})]);
      CHECK(std::abs(grid(y, x) - exp_total) < 3.0 * sigma);
    }
}

TEST_CASE("save/load round-trips bit-exactly and flags corruption") {
  Dataset d = collect_dataset(envs::EnvFamily::PointmassMaze, 2, 5, 30, PolicySpec::sticky(0.5), 13);
  auto path = std::filesystem::temp_directory_path() / "fbrl_test_dataset.jsonl";
  save_dataset(d, path);
  Dataset loaded = load_dataset(path);
  CHECK(loaded.manifest.total_transitions == d.manifest.total_transitions);
  CHECK(loaded.manifest.collection_seed == d.manifest.collection_seed);
  REQUIRE(loaded.episodes.size() == d.episodes.size());
  for (std::size_t i = 0; i < d.episodes.size(); ++i) {
    CHECK(loaded.episodes[i].actions == d.episodes[i].actions);
    CHECK(loaded.episodes[i].obs == d.episodes[i].obs);  // bit-exact
  }

  SUBCASE("truncated file fails integrity") {
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    std::ofstream out(path);
    out << all.substr(0, all.size() / 2);
    out.close();
    CHECK_THROWS(load_dataset(path));
  }

  SUBCASE("manifest transition count mismatch fails integrity") {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    auto j = nlohmann::json::parse(first);
    j["total_transitions"] = j["total_transitions"].get<std::int64_t>() + 1;
    std::ofstream out(path);
    out << j.dump() << '\n' << rest;
    out.close();
    CHECK_THROWS_WITH_AS(load_dataset(path),
                         "load_dataset: integrity error: total_transitions mismatch",
                         std::runtime_error);
  }
  std::filesystem::remove(path);
}

TEST_SUITE_END();
