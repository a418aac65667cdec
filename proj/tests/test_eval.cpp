#include "fbrl/eval.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <fstream>

using namespace fbrl;
using namespace fbrl::eval;

namespace {

fb::FbSizes tiny_sizes(int d) {
  fb::FbSizes s;
  s.d = d;
  s.embed_dim = 16;
  s.preproc_hidden = {16};
  s.trunk_hidden = {16};
  s.b_hidden = {16};
  s.ensemble = 2;
  return s;
}

}  // namespace

TEST_SUITE_BEGIN("eval");

TEST_CASE("task inference from labeled rho samples") {
  envs::LayoutSpec layout = envs::generate_fourrooms(0);
  data::Dataset ds = data::collect_dataset(envs::EnvFamily::FourRooms, 2, 20, 60,
                                           data::PolicySpec::uniform(), 1);
  fb::FbModel model = fb::make_fb_model(fb::Variant::FB, tiny_sizes(8), 0.99, 2);
  Rng rng(3);

  SUBCASE("indicator reward recovers B at the goal") {
    envs::Coord goal{2, 1};  // near the start, well covered
    Vec z = infer_task_vector(model, ds, RewardSpec::at(goal, layout), 5000, rng);
    Mat goal_obs = data::normalize_obs(goal, layout).transpose();
    Mat b = fb::backward_B(model, goal_obs);
    CHECK((z - b.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-6);
  }

  SUBCASE("a reward unsupported by rho raises a coverage error") {
    RewardSpec nowhere{{0, 0}, Eigen::Vector2d(-5.0, -5.0)};
    CHECK_THROWS_AS(infer_task_vector(model, ds, nowhere, 2000, rng), CoverageError);
  }

  SUBCASE("raw task vectors are additive across rewards") {
    Mat states = data::sample_rho_states(ds, 4000, rng);
    envs::Coord g1{2, 1}, g2{1, 2};
    Vec raw1, raw2, raw12;
    infer_task_from_states(model, states, RewardSpec::at(g1, layout), &raw1);
    infer_task_from_states(model, states, RewardSpec::at(g2, layout), &raw2);
    // indicator rewards on disjoint goals: the union task is their sum
    std::vector<Eigen::Index> keep;
    Mat b = fb::backward_B(model, states);
    RewardSpec r1 = RewardSpec::at(g1, layout), r2 = RewardSpec::at(g2, layout);
    Vec sum_raw = Vec::Zero(8);
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      double r = r1(states.row(i).transpose()) + r2(states.row(i).transpose());
      sum_raw += r * b.row(i).transpose();
    }
    sum_raw /= static_cast<double>(states.rows());
    CHECK((sum_raw - (raw1 + raw2)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rollout mechanics") {
  envs::LayoutSpec layout = envs::generate_fourrooms(1);

  SUBCASE("a shortest-path oracle succeeds on every connected layout") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      envs::LayoutSpec l = envs::generate_fourrooms(seed);
      for (envs::Coord goal : l.eval_goals) {
        auto dist = testutil::bfs_distances(l, goal);
        auto policy = [&](const envs::EnvState& st) {
          return testutil::shortest_path_action(l, st.pos, dist);
        };
        RolloutResult r = rollout(l, goal, policy, l.horizon, 0.99);
        CHECK(r.success == 1);
        CHECK(r.ret > 0.0);
      }
    }
  }

  SUBCASE("zero horizon fails unless the goal is the start") {
    auto policy = [](const envs::EnvState&) { return 0; };
    RolloutResult r = rollout(layout, layout.eval_goals[0], policy, 0, 0.99);
    CHECK(r.success == 0);
    RolloutResult at_start = rollout(layout, layout.start, policy, 0, 0.99);
    CHECK(at_start.success == 1);
  }

  SUBCASE("uniform random policy success rate brackets the reference value") {
    Rng rng(5);
    long successes = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      envs::LayoutSpec l = envs::generate_fourrooms(seed);
      auto policy = [&](const envs::EnvState&) { return rng.uniform_int(4); };
      for (envs::Coord goal : l.eval_goals) {
        successes += rollout(l, goal, policy, 100, 0.99).success;
        ++total;
      }
    }
    double rate = static_cast<double>(successes) / static_cast<double>(total);
    CHECK(rate > 0.08);
    CHECK(rate < 0.28);
  }
}

TEST_CASE("zero-shot evaluation protocol") {
  data::Dataset ds = data::collect_dataset(envs::EnvFamily::Doors, 3, 15, 50,
                                           data::PolicySpec::uniform(), 7);
  std::vector<envs::LayoutSpec> layouts;
  for (std::uint64_t i = 0; i < 3; ++i) layouts.push_back(envs::generate_doors(i));

  fb::FbModel model = fb::make_fb_model(fb::Variant::FB, tiny_sizes(8), 0.99, 8);
  belief::EncoderSpec espec;
  espec.width = 16;
  espec.heads = 2;
  espec.ff_dim = 16;
  espec.n_blocks = 1;
  espec.d_h = 8;
  espec.gpred_hidden = {16};
  belief::BeliefEncoder enc = belief::make_encoder(espec, 9);

  SUBCASE("the FB variant ignores a provided encoder") {
    EvalReport with = zero_shot_eval(model, &enc, layouts, "train", ds, 30, 1000, 42);
    EvalReport without = zero_shot_eval(model, nullptr, layouts, "train", ds, 30, 1000, 42);
    REQUIRE(with.rows.size() == without.rows.size());
    for (std::size_t i = 0; i < with.rows.size(); ++i) {
      CHECK(with.rows[i].success == without.rows[i].success);
      CHECK(with.rows[i].ret == without.rows[i].ret);
    }
  }

  SUBCASE("goals unreachable within the horizon give zero success") {
    std::vector<envs::LayoutSpec> short_horizon = layouts;
    for (auto& l : short_horizon) l.horizon = 1;
    EvalReport rep = zero_shot_eval(model, nullptr, short_horizon, "train", ds, 30, 1000, 42);
    CHECK(rep.mean_success() == 0.0);
  }

  SUBCASE("evaluation is deterministic and side-effect free") {
    Vec params_before = model.online;
    EvalReport a = zero_shot_eval(model, nullptr, layouts, "train", ds, 30, 1000, 43);
    EvalReport b = zero_shot_eval(model, nullptr, layouts, "train", ds, 30, 1000, 43);
    CHECK(model.online == params_before);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].success == b.rows[i].success);
      CHECK(a.rows[i].ret == b.rows[i].ret);
      CHECK(a.rows[i].layout_seed == b.rows[i].layout_seed);
    }
    CHECK(a.mean_success() == b.mean_success());
  }

  SUBCASE("conditioned variants require an encoder") {
    fb::FbModel bfb = fb::make_fb_model(fb::Variant::BFB, tiny_sizes(8), 0.99, 8);
    CHECK_THROWS_AS(zero_shot_eval(bfb, nullptr, layouts, "train", ds, 30, 1000, 42),
                    std::invalid_argument);
  }
}

TEST_CASE("interference score") {
  Rng rng(11);

  SUBCASE("a constant-argmax model scores 1.0") {
    fb::FbModel m = fb::make_fb_model(fb::Variant::FB, tiny_sizes(8), 0.99, 12);
    m.online.segment(0, m.b_off).setZero();  // ties everywhere -> action 0 always
    InterferenceResult r = interference_score(m, {0.5, 0.5}, 500, nullptr, rng);
    CHECK(r.score == 1.0);
    CHECK(r.action_histogram[0] == 500);
  }

  SUBCASE("a fresh random model is near the uniform baseline") {
    fb::FbModel m = fb::make_fb_model(fb::Variant::FB, tiny_sizes(16), 0.99, 13);
    InterferenceResult r = interference_score(m, {0.5, 0.5}, 1000, nullptr, rng);
    CHECK(r.score >= 0.25);
    CHECK(r.score <= 0.6);
  }

  SUBCASE("bounds and argument validation") {
    fb::FbModel m = fb::make_fb_model(fb::Variant::FB, tiny_sizes(8), 0.99, 14);
    CHECK_THROWS_AS(interference_score(m, {0.5, 0.5}, 99, nullptr, rng), std::invalid_argument);
    InterferenceResult r = interference_score(m, {0.3, 0.7}, 200, nullptr, rng);
    CHECK(r.score >= 0.25);
    CHECK(r.score <= 1.0);
    long total = 0;
    for (long c : r.action_histogram) total += c;
    CHECK(total == 200);
  }
}

TEST_CASE("principal component export") {
  auto path = std::filesystem::temp_directory_path() / "fbrl_test_pca.csv";

  SUBCASE("exact rank-2 case preserves pairwise distances") {
    Rng rng(15);
    Mat pts(12, 2);
    for (int i = 0; i < 12; ++i) pts.row(i) = rng.normal_vec(2).transpose();
    pts.rowwise() -= pts.colwise().mean();
    std::vector<std::string> labels(12, "x");
    PcaResult res = latent_projection_export(pts, labels, path);
    CHECK(!res.degenerate);
    for (int i = 0; i < 12; ++i)
      for (int j = i + 1; j < 12; ++j) {
        double orig = (pts.row(i) - pts.row(j)).norm();
        double proj = (res.projections.row(i) - res.projections.row(j)).norm();
        CHECK(std::abs(orig - proj) < 1e-9);
      }
  }

  SUBCASE("duplicated points project identically") {
    Mat pts(6, 4);
    pts << 1, 2, 3, 4, 1, 2, 3, 4, 5, 6, 7, 8, 5, 6, 7, 8, 0, 1, 0, 1, 0, 1, 0, 1;
    std::vector<std::string> labels(6, "p");
    PcaResult res = latent_projection_export(pts, labels, path);
    CHECK(res.projections.row(0) == res.projections.row(1));
    CHECK(res.projections.row(2) == res.projections.row(3));
    CHECK(res.projections.row(4) == res.projections.row(5));
  }

  SUBCASE("all-equal vectors are degenerate with zero projections") {
    Mat pts = Mat::Ones(5, 3);
    std::vector<std::string> labels(5, "c");
    PcaResult res = latent_projection_export(pts, labels, path);
    CHECK(res.degenerate);
    CHECK(res.projections.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("five synthetic clusters separate with silhouette above 0.5") {
    Rng rng(16);
    const int per = 30;
    Mat pts(5 * per, 6);
    std::vector<int> labels(5 * per);
    for (int c = 0; c < 5; ++c) {
      Vec center = 10.0 * rng.normal_vec(6);
      for (int i = 0; i < per; ++i) {
        pts.row(c * per + i) = (center + 0.5 * rng.normal_vec(6)).transpose();
        labels[static_cast<std::size_t>(c * per + i)] = c;
      }
    }
    std::vector<std::string> names(5 * static_cast<std::size_t>(per), "c");
    PcaResult res = latent_projection_export(pts, names, path);
    CHECK(testutil::silhouette(res.projections, labels, 5) > 0.5);
  }

  SUBCASE("fewer than three vectors are rejected") {
    Mat pts = Mat::Random(2, 3);
    std::vector<std::string> labels(2, "x");
    CHECK_THROWS_AS(latent_projection_export(pts, labels, path), std::invalid_argument);
  }
  std::filesystem::remove(path);
}

TEST_CASE("report csv format") {
  EvalReport rep;
  rep.split = "train";
  rep.variant = "rfb";
  rep.kappa = 50.0;
  rep.context_len = 100;
  rep.seed = 9;
  rep.rows.push_back({3, 1, 1, 0.5, 12, false});
  auto path = std::filesystem::temp_directory_path() / "fbrl_test_report.csv";
  write_report_csv(path, "run-1", std::vector<EvalReport>{rep});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header ==
        "run_id,variant,split,layout_seed,goal_index,success,return,steps,seed,kappa,context_len");
  CHECK(row == "run-1,rfb,train,3,1,1,0.5,12,9,50,100");
  std::filesystem::remove(path);
}

TEST_CASE("ablation: single cell equals a standard run, failures recorded") {
  PipelineConfig base;
  base.family = envs::EnvFamily::Doors;
  base.n_train_layouts = 2;
  base.n_test_layouts = 1;
  base.episodes_per_layout = 8;
  base.episode_len = 30;
  base.variant = fb::Variant::FB;
  base.sizes = tiny_sizes(6);
  base.gamma = 0.95;
  base.train.steps = 60;
  base.train.batch = 32;
  base.train.lr = 1e-3;
  base.context_len = 30;
  base.n_labels = 500;
  base.seed = 77;

  AblationGrid single;
  auto rows = run_ablation(single, base, 1);
  REQUIRE(rows.size() == 2);
  CHECK(!rows[0].failed);

  PipelineConfig direct = base;
  direct.seed = mix_seed(base.seed, 1);
  PipelineResult res = run_pipeline(direct);
  CHECK(rows[0].mean_success == res.train_report.mean_success());
  CHECK(rows[1].mean_success == res.test_report.mean_success());

  AblationGrid bad;
  bad.n_layouts = {0};  // collection rejects zero layouts
  auto failed = run_ablation(bad, base, 1);
  REQUIRE(failed.size() == 2);
  CHECK(failed[0].failed);
  CHECK(!failed[0].error.empty());
}

TEST_SUITE_END();
