#include "fbrl/belief.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>

using namespace fbrl;
using namespace fbrl::belief;

namespace {

EncoderSpec small_spec(int d_h = 8) {
  EncoderSpec s;
  s.width = 32;
  s.heads = 4;
  s.ff_dim = 64;
  s.n_blocks = 2;
  s.d_h = d_h;
  s.gpred_hidden = {32, 32};
  return s;
}

// 1D line world where the hidden context flips the action semantics:
// context 0 moves right on action 3 / left on action 2, context 1 swaps.
data::Dataset flipworld_dataset(int episodes_per_context, int episode_len, std::uint64_t seed) {
  constexpr int kLine = 12;
  data::Dataset d;
  d.manifest.env_family = envs::EnvFamily::Doors;
  d.manifest.n_layouts = 2;
  d.manifest.episodes_per_layout = episodes_per_context;
  d.manifest.episode_len = episode_len;
  d.manifest.collection_seed = seed;
  Rng rng(seed);
  for (int ctx = 0; ctx < 2; ++ctx) {
    for (int e = 0; e < episodes_per_context; ++e) {
      data::EpisodeRecord ep;
      ep.layout_seed = static_cast<std::uint64_t>(ctx);
      ep.env_family = envs::EnvFamily::Doors;
      ep.obs.resize(episode_len + 1, 2);
      ep.actions.resize(static_cast<std::size_t>(episode_len));
      int x = 5;
      ep.obs.row(0) << x / 11.0, 0.0;
      for (int t = 0; t < episode_len; ++t) {
        int a = rng.uniform_int(4);
        int delta = 0;
        if (a == 3) delta = ctx == 0 ? 1 : -1;
        if (a == 2) delta = ctx == 0 ? -1 : 1;
        x = std::clamp(x + delta, 0, kLine - 1);
        ep.actions[static_cast<std::size_t>(t)] = static_cast<std::uint8_t>(a);
        ep.obs.row(t + 1) << x / 11.0, 0.0;
      }
      d.episodes.push_back(std::move(ep));
    }
  }
  d.manifest.total_transitions = d.total_transitions();
  d.rebuild_index();
  return d;
}

std::vector<data::Transition> episode_window(const data::EpisodeRecord& ep) {
  std::vector<data::Transition> w;
  for (int t = 0; t < ep.length(); ++t) w.push_back(ep.transition(t));
  return w;
}

}  // namespace

TEST_SUITE_BEGIN("belief");

TEST_CASE("encode is bitwise invariant to transition permutations") {
  BeliefEncoder enc = make_encoder(small_spec(), 3);
  data::Dataset d = flipworld_dataset(2, 25, 5);
  auto window = episode_window(d.episodes[0]);
  BeliefOutput a = encode(enc, window);

  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto shuffled = window;
    for (std::size_t i = shuffled.size() - 1; i > 0; --i)
      std::swap(shuffled[i], shuffled[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i) + 1))]);
    BeliefOutput b = encode(enc, shuffled);
    CHECK(a.mu == b.mu);
    CHECK(a.log_sigma == b.log_sigma);
  }
  CHECK(infer_context(enc, window) == a.mu);
}

TEST_CASE("singleton and duplicated windows") {
  BeliefEncoder enc = make_encoder(small_spec(), 4);
  data::Dataset d = flipworld_dataset(1, 10, 6);
  auto window = episode_window(d.episodes[0]);

  SUBCASE("a single transition encodes without degenerate output") {
    std::vector<data::Transition> one{window[0]};
    BeliefOutput out = encode(enc, one);
    CHECK(out.mu.allFinite());
    CHECK(out.log_sigma.allFinite());
  }

  SUBCASE("duplicating every transition leaves mu unchanged") {
    auto doubled = window;
    doubled.insert(doubled.end(), window.begin(), window.end());
    BeliefOutput a = encode(enc, window);
    BeliefOutput b = encode(enc, doubled);
    CHECK((a.mu - b.mu).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("empty input is rejected") {
    std::vector<data::Transition> none;
    CHECK_THROWS_AS(encode(enc, none), std::invalid_argument);
  }
}

TEST_CASE("reparameterization") {
  BeliefOutput out;
  out.mu = Vec::LinSpaced(6, -1.0, 1.0);
  out.log_sigma = Vec::Constant(6, -0.5);

  SUBCASE("zero noise returns mu") {
    CHECK(reparameterize(out, Vec::Zero(6)) == out.mu);
  }

  SUBCASE("log_sigma -10 pins h to mu") {
    out.log_sigma.setConstant(-10.0);
    Rng rng(4);
    Vec noise = rng.normal_vec(6);
    Vec h = reparameterize(out, noise);
    CHECK((h - out.mu).cwiseAbs().maxCoeff() <= 1e-4 * noise.cwiseAbs().maxCoeff());
  }

  SUBCASE("empirical variance matches exp(2 log_sigma)") {
    Rng rng(5);
    const int n = 10000;
    Mat h(n, 6);
    for (int i = 0; i < n; ++i) h.row(i) = reparameterize(out, rng.normal_vec(6)).transpose();
    Vec mean = h.colwise().mean().transpose();
    for (int j = 0; j < 6; ++j) {
      double var = (h.col(j).array() - mean[j]).square().sum() / (n - 1);
      double expected = std::exp(2.0 * out.log_sigma[j]);
      CHECK(std::abs(var - expected) / expected < 0.05);
    }
  }
}

TEST_CASE("predict_next basics") {
  BeliefEncoder enc = make_encoder(small_spec(4), 7);

  SUBCASE("deterministic given parameters and inputs") {
    Vec h = Vec::Ones(4);
    Vec a = predict_next(enc, {0.3, 0.0}, 2, h);
    Vec b = predict_next(enc, {0.3, 0.0}, 2, h);
    CHECK(a == b);
    CHECK_THROWS_AS(predict_next(enc, {0.3, 0.0}, 2, Vec::Ones(5)), std::invalid_argument);
  }

  SUBCASE("zeroed g_pred parameters predict zero") {
    enc.params.segment(enc.gpred_off, enc.gpred_spec.param_count()).setZero();
    CHECK(predict_next(enc, {0.7, 0.1}, 1, Vec::Ones(4)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("pretraining loss gradient matches finite differences") {
  EncoderSpec spec;
  spec.width = 16;
  spec.heads = 2;
  spec.ff_dim = 24;
  spec.n_blocks = 2;
  spec.d_h = 4;
  spec.gpred_hidden = {16};

  for (double beta_kl : {0.0, 0.5}) {
    CAPTURE(beta_kl);
    spec.beta_kl = beta_kl;
    BeliefEncoder enc = make_encoder(spec, 11);
    data::Dataset d = flipworld_dataset(2, 8, 13);
    Rng rng(17);
    std::vector<std::vector<data::Transition>> windows;
    std::vector<Vec> noises;
    for (int i = 0; i < 2; ++i) {
      windows.push_back(data::sample_context_window(d, 6, rng).transitions);
      noises.push_back(rng.normal_vec(4));
    }
    Vec grad = Vec::Zero(enc.param_count());
    pretrain_loss_and_grad(enc, windows, noises, grad);
    auto loss_at = [&](const Vec& p) {
      BeliefEncoder e2 = enc;
      e2.params = p;
      Vec scratch = Vec::Zero(e2.param_count());
      return pretrain_loss_and_grad(e2, windows, noises, scratch);
    };
    double err = nn::grad_check(loss_at, enc.params, grad, 1e-5, 250, rng);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("flip-world pretraining separates the two contexts") {
  data::Dataset train = flipworld_dataset(120, 30, 21);
  BeliefEncoder enc = make_encoder(small_spec(8), 23);

  SUBCASE("zero steps leave the encoder unchanged") {
    Vec before = enc.params;
    pretrain_encoder(enc, train, 0, 30, 6, 1e-3, 25);
    CHECK(enc.params == before);
  }

  PretrainResult res = pretrain_encoder(enc, train, 1200, 30, 6, 1e-3, 25);

  SUBCASE("loss decreases in 500-step moving average") {
    auto ma = [&](int end) {
      double s = 0.0;
      for (int i = end - 500; i < end; ++i) s += res.loss_curve[static_cast<std::size_t>(i)];
      return s / 500.0;
    };
    double prev = ma(500);
    for (int end = 600; end <= 1200; end += 100) {
      double cur = ma(end);
      CHECK(cur <= prev);
      prev = cur;
    }
  }

  SUBCASE("held-out linear probe and prediction preference") {
    data::Dataset held = flipworld_dataset(40, 30, 900);

    auto mu_of = [&](const data::EpisodeRecord& ep) {
      return infer_context(enc, episode_window(ep));
    };

    // probe direction from the training episodes
    Vec mean_a = Vec::Zero(8), mean_b = Vec::Zero(8);
    int n_a = 0, n_b = 0;
    for (int e = 0; e < 80; ++e) {
      const auto& ep = train.episodes[static_cast<std::size_t>(e)];
      mean_a += mu_of(ep);
      ++n_a;
    }
    for (int e = 0; e < 80; ++e) {
      const auto& ep = train.episodes[static_cast<std::size_t>(120 + e)];
      mean_b += mu_of(ep);
      ++n_b;
    }
    mean_a /= n_a;
    mean_b /= n_b;
    Vec w = mean_a - mean_b;
    double threshold = 0.5 * w.dot(mean_a + mean_b);

    int correct = 0;
    int better_mse = 0;
    int total = 0;
    for (std::size_t e = 0; e < held.episodes.size(); ++e) {
      const auto& ep = held.episodes[e];
      int label = static_cast<int>(ep.layout_seed);
      Vec mu = mu_of(ep);
      int pred = (w.dot(mu) > threshold) ? 0 : 1;
      correct += (pred == label);

      // prediction error with the matching vs the opposite context vector
      const auto& match_ep = train.episodes[static_cast<std::size_t>(label == 0 ? 0 : 120)];
      const auto& other_ep = train.episodes[static_cast<std::size_t>(label == 0 ? 120 : 0)];
      Vec h_match = mu_of(match_ep);
      Vec h_other = mu_of(other_ep);
      double mse_match = 0.0, mse_other = 0.0;
      for (int t = 0; t < ep.length(); ++t) {
        data::Transition tr = ep.transition(t);
        mse_match += (predict_next(enc, tr.s, tr.a, h_match) - tr.s_next).squaredNorm();
        mse_other += (predict_next(enc, tr.s, tr.a, h_other) - tr.s_next).squaredNorm();
      }
      better_mse += (mse_match < mse_other);
      ++total;
    }
    double accuracy = static_cast<double>(correct) / total;
    CHECK(accuracy >= 0.95);
    CHECK(static_cast<double>(better_mse) / total >= 0.9);
  }
}

TEST_CASE("encoder checkpoint round-trips") {
  BeliefEncoder enc = make_encoder(small_spec(6), 31);
  auto path = std::filesystem::temp_directory_path() / "fbrl_test_encoder.ckpt";
  save_encoder(enc, path, 42, 0xABCD);
  int context_len = 0;
  BeliefEncoder loaded = load_encoder(path, &context_len);
  CHECK(loaded.params == enc.params);
  CHECK(context_len == 42);
  CHECK(loaded.spec.d_h == 6);
  std::filesystem::remove(path);
}

TEST_SUITE_END();
