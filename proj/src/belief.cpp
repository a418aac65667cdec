#include "fbrl/belief.hpp"

#include "fbrl/checkpoint.hpp"

#include <algorithm>

namespace fbrl::belief {

namespace {

constexpr double kLogSigMin = -10.0;
constexpr double kLogSigMax = 2.0;

struct EncodeCache {
  Mat tokens;
  nn::MlpCache embed;
  std::vector<nn::AttnCache> blocks;
  std::vector<Mat> block_in;  // input to each block
  Mat block_out;
  Vec pooled;
  nn::MlpCache mu_cache, logsig_cache;
  Vec mu, logsig_raw, logsig;
};

BeliefOutput encode_impl(const BeliefEncoder& enc, const Mat& raw_tokens, EncodeCache* cache) {
  EncodeCache local;
  EncodeCache& c = cache ? *cache : local;
  // Canonical token order up front: the mean pool then reduces the set in
  // a content-determined order, so encode is bitwise permutation-invariant.
  std::vector<int> order = nn::lexicographic_row_order(raw_tokens);
  Mat tokens(raw_tokens.rows(), raw_tokens.cols());
  for (Eigen::Index i = 0; i < tokens.rows(); ++i)
    tokens.row(i) = raw_tokens.row(order[static_cast<std::size_t>(i)]);
  c.tokens = tokens;
  Mat x = nn::mlp_forward(enc.embed_spec, enc.params.segment(enc.embed_off, enc.embed_spec.param_count()),
                          tokens, &c.embed);
  c.blocks.resize(static_cast<std::size_t>(enc.spec.n_blocks));
  c.block_in.resize(static_cast<std::size_t>(enc.spec.n_blocks));
  for (int b = 0; b < enc.spec.n_blocks; ++b) {
    c.block_in[static_cast<std::size_t>(b)] = x;
    x = nn::attention_forward(
        enc.block_spec,
        enc.params.segment(enc.block_off[static_cast<std::size_t>(b)], enc.block_spec.param_count()),
        x, &c.blocks[static_cast<std::size_t>(b)]);
  }
  c.block_out = x;
  c.pooled = x.colwise().mean().transpose();
  Mat pooled_row = c.pooled.transpose();
  c.mu = nn::mlp_forward(enc.mu_spec, enc.params.segment(enc.mu_off, enc.mu_spec.param_count()),
                         pooled_row, &c.mu_cache).row(0).transpose();
  c.logsig_raw = nn::mlp_forward(enc.logsig_spec,
                                 enc.params.segment(enc.logsig_off, enc.logsig_spec.param_count()),
                                 pooled_row, &c.logsig_cache).row(0).transpose();
  c.logsig = c.logsig_raw.cwiseMax(kLogSigMin).cwiseMin(kLogSigMax);
  return {c.mu, c.logsig};
}

// Backward from (dMu, dLogsig) through heads, pooling and blocks into grad.
void encode_backward(const BeliefEncoder& enc, const EncodeCache& c, const Vec& dMu,
                     const Vec& dLogsig, VecRef grad) {
  // clamp mask
  Vec dLogsigRaw = dLogsig;
  for (Eigen::Index i = 0; i < dLogsigRaw.size(); ++i)
    if (c.logsig_raw[i] < kLogSigMin || c.logsig_raw[i] > kLogSigMax) dLogsigRaw[i] = 0.0;

  Mat dPooled_mu, dPooled_ls;
  nn::mlp_backward(enc.mu_spec, enc.params.segment(enc.mu_off, enc.mu_spec.param_count()),
                   c.mu_cache, dMu.transpose(),
                   grad.segment(enc.mu_off, enc.mu_spec.param_count()), &dPooled_mu);
  nn::mlp_backward(enc.logsig_spec,
                   enc.params.segment(enc.logsig_off, enc.logsig_spec.param_count()),
                   c.logsig_cache, dLogsigRaw.transpose(),
                   grad.segment(enc.logsig_off, enc.logsig_spec.param_count()), &dPooled_ls);
  Eigen::RowVectorXd dPooled = dPooled_mu.row(0) + dPooled_ls.row(0);

  const Eigen::Index T = c.block_out.rows();
  Mat dX = (Mat::Ones(T, 1) * dPooled) / static_cast<double>(T);
  for (int b = enc.spec.n_blocks - 1; b >= 0; --b) {
    Mat dIn;
    nn::attention_backward(
        enc.block_spec,
        enc.params.segment(enc.block_off[static_cast<std::size_t>(b)], enc.block_spec.param_count()),
        c.blocks[static_cast<std::size_t>(b)], dX,
        grad.segment(enc.block_off[static_cast<std::size_t>(b)], enc.block_spec.param_count()),
        &dIn);
    dX = std::move(dIn);
  }
  nn::mlp_backward(enc.embed_spec, enc.params.segment(enc.embed_off, enc.embed_spec.param_count()),
                   c.embed, dX, grad.segment(enc.embed_off, enc.embed_spec.param_count()), nullptr);
}

Mat gpred_inputs(const BeliefEncoder& enc, std::span<const data::Transition> ts, const Vec& h) {
  const int T = static_cast<int>(ts.size());
  Mat in = Mat::Zero(T, enc.gpred_spec.input_dim);
  for (int t = 0; t < T; ++t) {
    in(t, 0) = ts[static_cast<std::size_t>(t)].s.x();
    in(t, 1) = ts[static_cast<std::size_t>(t)].s.y();
    in(t, 2 + ts[static_cast<std::size_t>(t)].a) = 1.0;
    in.row(t).tail(enc.spec.d_h) = h.transpose();
  }
  return in;
}

}  // namespace

BeliefEncoder make_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  BeliefEncoder enc;
  enc.spec = spec;
  enc.embed_spec = {spec.token_dim(), {spec.width}, spec.width, nn::Act::GeLU, true};
  enc.block_spec = {spec.width, spec.heads, spec.ff_dim};
  enc.mu_spec = {spec.width, {}, spec.d_h, nn::Act::GeLU, false};
  enc.logsig_spec = {spec.width, {}, spec.d_h, nn::Act::GeLU, false};
  enc.gpred_spec = {spec.obs_dim + spec.n_actions + spec.d_h, spec.gpred_hidden, spec.obs_dim,
                    nn::Act::GeLU, true};

  int total = enc.embed_spec.param_count() + spec.n_blocks * enc.block_spec.param_count() +
              enc.mu_spec.param_count() + enc.logsig_spec.param_count() +
              enc.gpred_spec.param_count();
  enc.params.resize(total);
  Rng rng(mix_seed(seed, 0xBE11EF));
  int off = 0;
  enc.embed_off = off;
  enc.params.segment(off, enc.embed_spec.param_count()) = nn::init_mlp_params(enc.embed_spec, rng);
  off += enc.embed_spec.param_count();
  for (int b = 0; b < spec.n_blocks; ++b) {
    enc.block_off.push_back(off);
    enc.params.segment(off, enc.block_spec.param_count()) =
        nn::init_attention_params(enc.block_spec, rng);
    off += enc.block_spec.param_count();
  }
  enc.mu_off = off;
  enc.params.segment(off, enc.mu_spec.param_count()) = nn::init_mlp_params(enc.mu_spec, rng);
  off += enc.mu_spec.param_count();
  enc.logsig_off = off;
  enc.params.segment(off, enc.logsig_spec.param_count()) = nn::init_mlp_params(enc.logsig_spec, rng);
  off += enc.logsig_spec.param_count();
  enc.gpred_off = off;
  enc.params.segment(off, enc.gpred_spec.param_count()) = nn::init_mlp_params(enc.gpred_spec, rng);
  return enc;
}

Mat transitions_to_tokens(const BeliefEncoder& enc, std::span<const data::Transition> ts) {
  const int T = static_cast<int>(ts.size());
  Mat tokens = Mat::Zero(T, enc.spec.token_dim());
  for (int t = 0; t < T; ++t) {
    const auto& tr = ts[static_cast<std::size_t>(t)];
    tokens(t, 0) = tr.s.x();
    tokens(t, 1) = tr.s.y();
    tokens(t, 2 + tr.a) = 1.0;
    tokens(t, 2 + enc.spec.n_actions) = tr.s_next.x();
    tokens(t, 3 + enc.spec.n_actions) = tr.s_next.y();
  }
  return tokens;
}

BeliefOutput encode(const BeliefEncoder& enc, std::span<const data::Transition> transitions) {
  if (transitions.empty()) throw std::invalid_argument("encode: empty transition set");
  return encode_impl(enc, transitions_to_tokens(enc, transitions), nullptr);
}

Vec reparameterize(const BeliefOutput& out, const Vec& noise) {
  if (noise.size() != out.mu.size()) throw std::invalid_argument("reparameterize: shape mismatch");
  return out.mu.array() + noise.array() * out.log_sigma.array().exp();
}

Vec predict_next(const BeliefEncoder& enc, const Eigen::Vector2d& s, int a, const Vec& h) {
  if (h.size() != enc.spec.d_h) throw std::invalid_argument("predict_next: h width mismatch");
  data::Transition t{s, a, Eigen::Vector2d::Zero()};
  Mat in = gpred_inputs(enc, std::span<const data::Transition>(&t, 1), h);
  return nn::mlp_forward(enc.gpred_spec, enc.params.segment(enc.gpred_off, enc.gpred_spec.param_count()),
                         in).row(0).transpose();
}

Vec infer_context(const BeliefEncoder& enc, std::span<const data::Transition> trajectory) {
  return encode(enc, trajectory).mu;
}

double pretrain_loss_and_grad(const BeliefEncoder& enc,
                              const std::vector<std::vector<data::Transition>>& windows,
                              const std::vector<Vec>& noises, VecRef grad) {
  const int B = static_cast<int>(windows.size());
  double loss = 0.0;
  for (int i = 0; i < B; ++i) {
    const auto& w = windows[static_cast<std::size_t>(i)];
    const int T = static_cast<int>(w.size());
    EncodeCache cache;
    BeliefOutput out = encode_impl(enc, transitions_to_tokens(enc, w), &cache);
    const Vec& eps = noises[static_cast<std::size_t>(i)];
    Vec sig = out.log_sigma.array().exp();
    Vec h = out.mu.array() + eps.array() * sig.array();

    Mat in = gpred_inputs(enc, w, h);
    nn::MlpCache gcache;
    Mat pred = nn::mlp_forward(enc.gpred_spec,
                               enc.params.segment(enc.gpred_off, enc.gpred_spec.param_count()),
                               in, &gcache);
    Mat target(T, 2);
    for (int t = 0; t < T; ++t) target.row(t) = w[static_cast<std::size_t>(t)].s_next.transpose();
    Mat diff = pred - target;
    double denom = static_cast<double>(B) * static_cast<double>(T);
    loss += diff.squaredNorm() / denom;

    Mat dPred = (2.0 / denom) * diff;
    Mat dIn;
    nn::mlp_backward(enc.gpred_spec,
                     enc.params.segment(enc.gpred_off, enc.gpred_spec.param_count()), gcache,
                     dPred, grad.segment(enc.gpred_off, enc.gpred_spec.param_count()), &dIn);
    Vec dH = dIn.rightCols(enc.spec.d_h).colwise().sum().transpose();

    Vec dMu = dH;
    Vec dLogsig = (dH.array() * eps.array() * sig.array()).matrix();
    if (enc.spec.beta_kl > 0.0) {
      double w_kl = enc.spec.beta_kl / static_cast<double>(B);
      loss += w_kl * 0.5 *
              (out.mu.array().square() + sig.array().square() - 1.0 -
               2.0 * out.log_sigma.array()).sum();
      dMu += w_kl * out.mu;
      dLogsig += (w_kl * (sig.array().square() - 1.0)).matrix();
    }
    encode_backward(enc, cache, dMu, dLogsig, grad);
  }
  return loss;
}

PretrainResult pretrain_encoder(BeliefEncoder& enc, const data::Dataset& dataset, int k_steps,
                                int context_len, int batch, double lr, std::uint64_t seed) {
  if (context_len > dataset.manifest.episode_len)
    context_len = dataset.manifest.episode_len;
  Rng rng(mix_seed(seed, 0x9D2A1));
  nn::AdamState opt = nn::AdamState::make(enc.param_count(), lr);
  Vec grad(enc.param_count());
  PretrainResult result;
  for (int step = 0; step < k_steps; ++step) {
    std::vector<std::vector<data::Transition>> windows;
    std::vector<Vec> noises;
    windows.reserve(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) {
      windows.push_back(data::sample_context_window(dataset, context_len, rng).transitions);
      noises.push_back(rng.normal_vec(enc.spec.d_h));
    }
    grad.setZero();
    double loss = pretrain_loss_and_grad(enc, windows, noises, grad);
    if (!std::isfinite(loss)) throw std::runtime_error("pretrain_encoder: loss diverged");
    nn::adam_step(opt, enc.params, grad);
    result.loss_curve.push_back(loss);
  }
  return result;
}

void save_encoder(const BeliefEncoder& enc, const std::filesystem::path& path, int context_len,
                  std::uint64_t dataset_hash) {
  nlohmann::json h;
  h["kind"] = "belief_encoder";
  h["obs_dim"] = enc.spec.obs_dim;
  h["n_actions"] = enc.spec.n_actions;
  h["width"] = enc.spec.width;
  h["heads"] = enc.spec.heads;
  h["ff_dim"] = enc.spec.ff_dim;
  h["n_blocks"] = enc.spec.n_blocks;
  h["d_h"] = enc.spec.d_h;
  h["gpred_hidden"] = enc.spec.gpred_hidden;
  h["beta_kl"] = enc.spec.beta_kl;
  h["context_len"] = context_len;
  h["dataset_hash"] = dataset_hash;
  io::write_checkpoint(path, h, {&enc.params});
}

BeliefEncoder load_encoder(const std::filesystem::path& path, int* context_len) {
  io::Checkpoint ck = io::read_checkpoint(path);
  if (ck.header.value("kind", "") != "belief_encoder")
    throw std::runtime_error("load_encoder: not an encoder checkpoint");
  EncoderSpec spec;
  spec.obs_dim = ck.header.at("obs_dim").get<int>();
  spec.n_actions = ck.header.at("n_actions").get<int>();
  spec.width = ck.header.at("width").get<int>();
  spec.heads = ck.header.at("heads").get<int>();
  spec.ff_dim = ck.header.at("ff_dim").get<int>();
  spec.n_blocks = ck.header.at("n_blocks").get<int>();
  spec.d_h = ck.header.at("d_h").get<int>();
  spec.gpred_hidden = ck.header.at("gpred_hidden").get<std::vector<int>>();
  spec.beta_kl = ck.header.at("beta_kl").get<double>();
  BeliefEncoder enc = make_encoder(spec, 0);
  if (ck.arrays.size() != 1 || ck.arrays[0].size() != enc.params.size())
    throw std::runtime_error("load_encoder: parameter size mismatch");
  enc.params = ck.arrays[0];
  if (context_len) *context_len = ck.header.at("context_len").get<int>();
  return enc;
}

}  // namespace fbrl::belief
