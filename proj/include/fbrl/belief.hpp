#pragma once

#include "fbrl/common.hpp"
#include "fbrl/dataset.hpp"
#include "fbrl/nn.hpp"

#include <filesystem>
#include <span>

namespace fbrl::belief {

struct EncoderSpec {
  int obs_dim = 2;
  int n_actions = 4;
  int width = 128;
  int heads = 4;
  int ff_dim = 256;
  int n_blocks = 2;
  int d_h = 100;
  std::vector<int> gpred_hidden = {256, 256, 256};
  double beta_kl = 0.0;

  int token_dim() const { return 2 * obs_dim + n_actions; }
};

// Permutation-invariant set encoder over transition tokens: token MLP,
// attention blocks without positional encodings, mean pooling, then
// (mu, log_sigma) heads. g_pred maps (s, onehot(a), h) to the next state.
struct BeliefEncoder {
  EncoderSpec spec;
  nn::MlpSpec embed_spec;
  nn::AttentionSpec block_spec;
  nn::MlpSpec mu_spec;
  nn::MlpSpec logsig_spec;
  nn::MlpSpec gpred_spec;

  Vec params;
  int embed_off = 0;
  std::vector<int> block_off;
  int mu_off = 0;
  int logsig_off = 0;
  int gpred_off = 0;

  int param_count() const { return static_cast<int>(params.size()); }
};

struct BeliefOutput {
  Vec mu;
  Vec log_sigma;  // clamped to [-10, 2]
};

BeliefEncoder make_encoder(const EncoderSpec& spec, std::uint64_t seed);

Mat transitions_to_tokens(const BeliefEncoder& enc, std::span<const data::Transition> ts);

BeliefOutput encode(const BeliefEncoder& enc, std::span<const data::Transition> transitions);

Vec reparameterize(const BeliefOutput& out, const Vec& noise);

Vec predict_next(const BeliefEncoder& enc, const Eigen::Vector2d& s, int a, const Vec& h);

// mu of the encoded trajectory; no sampling at inference time.
Vec infer_context(const BeliefEncoder& enc, std::span<const data::Transition> trajectory);

struct PretrainResult {
  std::vector<double> loss_curve;
};

// Self-supervised pretraining: per step, encode a batch of context
// windows, share one reparameterized h per window, predict every next
// state in the window, and regress the squared error.
PretrainResult pretrain_encoder(BeliefEncoder& enc, const data::Dataset& dataset, int k_steps,
                                int context_len, int batch, double lr, std::uint64_t seed);

// Loss + full analytic gradient for one batch of windows (exposed for
// gradient checking).
double pretrain_loss_and_grad(const BeliefEncoder& enc,
                              const std::vector<std::vector<data::Transition>>& windows,
                              const std::vector<Vec>& noises, VecRef grad);

void save_encoder(const BeliefEncoder& enc, const std::filesystem::path& path,
                  int context_len, std::uint64_t dataset_hash);
BeliefEncoder load_encoder(const std::filesystem::path& path, int* context_len = nullptr);

}  // namespace fbrl::belief
