#pragma once

#include "fbrl/common.hpp"

#include <functional>
#include <vector>

namespace fbrl::nn {

enum class Act { None, Tanh, GeLU };

// Feedforward network. When first_layer_norm is set the first hidden layer
// is Linear -> LayerNorm -> Tanh; remaining hidden layers use hidden_act;
// the output layer is always linear.
struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  Act hidden_act = Act::GeLU;
  bool first_layer_norm = true;

  int n_linear() const { return static_cast<int>(hidden.size()) + 1; }
  std::vector<int> dims() const;
  int param_count() const;
};

struct MlpCache {
  Mat input;
  std::vector<Mat> z;         // pre-activations per linear layer
  std::vector<Mat> a;         // post-activations (a.back() is the network output)
  std::vector<Mat> gelu_erf;  // erf(z/sqrt(2)) for GeLU layers, reused in backward
  Mat ln_xhat;                // layer-norm internals for the first layer
  Vec ln_inv_std;
};

Vec init_mlp_params(const MlpSpec& spec, Rng& rng);

Mat mlp_forward(const MlpSpec& spec, ConstVecRef params, const Mat& X,
                MlpCache* cache = nullptr);

// Allocation-free on reuse: the returned reference lives in the cache.
const Mat& mlp_forward_cached(const MlpSpec& spec, ConstVecRef params, const Mat& X,
                              MlpCache& cache);

// Accumulates parameter gradients into grad (+=). If dX is non-null it
// receives the gradient w.r.t. the input batch.
void mlp_backward(const MlpSpec& spec, ConstVecRef params, const MlpCache& cache,
                  const Eigen::Ref<const Mat>& dY, VecRef grad, Mat* dX = nullptr);

// Multi-head self-attention block (pre-norm, residual, GeLU feedforward).
// No positional encodings: the block is permutation-equivariant, and the
// internal token order is canonicalized so the equivariance holds bitwise.
struct AttentionSpec {
  int width = 128;
  int heads = 4;
  int ff_dim = 256;

  int head_dim() const { return width / heads; }
  int param_count() const;
};

struct AttnCache {
  std::vector<int> perm;  // canonical token order
  Mat x_sorted;
  Mat u1, u1_xhat;  // first layer-norm
  Vec u1_inv_std;
  Mat q, k, v;
  std::vector<Mat> attn;  // softmax weights per head
  Mat heads_out;
  Mat x1;
  Mat u2, u2_xhat;  // second layer-norm
  Vec u2_inv_std;
  Mat ff_z1, ff_a1, ff_erf;
};

Vec init_attention_params(const AttentionSpec& spec, Rng& rng);

// Content-determined total order over matrix rows (ties broken by bit
// pattern); used to canonicalize token sets before order-sensitive
// reductions.
std::vector<int> lexicographic_row_order(const Mat& m);

Mat attention_forward(const AttentionSpec& spec, ConstVecRef params, const Mat& tokens,
                      AttnCache* cache = nullptr);

void attention_backward(const AttentionSpec& spec, ConstVecRef params, const AttnCache& cache,
                        const Mat& dY, VecRef grad, Mat* dTokens = nullptr);

struct AdamState {
  Vec m;
  Vec v;
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState make(int n, double lr);
};

// Standard bias-corrected Adam update; throws on non-finite gradients.
void adam_step(AdamState& state, VecRef params, ConstVecRef grads);

// target <- (1 - coeff) * target + coeff * online
void polyak_update(VecRef target, ConstVecRef online, double coeff);

// Central-difference check of analytic_grad over a random subset of at
// least min(n_coords, dim) coordinates; returns the max relative error.
double grad_check(const std::function<double(const Vec&)>& loss, const Vec& params,
                  const Vec& analytic_grad, double eps, int n_coords, Rng& rng);

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) +
         x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

inline constexpr double kLayerNormEps = 1e-5;

}  // namespace fbrl::nn
