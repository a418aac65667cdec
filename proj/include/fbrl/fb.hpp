#pragma once

#include "fbrl/belief.hpp"
#include "fbrl/common.hpp"
#include "fbrl/dataset.hpp"
#include "fbrl/nn.hpp"

#include <filesystem>
#include <optional>

namespace fbrl::fb {

enum class Variant { FB, BFB, RFB };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct FbSizes {
  int d = 100;
  int embed_dim = 512;
  std::vector<int> preproc_hidden = {1024, 1024};
  std::vector<int> trunk_hidden = {1024, 1024};
  std::vector<int> b_hidden = {256, 256, 256};
  int ensemble = 2;
};

// Forward-backward representation. Each forward member embeds (s, a) and
// (s, condition) through separate preprocessors, concatenates and maps to
// R^d; the ensemble is aggregated by mean. B maps states to the sphere of
// radius sqrt(d). For BFB/RFB the condition is [h; z], and h never enters B.
struct FbModel {
  Variant variant = Variant::FB;
  double gamma = 0.99;
  int obs_dim = 2;
  int n_actions = 4;
  FbSizes sizes;

  nn::MlpSpec sa_spec, cond_spec, trunk_spec, b_spec;
  Vec online, target;

  int member_count = 0;  // params per forward member
  int b_off = 0;

  int cond_dim() const { return variant == Variant::FB ? sizes.d : 2 * sizes.d; }
  int sa_off(int k) const { return k * member_count; }
  int cond_off(int k) const { return k * member_count + sa_spec.param_count(); }
  int trunk_off(int k) const {
    return k * member_count + sa_spec.param_count() + cond_spec.param_count();
  }
};

FbModel make_fb_model(Variant variant, const FbSizes& sizes, double gamma, std::uint64_t seed,
                      int obs_dim = 2, int n_actions = 4);

// Ensemble-mean forward map over a batch; params selects online or target.
Mat forward_F_params(const FbModel& m, ConstVecRef params, const Mat& S,
                     const Eigen::VectorXi& A, const Mat& Cond);
inline Mat forward_F(const FbModel& m, const Mat& S, const Eigen::VectorXi& A, const Mat& Cond) {
  return forward_F_params(m, m.online, S, A, Cond);
}

Mat forward_B_params(const FbModel& m, ConstVecRef params, const Mat& S,
                     long* degenerate_count = nullptr);
inline Mat backward_B(const FbModel& m, const Mat& S) {
  return forward_B_params(m, m.online, S);
}

// Q(i, a) = <F_mean(s_i, a, cond_i), z_i> for every action.
Mat q_all_actions(const FbModel& m, ConstVecRef params, const Mat& S, const Mat& Cond,
                  const Mat& Z);

// Row-wise argmax of q_all_actions; ties take the lowest action index.
Eigen::VectorXi greedy_actions(const FbModel& m, ConstVecRef params, const Mat& S,
                               const Mat& Cond, const Mat& Z);

// Condition rows: z for FB, [h; z] for BFB/RFB.
Mat make_condition(const FbModel& m, const Mat& Z, const Mat* H);

int greedy_action(const FbModel& m, const Eigen::Vector2d& s, const Vec& z_task,
                  const Vec* h = nullptr);
double q_value(const FbModel& m, const Eigen::Vector2d& s, int a, const Vec& z_task,
               const Vec* h = nullptr);

// Task-vector sampling. FB/BFB mix uniform-sphere and backward-induced
// draws; RFB draws around the per-row context anchor.
struct TaskSample {
  Mat z;
  Mat cond;
};
TaskSample sample_task_vectors(const FbModel& m, int n, const data::Dataset& dataset,
                               const Mat* h_rows, double kappa, double z_mix, Rng& rng,
                               bool rfb_mix = false);

struct FbBatchInputs {
  Mat s;
  Eigen::VectorXi a;
  Mat s_next;
  Mat s_anchor;
  Eigen::VectorXi next_actions;
  Mat z;
  Mat cond;
};

struct FbLossParts {
  double total = 0.0;
  double bellman = 0.0;   // squared anchor-regression term
  double attract = 0.0;   // -2 <F(s,a), B(s')> term
};

// Expanded anchor-regression loss; gradients flow through online F and B
// only. grad may be null for a value-only evaluation.
FbLossParts fb_loss(const FbModel& m, const FbBatchInputs& in, VecRef* grad);

// Per-sample loss kernel: (p - gamma * target_m)^2 - 2n.
inline double fb_pointwise_loss(double p, double target_m, double n, double gamma) {
  double r = p - gamma * target_m;
  return r * r - 2.0 * n;
}

// Exact discounted next-state occupancy of a finite MDP: row (s*A + a)
// gives M(s, a, .).
struct TabularMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<Mat> transition;  // per action, n_states x n_states, rows stochastic
};

struct SuccessorMatrix {
  Mat m;  // (n_states * n_actions) x n_states
  double gamma = 0.0;
};

SuccessorMatrix successor_oracle(const TabularMdp& mdp, const Mat& policy, double gamma);

struct TrainHyper {
  int steps = 1'000'000;
  int batch = 1024;
  double lr = 1e-4;
  double polyak = 0.05;
  double z_mix = 0.5;
  double kappa = 50.0;
  int context_len = 100;
  std::uint64_t seed = 0;
  int log_every = 100;
  bool uniform_policy_backup = false;  // fixed uniform policy instead of greedy backups
  bool rfb_mix = false;
  int h_bank = 8;  // cached context windows per episode when context < episode length
  std::string divergence_checkpoint;
};

struct TrainLog {
  std::vector<std::pair<int, double>> entries;  // (step, loss)
};

TrainLog train_fb(FbModel& model, const data::Dataset& dataset,
                  const belief::BeliefEncoder* encoder, const TrainHyper& hyper);

void save_model(const FbModel& m, const std::filesystem::path& path,
                const nn::AdamState* opt = nullptr);
FbModel load_model(const std::filesystem::path& path, nn::AdamState* opt = nullptr);

void write_model_sidecar(const std::filesystem::path& model_path, int steps,
                         std::uint64_t dataset_hash, std::uint64_t encoder_hash);

}  // namespace fbrl::fb
