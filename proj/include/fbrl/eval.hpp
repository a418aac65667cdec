#pragma once

#include "fbrl/belief.hpp"
#include "fbrl/common.hpp"
#include "fbrl/dataset.hpp"
#include "fbrl/envs.hpp"
#include "fbrl/fb.hpp"

#include <filesystem>
#include <functional>
#include <span>

namespace fbrl::eval {

// Single-goal indicator reward on normalized observations.
struct RewardSpec {
  envs::Coord goal;
  Eigen::Vector2d goal_obs;

  static RewardSpec at(envs::Coord goal, const envs::LayoutSpec& layout) {
    return {goal, data::normalize_obs(goal, layout)};
  }
  double operator()(const Eigen::Vector2d& s) const {
    return (s - goal_obs).cwiseAbs().maxCoeff() < 1e-9 ? 1.0 : 0.0;
  }
};

struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// z_r = mean of reward(s) * B(s) over n_labels states s ~ rho, projected
// to the sphere of radius sqrt(d). Throws CoverageError when the reward is
// zero on every sampled state. raw_out receives the unprojected average.
Vec infer_task_vector(const fb::FbModel& model, const data::Dataset& dataset,
                      const RewardSpec& reward, int n_labels, Rng& rng, Vec* raw_out = nullptr);

// Same inference on a caller-provided label sample.
Vec infer_task_from_states(const fb::FbModel& model, const Mat& states, const RewardSpec& reward,
                           Vec* raw_out = nullptr);

struct RolloutResult {
  std::vector<envs::Coord> trajectory;
  int success = 0;
  double ret = 0.0;
  int steps = 0;
};

RolloutResult rollout(const envs::LayoutSpec& layout, envs::Coord goal,
                      const std::function<int(const envs::EnvState&)>& policy, int horizon,
                      double gamma);

struct EvalRow {
  std::uint64_t layout_seed = 0;
  int goal_index = 0;
  int success = 0;
  double ret = 0.0;
  int episode_len = 0;
  bool coverage_error = false;
};

struct EvalReport {
  std::string split;
  std::vector<EvalRow> rows;
  // run metadata
  std::string variant;
  double kappa = 0.0;
  int context_len = 0;
  int steps = 0;
  std::uint64_t seed = 0;

  double mean_success() const;
  double mean_return() const;
};

// Zero-shot protocol: per layout, one reward-free exploratory trajectory
// of context_len uniform-random steps infers h (skipped for FB), then each
// goal is solved greedily from its inferred task vector.
EvalReport zero_shot_eval(const fb::FbModel& model, const belief::BeliefEncoder* encoder,
                          std::span<const envs::LayoutSpec> layouts,
                          const std::string& split_label, const data::Dataset& rho_source,
                          int context_len, int n_labels, std::uint64_t exploration_seed);

struct InterferenceResult {
  double score = 0.0;                 // in [1/n_actions, 1]
  std::vector<long> action_histogram;
};

// Fraction of uniformly sampled task vectors whose greedy action at s
// agrees with the dominant one.
InterferenceResult interference_score(const fb::FbModel& model, const Eigen::Vector2d& s_obs,
                                      int n_z, const Vec* h, Rng& rng);

struct PcaResult {
  Mat projections;  // n x 2
  bool degenerate = false;
};

// Top-2 principal components (covariance eigenvectors, deterministic sign:
// the largest-magnitude coordinate of each component is positive). Writes
// one {label, pc1, pc2} CSV row per vector.
PcaResult latent_projection_export(const Mat& vectors, std::span<const std::string> labels,
                                   const std::filesystem::path& path);

// End-to-end pipeline: collect -> pretrain encoder -> train -> evaluate.
struct PipelineConfig {
  envs::EnvFamily family = envs::EnvFamily::FourRooms;
  int n_train_layouts = 10;
  int n_test_layouts = 5;
  int episodes_per_layout = 100;
  int episode_len = 100;
  data::PolicySpec policy = data::PolicySpec::uniform();

  fb::Variant variant = fb::Variant::FB;
  fb::FbSizes sizes;
  double gamma = 0.99;

  belief::EncoderSpec encoder;
  int pretrain_steps = 2000;
  int pretrain_batch = 8;
  double pretrain_lr = 1e-4;

  fb::TrainHyper train;

  int context_len = 100;
  double kappa = 50.0;
  int n_labels = 10000;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  EvalReport train_report;
  EvalReport test_report;
};

PipelineResult run_pipeline(const PipelineConfig& config);

struct AblationGrid {
  std::vector<int> context_lens;
  std::vector<double> kappas;
  std::vector<int> n_layouts;
};

struct AblationRow {
  std::string cell;
  std::uint64_t seed = 0;
  std::string split;
  double mean_success = 0.0;
  bool failed = false;
  std::string error;
};

// Full factorial over the grid, n_seeds runs per cell; cell failures are
// recorded and the sweep continues.
std::vector<AblationRow> run_ablation(const AblationGrid& grid, const PipelineConfig& base,
                                      int n_seeds = 3);

void write_report_csv(const std::filesystem::path& path, const std::string& run_id,
                      std::span<const EvalReport> reports);

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);

}  // namespace fbrl::eval
