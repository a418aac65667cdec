#pragma once

#include "fbrl/common.hpp"
#include "fbrl/envs.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

namespace fbrl::data {

// Observations are cell coordinates scaled to [0,1]^2: (x,y)/(w-1,h-1).
Eigen::Vector2d normalize_obs(envs::Coord c, const envs::LayoutSpec& layout);
envs::Coord denormalize_obs(const Eigen::Vector2d& obs, const envs::LayoutSpec& layout);

struct Transition {
  Eigen::Vector2d s;
  int a = 0;
  Eigen::Vector2d s_next;
};

struct EpisodeRecord {
  std::uint64_t layout_seed = 0;
  envs::EnvFamily env_family = envs::EnvFamily::Doors;
  Mat obs;                            // (length+1) x 2
  std::vector<std::uint8_t> actions;  // length

  int length() const { return static_cast<int>(actions.size()); }
  Transition transition(int t) const {
    return {obs.row(t).transpose(), actions[static_cast<std::size_t>(t)],
            obs.row(t + 1).transpose()};
  }
};

struct Manifest {
  envs::EnvFamily env_family = envs::EnvFamily::Doors;
  int n_layouts = 0;
  int episodes_per_layout = 0;
  int episode_len = 0;
  std::uint64_t collection_seed = 0;
  std::int64_t total_transitions = 0;
  std::string obs_norm = "xy/(dims-1)";
};

struct Dataset {
  Manifest manifest;
  std::vector<EpisodeRecord> episodes;

  std::int64_t total_transitions() const;
  // Maps a flat transition index to (episode, step).
  std::pair<int, int> locate(std::int64_t flat) const;
  void rebuild_index();

  std::vector<std::int64_t> prefix;  // cumulative episode lengths
};

struct PolicySpec {
  enum class Kind { UniformRandom, Sticky };
  Kind kind = Kind::UniformRandom;
  double repeat_prob = 0.0;

  static PolicySpec uniform() { return {Kind::UniformRandom, 0.0}; }
  static PolicySpec sticky(double p) { return {Kind::Sticky, p}; }
};

int sticky_random_policy(Rng& rng, double repeat_prob, std::optional<int> last_action);

Dataset collect_dataset(envs::EnvFamily family, int n_layouts, int episodes_per_layout,
                        int episode_len, PolicySpec policy, std::uint64_t collection_seed);

// Same collection loop over caller-provided layouts (test plumbing).
Dataset collect_dataset_from_layouts(std::span<const envs::LayoutSpec> layouts,
                                     int episodes_per_layout, int episode_len,
                                     PolicySpec policy, std::uint64_t collection_seed);

struct Batch {
  Mat s;             // batch x 2
  Eigen::VectorXi a;
  Mat s_next;
  Mat s_anchor;      // anchors drawn from the next-state pool (rho)
  std::vector<int> episode_index;
};

Batch sample_batch(const Dataset& dataset, int batch_size, Rng& rng);

// n states drawn i.i.d. from rho (the next-state pool).
Mat sample_rho_states(const Dataset& dataset, int n, Rng& rng);

struct ContextWindow {
  std::vector<Transition> transitions;
  std::uint64_t layout_seed = 0;
  int episode_index = 0;
  int offset = 0;
};

ContextWindow sample_context_window(const Dataset& dataset, int window_len, Rng& rng);

struct CoverageGrids {
  std::map<std::uint64_t, Eigen::MatrixXi> per_layout;  // [y][x] visit counts
  Eigen::MatrixXi pooled;
};

// Layouts are regenerated from (env_family, layout_seed) unless the caller
// provides them (needed for hand-built layouts).
CoverageGrids coverage_heatmap(const Dataset& dataset,
                               std::span<const envs::LayoutSpec> layouts = {});

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Re-simulates every episode under its recorded layout; true only if all
// transitions match the environment dynamics exactly.
bool audit_dynamics(const Dataset& dataset, std::span<const envs::LayoutSpec> layouts = {});

}  // namespace fbrl::data
