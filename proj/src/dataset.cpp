#include "fbrl/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <thread>

namespace fbrl::data {

namespace {

using nlohmann::json;

// 17 significant digits: exact double round-trip.
void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.16e", v);
  out += buf;
}

std::vector<EpisodeRecord> collect_for_layout(const envs::LayoutSpec& layout,
                                              int episodes_per_layout, int episode_len,
                                              PolicySpec policy, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  std::vector<EpisodeRecord> out;
  out.reserve(static_cast<std::size_t>(episodes_per_layout));
  for (int e = 0; e < episodes_per_layout; ++e) {
    EpisodeRecord ep;
    ep.layout_seed = layout.layout_seed;
    ep.env_family = layout.env_family;
    ep.obs.resize(episode_len + 1, 2);
    ep.actions.resize(static_cast<std::size_t>(episode_len));
    envs::Coord pos = layout.start;
    ep.obs.row(0) = normalize_obs(pos, layout).transpose();
    std::optional<int> last;
    for (int t = 0; t < episode_len; ++t) {
      int a = policy.kind == PolicySpec::Kind::Sticky
                  ? sticky_random_policy(rng, policy.repeat_prob, last)
                  : rng.uniform_int(envs::kNumActions);
      last = a;
      pos = envs::next_pos(layout, pos, a);
      ep.actions[static_cast<std::size_t>(t)] = static_cast<std::uint8_t>(a);
      ep.obs.row(t + 1) = normalize_obs(pos, layout).transpose();
    }
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace

Eigen::Vector2d normalize_obs(envs::Coord c, const envs::LayoutSpec& layout) {
  return {static_cast<double>(c.x) / (layout.width - 1),
          static_cast<double>(c.y) / (layout.height - 1)};
}

envs::Coord denormalize_obs(const Eigen::Vector2d& obs, const envs::LayoutSpec& layout) {
  return {static_cast<int>(std::lround(obs.x() * (layout.width - 1))),
          static_cast<int>(std::lround(obs.y() * (layout.height - 1)))};
}

std::int64_t Dataset::total_transitions() const {
  std::int64_t n = 0;
  for (const auto& ep : episodes) n += ep.length();
  return n;
}

void Dataset::rebuild_index() {
  prefix.resize(episodes.size() + 1);
  prefix[0] = 0;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    prefix[i + 1] = prefix[i] + episodes[i].length();
}

std::pair<int, int> Dataset::locate(std::int64_t flat) const {
  auto it = std::upper_bound(prefix.begin(), prefix.end(), flat);
  int ep = static_cast<int>(std::distance(prefix.begin(), it)) - 1;
  return {ep, static_cast<int>(flat - prefix[static_cast<std::size_t>(ep)])};
}

int sticky_random_policy(Rng& rng, double repeat_prob, std::optional<int> last_action) {
  if (repeat_prob < 0.0 || repeat_prob >= 1.0)
    throw std::invalid_argument("repeat_prob must be in [0,1)");
  if (last_action && rng.bernoulli(repeat_prob)) return *last_action;
  return rng.uniform_int(envs::kNumActions);
}

Dataset collect_dataset(envs::EnvFamily family, int n_layouts, int episodes_per_layout,
                        int episode_len, PolicySpec policy, std::uint64_t collection_seed) {
  std::vector<envs::LayoutSpec> layouts;
  layouts.reserve(static_cast<std::size_t>(n_layouts));
  for (int i = 0; i < n_layouts; ++i)
    layouts.push_back(envs::generate_layout(family, static_cast<std::uint64_t>(i)));
  Dataset d = collect_dataset_from_layouts(layouts, episodes_per_layout, episode_len, policy,
                                           collection_seed);
  d.manifest.n_layouts = n_layouts;
  return d;
}

Dataset collect_dataset_from_layouts(std::span<const envs::LayoutSpec> layouts,
                                     int episodes_per_layout, int episode_len,
                                     PolicySpec policy, std::uint64_t collection_seed) {
  if (layouts.empty() || episodes_per_layout <= 0 || episode_len <= 0)
    throw std::invalid_argument("collect_dataset: parameters must be positive");

  // Independent seeded stream per layout; merge order is by layout index,
  // so the result does not depend on thread scheduling.
  std::vector<std::vector<EpisodeRecord>> per_layout(layouts.size());
  unsigned n_workers = std::min<unsigned>(std::thread::hardware_concurrency(),
                                          static_cast<unsigned>(layouts.size()));
  n_workers = std::max(1u, n_workers);
  std::vector<std::thread> workers;
  std::atomic<std::size_t> cursor{0};
  for (unsigned w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = cursor.fetch_add(1); i < layouts.size(); i = cursor.fetch_add(1)) {
        per_layout[i] = collect_for_layout(layouts[i], episodes_per_layout, episode_len,
                                           policy, mix_seed(collection_seed, i));
      }
    });
  }
  for (auto& t : workers) t.join();

  Dataset d;
  d.manifest.env_family = layouts[0].env_family;
  d.manifest.n_layouts = static_cast<int>(layouts.size());
  d.manifest.episodes_per_layout = episodes_per_layout;
  d.manifest.episode_len = episode_len;
  d.manifest.collection_seed = collection_seed;
  for (auto& eps : per_layout)
    for (auto& ep : eps) d.episodes.push_back(std::move(ep));
  d.manifest.total_transitions = d.total_transitions();
  d.rebuild_index();
  return d;
}

Batch sample_batch(const Dataset& dataset, int batch_size, Rng& rng) {
  std::int64_t n = dataset.total_transitions();
  if (n == 0) throw std::runtime_error("sample_batch: empty dataset");
  Batch b;
  b.s.resize(batch_size, 2);
  b.s_next.resize(batch_size, 2);
  b.s_anchor.resize(batch_size, 2);
  b.a.resize(batch_size);
  b.episode_index.resize(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    auto [ep, t] = dataset.locate(rng.uniform_int64(n));
    const EpisodeRecord& rec = dataset.episodes[static_cast<std::size_t>(ep)];
    b.s.row(i) = rec.obs.row(t);
    b.a[i] = rec.actions[static_cast<std::size_t>(t)];
    b.s_next.row(i) = rec.obs.row(t + 1);
    b.episode_index[static_cast<std::size_t>(i)] = ep;
    auto [aep, at] = dataset.locate(rng.uniform_int64(n));
    b.s_anchor.row(i) = dataset.episodes[static_cast<std::size_t>(aep)].obs.row(at + 1);
  }
  return b;
}

Mat sample_rho_states(const Dataset& dataset, int n, Rng& rng) {
  std::int64_t total = dataset.total_transitions();
  if (total == 0) throw std::runtime_error("sample_rho_states: empty dataset");
  Mat out(n, 2);
  for (int i = 0; i < n; ++i) {
    auto [ep, t] = dataset.locate(rng.uniform_int64(total));
    out.row(i) = dataset.episodes[static_cast<std::size_t>(ep)].obs.row(t + 1);
  }
  return out;
}

ContextWindow sample_context_window(const Dataset& dataset, int window_len, Rng& rng) {
  if (dataset.episodes.empty()) throw std::runtime_error("sample_context_window: empty dataset");
  int ep = rng.uniform_int(static_cast<int>(dataset.episodes.size()));
  const EpisodeRecord& rec = dataset.episodes[static_cast<std::size_t>(ep)];
  if (window_len > rec.length())
    throw std::invalid_argument("sample_context_window: window_len exceeds episode length");
  int offset = rng.uniform_int(rec.length() - window_len + 1);
  ContextWindow w;
  w.layout_seed = rec.layout_seed;
  w.episode_index = ep;
  w.offset = offset;
  w.transitions.reserve(static_cast<std::size_t>(window_len));
  for (int t = offset; t < offset + window_len; ++t) w.transitions.push_back(rec.transition(t));
  return w;
}

namespace {

std::map<std::uint64_t, envs::LayoutSpec> resolve_layouts(
    const Dataset& dataset, std::span<const envs::LayoutSpec> provided) {
  std::map<std::uint64_t, envs::LayoutSpec> out;
  for (const auto& l : provided) out[l.layout_seed] = l;
  for (const auto& ep : dataset.episodes)
    if (!out.count(ep.layout_seed))
      out[ep.layout_seed] = envs::generate_layout(ep.env_family, ep.layout_seed);
  return out;
}

}  // namespace

CoverageGrids coverage_heatmap(const Dataset& dataset, std::span<const envs::LayoutSpec> provided) {
  CoverageGrids g;
  std::map<std::uint64_t, envs::LayoutSpec> layouts = resolve_layouts(dataset, provided);
  int w = 0, h = 0;
  for (const auto& [seed, l] : layouts) {
    w = l.width;
    h = l.height;
  }
  g.pooled = Eigen::MatrixXi::Zero(h, w);
  for (const auto& ep : dataset.episodes) {
    const envs::LayoutSpec& layout = layouts[ep.layout_seed];
    auto [it, fresh] = g.per_layout.try_emplace(ep.layout_seed);
    if (fresh) it->second = Eigen::MatrixXi::Zero(h, w);
    for (int t = 0; t < ep.obs.rows(); ++t) {
      envs::Coord c = denormalize_obs(ep.obs.row(t).transpose(), layout);
      it->second(c.y, c.x) += 1;
      g.pooled(c.y, c.x) += 1;
    }
  }
  return g;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path.string());
  json m;
  m["env_family"] = envs::family_name(dataset.manifest.env_family);
  m["n_layouts"] = dataset.manifest.n_layouts;
  m["episodes_per_layout"] = dataset.manifest.episodes_per_layout;
  m["episode_len"] = dataset.manifest.episode_len;
  m["collection_seed"] = dataset.manifest.collection_seed;
  m["total_transitions"] = dataset.manifest.total_transitions;
  m["obs_norm"] = dataset.manifest.obs_norm;
  out << m.dump() << '\n';

  std::string line;
  for (const auto& ep : dataset.episodes) {
    line.clear();
    line += "{\"layout_seed\":" + std::to_string(ep.layout_seed);
    line += ",\"env_family\":\"" + envs::family_name(ep.env_family) + "\"";
    line += ",\"obs\":[";
    for (int t = 0; t < ep.obs.rows(); ++t) {
      if (t) line += ',';
      line += '[';
      append_double(line, ep.obs(t, 0));
      line += ',';
      append_double(line, ep.obs(t, 1));
      line += ']';
    }
    line += "],\"actions\":[";
    for (std::size_t i = 0; i < ep.actions.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(static_cast<int>(ep.actions[i]));
    }
    line += "]}";
    out << line << '\n';
  }
  if (!out) throw std::runtime_error("save_dataset: write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path.string());
  std::string line;
  int line_no = 1;
  if (!std::getline(in, line))
    throw std::runtime_error("load_dataset: missing manifest at line 1");

  Dataset d;
  try {
    json m = json::parse(line);
    d.manifest.env_family = envs::family_from_name(m.at("env_family").get<std::string>());
    d.manifest.n_layouts = m.at("n_layouts").get<int>();
    d.manifest.episodes_per_layout = m.at("episodes_per_layout").get<int>();
    d.manifest.episode_len = m.at("episode_len").get<int>();
    d.manifest.collection_seed = m.at("collection_seed").get<std::uint64_t>();
    d.manifest.total_transitions = m.at("total_transitions").get<std::int64_t>();
    d.manifest.obs_norm = m.at("obs_norm").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: parse error at line 1: " + std::string(e.what()));
  }

  std::map<std::uint64_t, int> episodes_per_seed;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    EpisodeRecord ep;
    try {
      json j = json::parse(line);
      ep.layout_seed = j.at("layout_seed").get<std::uint64_t>();
      ep.env_family = envs::family_from_name(j.at("env_family").get<std::string>());
      const auto& obs = j.at("obs");
      const auto& actions = j.at("actions");
      ep.obs.resize(static_cast<Eigen::Index>(obs.size()), 2);
      for (std::size_t t = 0; t < obs.size(); ++t) {
        ep.obs(static_cast<Eigen::Index>(t), 0) = obs[t][0].get<double>();
        ep.obs(static_cast<Eigen::Index>(t), 1) = obs[t][1].get<double>();
      }
      ep.actions.reserve(actions.size());
      for (const auto& a : actions) {
        int v = a.get<int>();
        if (v < 0 || v >= envs::kNumActions)
          throw std::runtime_error("action out of range");
        ep.actions.push_back(static_cast<std::uint8_t>(v));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("load_dataset: parse error at line " + std::to_string(line_no) +
                               ": " + e.what());
    }
    if (ep.obs.rows() != static_cast<Eigen::Index>(ep.actions.size()) + 1)
      throw std::runtime_error("load_dataset: integrity error at line " +
                               std::to_string(line_no) + ": obs/actions length mismatch");
    if (ep.length() != d.manifest.episode_len)
      throw std::runtime_error("load_dataset: integrity error at line " +
                               std::to_string(line_no) + ": episode length differs from manifest");
    episodes_per_seed[ep.layout_seed] += 1;
    d.episodes.push_back(std::move(ep));
  }

  if (d.total_transitions() != d.manifest.total_transitions)
    throw std::runtime_error("load_dataset: integrity error: total_transitions mismatch");
  for (const auto& [seed, count] : episodes_per_seed) {
    if (count != d.manifest.episodes_per_layout)
      throw std::runtime_error("load_dataset: integrity error: layout " + std::to_string(seed) +
                               " has " + std::to_string(count) + " episodes, manifest declares " +
                               std::to_string(d.manifest.episodes_per_layout));
  }
  d.rebuild_index();
  return d;
}

bool audit_dynamics(const Dataset& dataset, std::span<const envs::LayoutSpec> provided) {
  std::map<std::uint64_t, envs::LayoutSpec> layouts = resolve_layouts(dataset, provided);
  for (const auto& ep : dataset.episodes) {
    const envs::LayoutSpec& layout = layouts.at(ep.layout_seed);
    envs::Coord pos = layout.start;
    if ((ep.obs.row(0).transpose() - normalize_obs(pos, layout)).norm() != 0.0) return false;
    for (int t = 0; t < ep.length(); ++t) {
      pos = envs::next_pos(layout, pos, ep.actions[static_cast<std::size_t>(t)]);
      if ((ep.obs.row(t + 1).transpose() - normalize_obs(pos, layout)).norm() != 0.0)
        return false;
    }
  }
  return true;
}

}  // namespace fbrl::data
