#include "fbrl/eval.hpp"

#include "fbrl/vmf.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <thread>

namespace fbrl::eval {

namespace {

std::vector<data::Transition> explore_trajectory(const envs::LayoutSpec& layout, int length,
                                                 Rng& rng) {
  std::vector<data::Transition> out;
  out.reserve(static_cast<std::size_t>(length));
  envs::Coord pos = layout.start;
  for (int t = 0; t < length; ++t) {
    int a = rng.uniform_int(envs::kNumActions);
    envs::Coord next = envs::next_pos(layout, pos, a);
    out.push_back({data::normalize_obs(pos, layout), a, data::normalize_obs(next, layout)});
    pos = next;
  }
  return out;
}

}  // namespace

Vec infer_task_from_states(const fb::FbModel& model, const Mat& states, const RewardSpec& reward,
                           Vec* raw_out) {
  std::vector<Eigen::Index> hits;
  for (Eigen::Index i = 0; i < states.rows(); ++i)
    if (reward(states.row(i).transpose()) > 0.0) hits.push_back(i);
  if (hits.empty())
    throw CoverageError("task not represented in rho: reward is zero on all sampled states");
  Mat hit_states(static_cast<Eigen::Index>(hits.size()), states.cols());
  for (std::size_t j = 0; j < hits.size(); ++j) hit_states.row(static_cast<Eigen::Index>(j)) = states.row(hits[j]);
  Mat b = fb::forward_B_params(model, model.online, hit_states);
  Vec raw = b.colwise().sum().transpose() / static_cast<double>(states.rows());
  if (raw_out) *raw_out = raw;
  double norm = raw.norm();
  if (norm < 1e-12) throw CoverageError("task vector is numerically zero");
  return std::sqrt(static_cast<double>(model.sizes.d)) * raw / norm;
}

Vec infer_task_vector(const fb::FbModel& model, const data::Dataset& dataset,
                      const RewardSpec& reward, int n_labels, Rng& rng, Vec* raw_out) {
  Mat states = data::sample_rho_states(dataset, n_labels, rng);
  return infer_task_from_states(model, states, reward, raw_out);
}

RolloutResult rollout(const envs::LayoutSpec& layout, envs::Coord goal,
                      const std::function<int(const envs::EnvState&)>& policy, int horizon,
                      double gamma) {
  RolloutResult r;
  envs::EnvState state = envs::reset(layout);
  r.trajectory.push_back(state.pos);
  if (state.pos == goal) {
    r.success = 1;
    r.ret = 1.0;
    return r;
  }
  envs::LayoutSpec bounded = layout;
  bounded.horizon = horizon;
  for (int t = 0; t < horizon && !state.done; ++t) {
    auto [next, reward] = envs::step(bounded, state, policy(state), goal);
    state = next;
    r.trajectory.push_back(state.pos);
    r.ret += std::pow(gamma, t) * reward;
    r.steps = t + 1;
    if (reward > 0.0) r.success = 1;
  }
  return r;
}

double EvalReport::mean_success() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.success;
  return s / static_cast<double>(rows.size());
}

double EvalReport::mean_return() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ret;
  return s / static_cast<double>(rows.size());
}

EvalReport zero_shot_eval(const fb::FbModel& model, const belief::BeliefEncoder* encoder,
                          std::span<const envs::LayoutSpec> layouts,
                          const std::string& split_label, const data::Dataset& rho_source,
                          int context_len, int n_labels, std::uint64_t exploration_seed) {
  if (model.variant != fb::Variant::FB && !encoder)
    throw std::invalid_argument("zero_shot_eval: BFB/RFB require an encoder");

  EvalReport report;
  report.split = split_label;
  report.variant = fb::variant_name(model.variant);
  report.context_len = context_len;
  report.seed = exploration_seed;

  std::vector<std::vector<EvalRow>> per_layout(layouts.size());
  std::atomic<std::size_t> cursor{0};
  unsigned n_workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                       static_cast<unsigned>(layouts.size())));
  auto worker = [&] {
    for (std::size_t li = cursor.fetch_add(1); li < layouts.size(); li = cursor.fetch_add(1)) {
      const envs::LayoutSpec& layout = layouts[li];
      Rng rng(mix_seed(exploration_seed, layout.layout_seed));

      Vec h;
      const Vec* h_ptr = nullptr;
      if (model.variant != fb::Variant::FB) {
        auto traj = explore_trajectory(layout, context_len, rng);
        h = belief::infer_context(*encoder, traj);
        h_ptr = &h;
      }

      Mat label_states = data::sample_rho_states(rho_source, n_labels, rng);
      for (std::size_t gi = 0; gi < layout.eval_goals.size(); ++gi) {
        EvalRow row;
        row.layout_seed = layout.layout_seed;
        row.goal_index = static_cast<int>(gi);
        envs::Coord goal = layout.eval_goals[gi];
        try {
          Vec z = infer_task_from_states(model, label_states, RewardSpec::at(goal, layout));
          auto policy = [&](const envs::EnvState& st) {
            return fb::greedy_action(model, data::normalize_obs(st.pos, layout), z, h_ptr);
          };
          RolloutResult rr = rollout(layout, goal, policy, layout.horizon, model.gamma);
          row.success = rr.success;
          row.ret = rr.ret;
          row.episode_len = rr.steps;
        } catch (const CoverageError&) {
          row.coverage_error = true;
          row.success = 0;
        }
        per_layout[li].push_back(row);
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  for (auto& rows : per_layout)
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  return report;
}

InterferenceResult interference_score(const fb::FbModel& model, const Eigen::Vector2d& s_obs,
                                      int n_z, const Vec* h, Rng& rng) {
  if (n_z < 100) throw std::invalid_argument("interference_score: n_z must be >= 100");
  const int d = model.sizes.d;
  const double radius = std::sqrt(static_cast<double>(d));
  Mat z(n_z, d);
  for (int i = 0; i < n_z; ++i) z.row(i) = radius * vmf::uniform_sphere(d, rng).transpose();
  Mat s = s_obs.transpose().replicate(n_z, 1);
  Mat h_rows;
  const Mat* h_ptr = nullptr;
  if (model.variant != fb::Variant::FB) {
    if (!h) throw std::invalid_argument("interference_score: BFB/RFB require a context vector");
    h_rows = h->transpose().replicate(n_z, 1);
    h_ptr = &h_rows;
  }
  Mat cond = fb::make_condition(model, z, h_ptr);
  Eigen::VectorXi actions = fb::greedy_actions(model, model.online, s, cond, z);
  InterferenceResult res;
  res.action_histogram.assign(static_cast<std::size_t>(model.n_actions), 0);
  for (int i = 0; i < n_z; ++i) res.action_histogram[static_cast<std::size_t>(actions[i])] += 1;
  long best = *std::max_element(res.action_histogram.begin(), res.action_histogram.end());
  res.score = static_cast<double>(best) / static_cast<double>(n_z);
  return res;
}

PcaResult latent_projection_export(const Mat& vectors, std::span<const std::string> labels,
                                   const std::filesystem::path& path) {
  if (vectors.rows() < 3)
    throw std::invalid_argument("latent_projection_export: need at least 3 vectors");
  if (labels.size() != static_cast<std::size_t>(vectors.rows()))
    throw std::invalid_argument("latent_projection_export: label count mismatch");

  Mat centered = vectors.rowwise() - vectors.colwise().mean();
  Mat cov = centered.transpose() * centered / static_cast<double>(vectors.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Mat> es(cov);

  PcaResult res;
  res.projections = Mat::Zero(vectors.rows(), 2);
  const Eigen::Index dim = cov.rows();
  if (es.eigenvalues()[dim - 1] < 1e-12) {
    res.degenerate = true;
  } else {
    for (int c = 0; c < 2; ++c) {
      Vec pc = es.eigenvectors().col(dim - 1 - c);
      Eigen::Index imax;
      pc.cwiseAbs().maxCoeff(&imax);
      if (pc[imax] < 0.0) pc = -pc;
      res.projections.col(c) = centered * pc;
    }
  }

  std::ofstream out(path);
  if (!out) throw std::runtime_error("latent_projection_export: cannot open " + path.string());
  out << "label,pc1,pc2\n";
  char buf[80];
  for (Eigen::Index i = 0; i < res.projections.rows(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g", res.projections(i, 0), res.projections(i, 1));
    out << labels[static_cast<std::size_t>(i)] << ',' << buf << '\n';
  }
  return res;
}

PipelineResult run_pipeline(const PipelineConfig& config) {
  data::Dataset dataset =
      data::collect_dataset(config.family, config.n_train_layouts, config.episodes_per_layout,
                            config.episode_len, config.policy, mix_seed(config.seed, 0xDA7A));

  belief::BeliefEncoder encoder;
  const belief::BeliefEncoder* encoder_ptr = nullptr;
  if (config.variant != fb::Variant::FB) {
    belief::EncoderSpec espec = config.encoder;
    espec.d_h = config.sizes.d;
    encoder = belief::make_encoder(espec, mix_seed(config.seed, 0xE5C0DE));
    belief::pretrain_encoder(encoder, dataset, config.pretrain_steps, config.context_len,
                             config.pretrain_batch, config.pretrain_lr,
                             mix_seed(config.seed, 0x9AE7));
    encoder_ptr = &encoder;
  }

  fb::FbModel model = fb::make_fb_model(config.variant, config.sizes, config.gamma,
                                        mix_seed(config.seed, 0x300D));
  fb::TrainHyper hyper = config.train;
  hyper.kappa = config.kappa;
  hyper.context_len = config.context_len;
  hyper.seed = mix_seed(config.seed, 0x7301);
  fb::train_fb(model, dataset, encoder_ptr, hyper);

  std::vector<envs::LayoutSpec> train_layouts, test_layouts;
  for (int i = 0; i < config.n_train_layouts; ++i)
    train_layouts.push_back(envs::generate_layout(config.family, static_cast<std::uint64_t>(i)));
  for (int i = 0; i < config.n_test_layouts; ++i)
    test_layouts.push_back(envs::generate_layout(
        config.family, static_cast<std::uint64_t>(config.n_train_layouts + i)));

  PipelineResult result;
  result.train_report = zero_shot_eval(model, encoder_ptr, train_layouts, "train", dataset,
                                       config.context_len, config.n_labels,
                                       mix_seed(config.seed, 0xE7A1));
  result.test_report = zero_shot_eval(model, encoder_ptr, test_layouts, "test", dataset,
                                      config.context_len, config.n_labels,
                                      mix_seed(config.seed, 0xE7A2));
  result.train_report.kappa = config.kappa;
  result.test_report.kappa = config.kappa;
  result.train_report.steps = config.train.steps;
  result.test_report.steps = config.train.steps;
  return result;
}

std::vector<AblationRow> run_ablation(const AblationGrid& grid, const PipelineConfig& base,
                                      int n_seeds) {
  auto context_lens = grid.context_lens.empty() ? std::vector<int>{base.context_len}
                                                : grid.context_lens;
  auto kappas = grid.kappas.empty() ? std::vector<double>{base.kappa} : grid.kappas;
  auto layout_counts = grid.n_layouts.empty() ? std::vector<int>{base.n_train_layouts}
                                              : grid.n_layouts;

  std::vector<AblationRow> rows;
  for (int T : context_lens) {
    for (double kappa : kappas) {
      for (int n_layouts : layout_counts) {
        std::string cell = "T=" + std::to_string(T) + ",kappa=" + std::to_string(kappa) +
                           ",n_layouts=" + std::to_string(n_layouts);
        for (int s = 0; s < n_seeds; ++s) {
          PipelineConfig cfg = base;
          cfg.context_len = T;
          cfg.kappa = kappa;
          cfg.n_train_layouts = n_layouts;
          cfg.seed = mix_seed(base.seed, static_cast<std::uint64_t>(s) + 1);
          try {
            PipelineResult res = run_pipeline(cfg);
            rows.push_back({cell, cfg.seed, "train", res.train_report.mean_success(), false, ""});
            rows.push_back({cell, cfg.seed, "test", res.test_report.mean_success(), false, ""});
          } catch (const std::exception& e) {
            rows.push_back({cell, cfg.seed, "train", 0.0, true, e.what()});
            rows.push_back({cell, cfg.seed, "test", 0.0, true, e.what()});
          }
        }
      }
    }
  }
  return rows;
}

void write_report_csv(const std::filesystem::path& path, const std::string& run_id,
                      std::span<const EvalReport> reports) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path.string());
  out << "run_id,variant,split,layout_seed,goal_index,success,return,steps,seed,kappa,context_len\n";
  char buf[64];
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      std::snprintf(buf, sizeof(buf), "%.12g", r.ret);
      out << run_id << ',' << rep.variant << ',' << rep.split << ',' << r.layout_seed << ','
          << r.goal_index << ',' << r.success << ',' << buf << ',' << r.episode_len << ','
          << rep.seed << ',' << rep.kappa << ',' << rep.context_len << '\n';
    }
  }
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_ablation_csv: cannot open " + path.string());
  out << "cell,seed,split,mean_success,failed,error\n";
  for (const auto& r : rows)
    out << '"' << r.cell << "\"," << r.seed << ',' << r.split << ',' << r.mean_success << ','
        << (r.failed ? 1 : 0) << ",\"" << r.error << "\"\n";
}

}  // namespace fbrl::eval
