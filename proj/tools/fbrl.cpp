// Command-line entry point: dataset generation, encoder pretraining, FB
// training, zero-shot evaluation, ablation sweeps and visualization-data
// export, with reproducible seeded runs and per-run manifests.

#include "fbrl/checkpoint.hpp"
#include "fbrl/dataset.hpp"
#include "fbrl/envs.hpp"
#include "fbrl/eval.hpp"
#include "fbrl/fb.hpp"
#include "fbrl/vmf.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fbrl;

namespace {

constexpr const char* kVersion = "fbrl 0.1.0";

struct RunConfig {
  // environment / data
  std::string env = "fourrooms";
  int n_layouts = 30;
  int n_test_layouts = 20;
  int episodes_per_layout = 250;
  int episode_len = 100;
  double sticky_prob = -1.0;  // <0: family default (0.5 pointmass, else 0)

  // model / training (paper-table defaults)
  std::string variant = "fb";
  int d = 100;
  int steps = 1000000;
  int batch = 1024;
  double lr = 1e-4;
  double discount = -1.0;  // <0: 0.99, 0.98 for pointmass
  double polyak = 0.05;
  double kappa = -1.0;  // <0: 50, 100 for pointmass
  double z_mix = 0.5;
  int context_len = 100;
  int n_z_labels = 10000;

  // network sizes
  int embed_dim = 512;
  std::vector<int> preproc_hidden = {1024, 1024};
  std::vector<int> trunk_hidden = {1024, 1024};
  std::vector<int> b_hidden = {256, 256, 256};
  int ensemble = 2;

  // encoder
  int encoder_width = 128;
  int encoder_heads = 4;
  int encoder_ff = 256;
  int encoder_blocks = 2;
  double beta_kl = 0.0;
  int pretrain_steps = 5000;
  int pretrain_batch = 16;

  // grids for ablate
  std::vector<int> grid_context_len;
  std::vector<double> grid_kappa;
  std::vector<int> grid_n_layouts;
  int ablation_seeds = 3;

  // io
  std::string dataset_path;
  std::string encoder_path;
  std::string model_path;
  std::string split = "both";
  std::uint64_t seed = 0;
  std::string out = "out";
  std::uint64_t layout_seed = 0;
  int log_every = 100;
  bool dry_run = false;

  void resolve_family_defaults() {
    bool pm = env == "pointmass";
    if (discount < 0.0) discount = pm ? 0.98 : 0.99;
    if (kappa < 0.0) kappa = pm ? 100.0 : 50.0;
    if (sticky_prob < 0.0) sticky_prob = pm ? 0.5 : 0.0;
  }

  json to_json() const {
    json j;
    j["env"] = env;
    j["n_layouts"] = n_layouts;
    j["n_test_layouts"] = n_test_layouts;
    j["episodes_per_layout"] = episodes_per_layout;
    j["episode_len"] = episode_len;
    j["sticky_prob"] = sticky_prob;
    j["variant"] = variant;
    j["d"] = d;
    j["steps"] = steps;
    j["batch"] = batch;
    j["lr"] = lr;
    j["discount"] = discount;
    j["polyak"] = polyak;
    j["kappa"] = kappa;
    j["z_mix"] = z_mix;
    j["context_len"] = context_len;
    j["n_z_labels"] = n_z_labels;
    j["embed_dim"] = embed_dim;
    j["preproc_hidden"] = preproc_hidden;
    j["trunk_hidden"] = trunk_hidden;
    j["b_hidden"] = b_hidden;
    j["ensemble"] = ensemble;
    j["encoder_width"] = encoder_width;
    j["encoder_heads"] = encoder_heads;
    j["encoder_ff"] = encoder_ff;
    j["encoder_blocks"] = encoder_blocks;
    j["beta_kl"] = beta_kl;
    j["pretrain_steps"] = pretrain_steps;
    j["pretrain_batch"] = pretrain_batch;
    j["dataset"] = dataset_path;
    j["encoder"] = encoder_path;
    j["model"] = model_path;
    j["split"] = split;
    j["seed"] = seed;
    j["out"] = out;
    return j;
  }
};

fb::FbSizes sizes_from(const RunConfig& c) {
  fb::FbSizes s;
  s.d = c.d;
  s.embed_dim = c.embed_dim;
  s.preproc_hidden = c.preproc_hidden;
  s.trunk_hidden = c.trunk_hidden;
  s.b_hidden = c.b_hidden;
  s.ensemble = c.ensemble;
  return s;
}

void write_run_manifest(const RunConfig& c, const std::string& command) {
  fs::create_directories(c.out);
  json cfg = c.to_json();
  {
    std::ofstream out(fs::path(c.out) / "config.json");
    out << cfg.dump(2) << '\n';
  }
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["config_hash"] = fnv1a64(cfg.dump());
  json hashes;
  for (const auto& [name, path] :
       {std::pair{"dataset", c.dataset_path}, {"encoder", c.encoder_path},
        {"model", c.model_path}}) {
    if (!path.empty() && fs::exists(path)) hashes[name] = io::hash_file(path);
  }
  m["input_hashes"] = hashes;
  std::ofstream out(fs::path(c.out) / "manifest.json");
  out << m.dump(2) << '\n';
}

void write_loss_csv(const fs::path& path, const std::vector<std::pair<int, double>>& entries) {
  std::ofstream out(path);
  out << "step,loss\n";
  for (const auto& [step, loss] : entries) out << step << ',' << loss << '\n';
}

int cmd_gen_data(RunConfig& c) {
  c.resolve_family_defaults();
  write_run_manifest(c, "gen-data");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  data::PolicySpec policy = c.sticky_prob > 0.0 ? data::PolicySpec::sticky(c.sticky_prob)
                                                : data::PolicySpec::uniform();
  data::Dataset ds = data::collect_dataset(envs::family_from_name(c.env), c.n_layouts,
                                           c.episodes_per_layout, c.episode_len, policy, c.seed);
  fs::path out = fs::path(c.out) / "dataset.jsonl";
  data::save_dataset(ds, out);
  std::cout << "wrote " << out.string() << " (" << ds.manifest.total_transitions
            << " transitions, " << ds.episodes.size() << " episodes)\n";
  return 0;
}

int cmd_pretrain_encoder(RunConfig& c) {
  c.resolve_family_defaults();
  write_run_manifest(c, "pretrain-encoder");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  data::Dataset ds = data::load_dataset(c.dataset_path);
  belief::EncoderSpec spec;
  spec.width = c.encoder_width;
  spec.heads = c.encoder_heads;
  spec.ff_dim = c.encoder_ff;
  spec.n_blocks = c.encoder_blocks;
  spec.d_h = c.d;
  spec.beta_kl = c.beta_kl;
  belief::BeliefEncoder enc = belief::make_encoder(spec, c.seed);
  auto result = belief::pretrain_encoder(enc, ds, c.pretrain_steps, c.context_len,
                                         c.pretrain_batch, c.lr, c.seed);
  fs::path out = fs::path(c.out) / "encoder.ckpt";
  belief::save_encoder(enc, out, c.context_len, io::hash_file(c.dataset_path));
  std::vector<std::pair<int, double>> entries;
  for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
    entries.emplace_back(static_cast<int>(i), result.loss_curve[i]);
  write_loss_csv(fs::path(c.out) / "pretrain_loss.csv", entries);
  std::cout << "wrote " << out.string();
  if (!result.loss_curve.empty())
    std::cout << " (final loss " << result.loss_curve.back() << ")";
  std::cout << '\n';
  return 0;
}

int cmd_train(RunConfig& c) {
  data::Dataset ds = data::load_dataset(c.dataset_path);
  c.env = envs::family_name(ds.manifest.env_family);
  c.resolve_family_defaults();
  write_run_manifest(c, "train");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  fb::Variant variant = fb::variant_from_name(c.variant);

  belief::BeliefEncoder enc;
  const belief::BeliefEncoder* enc_ptr = nullptr;
  int encoder_context = 0;
  if (variant != fb::Variant::FB) {
    enc = belief::load_encoder(c.encoder_path, &encoder_context);
    enc_ptr = &enc;
  }

  fb::FbModel model = fb::make_fb_model(variant, sizes_from(c), c.discount, c.seed);
  fb::TrainHyper hyper;
  hyper.steps = c.steps;
  hyper.batch = c.batch;
  hyper.lr = c.lr;
  hyper.polyak = c.polyak;
  hyper.z_mix = c.z_mix;
  hyper.kappa = c.kappa;
  hyper.context_len = c.context_len;
  hyper.seed = c.seed;
  hyper.log_every = c.log_every;
  hyper.divergence_checkpoint = (fs::path(c.out) / "model.diverged.ckpt").string();
  fb::TrainLog log = fb::train_fb(model, ds, enc_ptr, hyper);

  fs::path out = fs::path(c.out) / "model.ckpt";
  fb::save_model(model, out);
  fb::write_model_sidecar(out, c.steps, io::hash_file(c.dataset_path),
                          c.encoder_path.empty() ? 0 : io::hash_file(c.encoder_path));
  write_loss_csv(fs::path(c.out) / "train_loss.csv", log.entries);
  std::cout << "wrote " << out.string();
  if (!log.entries.empty()) std::cout << " (final loss " << log.entries.back().second << ")";
  std::cout << '\n';
  return 0;
}

int cmd_eval(RunConfig& c) {
  data::Dataset ds = data::load_dataset(c.dataset_path);
  c.env = envs::family_name(ds.manifest.env_family);
  c.resolve_family_defaults();
  write_run_manifest(c, "eval");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  fb::FbModel model = fb::load_model(c.model_path);

  belief::BeliefEncoder enc;
  const belief::BeliefEncoder* enc_ptr = nullptr;
  if (model.variant != fb::Variant::FB) {
    if (c.encoder_path.empty())
      throw CLI::ValidationError("--encoder", "required for BFB/RFB models");
    int encoder_context = 0;
    enc = belief::load_encoder(c.encoder_path, &encoder_context);
    enc_ptr = &enc;
  }

  envs::EnvFamily family = ds.manifest.env_family;
  int n_train = c.n_layouts > 0 ? c.n_layouts : ds.manifest.n_layouts;
  std::vector<eval::EvalReport> reports;
  auto make_layouts = [&](int lo, int hi) {
    std::vector<envs::LayoutSpec> ls;
    for (int i = lo; i < hi; ++i)
      ls.push_back(envs::generate_layout(family, static_cast<std::uint64_t>(i)));
    return ls;
  };
  if (c.split == "train" || c.split == "both") {
    auto layouts = make_layouts(0, n_train);
    reports.push_back(eval::zero_shot_eval(model, enc_ptr, layouts, "train", ds, c.context_len,
                                           c.n_z_labels, c.seed));
  }
  if (c.split == "test" || c.split == "both") {
    auto layouts = make_layouts(n_train, n_train + c.n_test_layouts);
    reports.push_back(eval::zero_shot_eval(model, enc_ptr, layouts, "test", ds, c.context_len,
                                           c.n_z_labels, c.seed));
  }
  for (auto& r : reports) {
    r.kappa = c.kappa;
    r.steps = c.steps;
  }
  fs::path out = fs::path(c.out) / "eval.csv";
  eval::write_report_csv(out, "eval-" + std::to_string(c.seed), reports);
  json agg;
  for (const auto& r : reports) {
    agg[r.split]["mean_success"] = r.mean_success();
    agg[r.split]["mean_return"] = r.mean_return();
    agg[r.split]["rows"] = r.rows.size();
    std::cout << r.split << ": mean_success=" << r.mean_success()
              << " mean_return=" << r.mean_return() << " (" << r.rows.size() << " rows)\n";
  }
  std::ofstream aggf(fs::path(c.out) / "eval_summary.json");
  aggf << agg.dump(2) << '\n';
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int cmd_ablate(RunConfig& c) {
  c.resolve_family_defaults();
  write_run_manifest(c, "ablate");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  eval::PipelineConfig base;
  base.family = envs::family_from_name(c.env);
  base.n_train_layouts = c.n_layouts;
  base.n_test_layouts = c.n_test_layouts;
  base.episodes_per_layout = c.episodes_per_layout;
  base.episode_len = c.episode_len;
  base.policy = c.sticky_prob > 0.0 ? data::PolicySpec::sticky(c.sticky_prob)
                                    : data::PolicySpec::uniform();
  base.variant = fb::variant_from_name(c.variant);
  base.sizes = sizes_from(c);
  base.gamma = c.discount;
  base.encoder.width = c.encoder_width;
  base.encoder.heads = c.encoder_heads;
  base.encoder.ff_dim = c.encoder_ff;
  base.encoder.n_blocks = c.encoder_blocks;
  base.pretrain_steps = c.pretrain_steps;
  base.pretrain_batch = c.pretrain_batch;
  base.pretrain_lr = c.lr;
  base.train.steps = c.steps;
  base.train.batch = c.batch;
  base.train.lr = c.lr;
  base.train.polyak = c.polyak;
  base.train.z_mix = c.z_mix;
  base.context_len = c.context_len;
  base.kappa = c.kappa;
  base.n_labels = c.n_z_labels;
  base.seed = c.seed;

  eval::AblationGrid grid;
  grid.context_lens = c.grid_context_len;
  grid.kappas = c.grid_kappa;
  grid.n_layouts = c.grid_n_layouts;
  auto rows = eval::run_ablation(grid, base, c.ablation_seeds);
  fs::path out = fs::path(c.out) / "ablation.csv";
  eval::write_ablation_csv(out, rows);
  std::cout << "wrote " << out.string() << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_viz_export(RunConfig& c) {
  c.resolve_family_defaults();
  write_run_manifest(c, "viz-export");
  if (c.dry_run) {
    std::cout << c.to_json().dump(2) << '\n';
    return 0;
  }
  data::Dataset ds = data::load_dataset(c.dataset_path);
  fs::path outdir(c.out);

  {
    data::CoverageGrids cov = data::coverage_heatmap(ds);
    std::ofstream out(outdir / "coverage.csv");
    out << "layout_seed,x,y,count\n";
    for (const auto& [seed, grid] : cov.per_layout)
      for (Eigen::Index y = 0; y < grid.rows(); ++y)
        for (Eigen::Index x = 0; x < grid.cols(); ++x)
          out << seed << ',' << x << ',' << y << ',' << grid(y, x) << '\n';
    for (Eigen::Index y = 0; y < cov.pooled.rows(); ++y)
      for (Eigen::Index x = 0; x < cov.pooled.cols(); ++x)
        out << "pooled," << x << ',' << y << ',' << cov.pooled(y, x) << '\n';
    std::cout << "wrote " << (outdir / "coverage.csv").string() << '\n';
  }

  if (!c.encoder_path.empty()) {
    belief::BeliefEncoder enc = belief::load_encoder(c.encoder_path);
    int t = std::min(c.context_len, ds.manifest.episode_len);
    Rng rng(mix_seed(c.seed, 0x71A));
    int n = std::min<int>(500, static_cast<int>(ds.episodes.size()));
    Mat mus(n, enc.spec.d_h);
    std::vector<std::string> labels;
    for (int i = 0; i < n; ++i) {
      auto w = data::sample_context_window(ds, t, rng);
      mus.row(i) = belief::infer_context(enc, w.transitions).transpose();
      labels.push_back(std::to_string(w.layout_seed));
    }
    eval::latent_projection_export(mus, labels, outdir / "pca.csv");
    std::cout << "wrote " << (outdir / "pca.csv").string() << '\n';
  }

  if (!c.model_path.empty()) {
    fb::FbModel model = fb::load_model(c.model_path);
    envs::LayoutSpec layout = envs::generate_layout(ds.manifest.env_family, c.layout_seed);
    Rng rng(mix_seed(c.seed, 0x71B));

    Vec h;
    const Vec* h_ptr = nullptr;
    belief::BeliefEncoder enc;
    if (model.variant != fb::Variant::FB) {
      if (c.encoder_path.empty())
        throw CLI::ValidationError("--encoder", "required for BFB/RFB models");
      enc = belief::load_encoder(c.encoder_path);
      std::vector<data::Transition> traj;
      envs::Coord pos = layout.start;
      for (int t = 0; t < c.context_len; ++t) {
        int a = rng.uniform_int(envs::kNumActions);
        envs::Coord next = envs::next_pos(layout, pos, a);
        traj.push_back({data::normalize_obs(pos, layout), a, data::normalize_obs(next, layout)});
        pos = next;
      }
      h = belief::infer_context(enc, traj);
      h_ptr = &h;
    }

    Vec z = eval::infer_task_vector(model, ds,
                                    eval::RewardSpec::at(layout.eval_goals.front(), layout),
                                    c.n_z_labels, rng);
    std::ofstream qout(outdir / "qgrid.csv");
    qout << "x,y,action,q\n";
    std::ofstream iout(outdir / "interference.csv");
    iout << "x,y,score,n_up,n_down,n_left,n_right\n";
    for (int y = 0; y < layout.height; ++y) {
      for (int x = 0; x < layout.width; ++x) {
        if (layout.at(x, y) != envs::CellKind::Empty) continue;
        Eigen::Vector2d obs = data::normalize_obs({x, y}, layout);
        for (int a = 0; a < envs::kNumActions; ++a)
          qout << x << ',' << y << ',' << a << ',' << fb::q_value(model, obs, a, z, h_ptr) << '\n';
        auto inter = eval::interference_score(model, obs, 500, h_ptr, rng);
        iout << x << ',' << y << ',' << inter.score;
        for (long n : inter.action_histogram) iout << ',' << n;
        iout << '\n';
      }
    }
    std::cout << "wrote " << (outdir / "qgrid.csv").string() << " and "
              << (outdir / "interference.csv").string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot RL laboratory: forward-backward representations with "
               "belief conditioning on randomized gridworlds"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file; command-line flags override file values");
  app.allow_config_extras(CLI::config_extras_mode::error);

  RunConfig c;

  auto add_env = [&](CLI::App* cmd) {
    cmd->add_option("--env", c.env, "Environment family")
        ->check(CLI::IsMember({"doors", "fourrooms", "pointmass"}));
  };
  auto add_data_opts = [&](CLI::App* cmd) {
    cmd->add_option("--n-layouts", c.n_layouts, "Number of training layouts");
    cmd->add_option("--n-test-layouts", c.n_test_layouts, "Number of held-out layouts");
    cmd->add_option("--episodes-per-layout", c.episodes_per_layout, "Episodes per layout");
    cmd->add_option("--episode-len", c.episode_len, "Steps per collected episode");
    cmd->add_option("--sticky-prob", c.sticky_prob, "Sticky-action repeat probability")
        ->check(CLI::Range(0.0, 0.999999));
  };
  auto add_model_opts = [&](CLI::App* cmd) {
    cmd->add_option("--variant", c.variant, "Representation variant")
        ->check(CLI::IsMember({"fb", "bfb", "rfb"}));
    cmd->add_option("--d", c.d, "Latent dimension");
    cmd->add_option("--steps", c.steps, "Gradient steps");
    cmd->add_option("--batch", c.batch, "Batch size");
    cmd->add_option("--lr", c.lr, "Learning rate");
    cmd->add_option("--discount", c.discount, "Discount factor")
        ->check(CLI::Range(0.0, 1.0).description("FLOAT in [0,1)"))
        ->check([](const std::string& v) {
          return std::stod(v) >= 1.0 ? std::string("discount must be < 1") : std::string();
        });
    cmd->add_option("--polyak", c.polyak, "Target smoothing coefficient")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--kappa", c.kappa, "vMF concentration for RFB");
    cmd->add_option("--context-len", c.context_len, "Encoder context length");
    cmd->add_option("--n-z-labels", c.n_z_labels, "States sampled for task inference");
    cmd->add_option("--embed-dim", c.embed_dim, "Preprocessor embedding width");
    cmd->add_option("--preproc-hidden", c.preproc_hidden, "Preprocessor hidden sizes");
    cmd->add_option("--trunk-hidden", c.trunk_hidden, "F trunk hidden sizes");
    cmd->add_option("--b-hidden", c.b_hidden, "B hidden sizes");
    cmd->add_option("--ensemble", c.ensemble, "Forward ensemble size");
  };
  auto add_encoder_opts = [&](CLI::App* cmd) {
    cmd->add_option("--encoder-width", c.encoder_width, "Encoder model width");
    cmd->add_option("--encoder-heads", c.encoder_heads, "Encoder attention heads");
    cmd->add_option("--encoder-ff", c.encoder_ff, "Encoder feedforward width");
    cmd->add_option("--encoder-blocks", c.encoder_blocks, "Encoder attention blocks");
    cmd->add_option("--beta-kl", c.beta_kl, "Weight of the Gaussian-prior KL term");
    cmd->add_option("--pretrain-steps", c.pretrain_steps, "Encoder pretraining steps");
    cmd->add_option("--pretrain-batch", c.pretrain_batch, "Encoder pretraining batch");
  };
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", c.seed, "Run seed");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_option("--log-every", c.log_every, "Loss logging interval");
    cmd->add_flag("--dry-run", c.dry_run, "Resolve and echo the config without running");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Collect a reward-free offline dataset");
  add_env(gen);
  add_data_opts(gen);
  add_common(gen);

  CLI::App* pre = app.add_subcommand("pretrain-encoder", "Pretrain the belief encoder");
  pre->add_option("--dataset", c.dataset_path, "Dataset file")->required();
  pre->add_option("--context-len", c.context_len, "Context window length");
  pre->add_option("--d", c.d, "Context vector dimension");
  pre->add_option("--lr", c.lr, "Learning rate");
  add_encoder_opts(pre);
  add_common(pre);

  CLI::App* train = app.add_subcommand("train", "Train an FB / BFB / RFB model");
  train->add_option("--dataset", c.dataset_path, "Dataset file")->required();
  train->add_option("--encoder", c.encoder_path, "Pretrained encoder checkpoint");
  add_model_opts(train);
  add_common(train);

  CLI::App* ev = app.add_subcommand("eval", "Zero-shot evaluation on layout splits");
  ev->add_option("--model", c.model_path, "Model checkpoint")->required();
  ev->add_option("--dataset", c.dataset_path, "Dataset file (defines rho)")->required();
  ev->add_option("--encoder", c.encoder_path, "Encoder checkpoint (BFB/RFB)");
  ev->add_option("--split", c.split, "Layout split")
      ->check(CLI::IsMember({"train", "test", "both"}));
  ev->add_option("--n-layouts", c.n_layouts, "Training layout count (default: dataset manifest)")
      ->default_val(0);
  ev->add_option("--n-test-layouts", c.n_test_layouts, "Held-out layout count");
  ev->add_option("--context-len", c.context_len, "Exploration trajectory length");
  ev->add_option("--n-z-labels", c.n_z_labels, "States sampled for task inference");
  ev->add_option("--kappa", c.kappa, "Recorded kappa metadata");
  add_common(ev);

  CLI::App* abl = app.add_subcommand("ablate", "Factorial ablation sweep");
  add_env(abl);
  add_data_opts(abl);
  add_model_opts(abl);
  add_encoder_opts(abl);
  abl->add_option("--grid-context-len", c.grid_context_len, "Context lengths to sweep");
  abl->add_option("--grid-kappa", c.grid_kappa, "Kappa values to sweep");
  abl->add_option("--grid-n-layouts", c.grid_n_layouts, "Layout counts to sweep");
  abl->add_option("--ablation-seeds", c.ablation_seeds, "Seeds per cell");
  add_common(abl);

  CLI::App* viz = app.add_subcommand("viz-export", "Export plotting data records");
  viz->add_option("--dataset", c.dataset_path, "Dataset file")->required();
  viz->add_option("--encoder", c.encoder_path, "Encoder checkpoint");
  viz->add_option("--model", c.model_path, "Model checkpoint");
  viz->add_option("--layout-seed", c.layout_seed, "Layout to export grids for");
  viz->add_option("--context-len", c.context_len, "Context window length");
  viz->add_option("--n-z-labels", c.n_z_labels, "States sampled for task inference");
  add_common(viz);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c);
    if (pre->parsed()) return cmd_pretrain_encoder(c);
    if (train->parsed()) {
      if ((c.variant == "bfb" || c.variant == "rfb") && c.encoder_path.empty())
        throw CLI::ValidationError("--encoder", "required for variant " + c.variant);
      return cmd_train(c);
    }
    if (ev->parsed()) return cmd_eval(c);
    if (abl->parsed()) return cmd_ablate(c);
    if (viz->parsed()) return cmd_viz_export(c);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
