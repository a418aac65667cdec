#include "fbrl/fb.hpp"

#include "fbrl/checkpoint.hpp"
#include "fbrl/vmf.hpp"

#include <fstream>

namespace fbrl::fb {

namespace {

constexpr double kBNormEps = 1e-8;

Mat one_hot(const Eigen::VectorXi& a, int n_actions) {
  Mat m = Mat::Zero(a.size(), n_actions);
  for (Eigen::Index i = 0; i < a.size(); ++i) m(i, a[i]) = 1.0;
  return m;
}

Mat sa_inputs(const Mat& S, const Eigen::VectorXi& A, int n_actions) {
  Mat in(S.rows(), S.cols() + n_actions);
  in.leftCols(S.cols()) = S;
  in.rightCols(n_actions) = one_hot(A, n_actions);
  return in;
}

Mat cond_inputs(const Mat& S, const Mat& Cond) {
  Mat in(S.rows(), S.cols() + Cond.cols());
  in.leftCols(S.cols()) = S;
  in.rightCols(Cond.cols()) = Cond;
  return in;
}

struct BNormCache {
  nn::MlpCache mlp;
  Vec raw_norm;
  Mat out;
};

// y = sqrt(d) * x / (|x| + eps) rowwise
const Mat& b_forward(const FbModel& m, ConstVecRef params, const Mat& S, BNormCache& c,
                     long* degenerate_count) {
  const Mat& raw =
      nn::mlp_forward_cached(m.b_spec, params.segment(m.b_off, m.b_spec.param_count()), S, c.mlp);
  const double radius = std::sqrt(static_cast<double>(m.sizes.d));
  c.raw_norm = raw.rowwise().norm();
  if (degenerate_count)
    for (Eigen::Index i = 0; i < c.raw_norm.size(); ++i)
      if (c.raw_norm[i] < kBNormEps) ++*degenerate_count;
  c.out = radius * (raw.array().colwise() / (c.raw_norm.array() + kBNormEps));
  return c.out;
}

void b_norm_backward(const FbModel& m, const BNormCache& c, const Mat& dY, Mat& dX) {
  const double radius = std::sqrt(static_cast<double>(m.sizes.d));
  const Mat& raw = c.mlp.a.back();
  Vec re = c.raw_norm.array() + kBNormEps;
  Vec coef = (raw.array() * dY.array()).rowwise().sum();
  for (Eigen::Index i = 0; i < coef.size(); ++i)
    coef[i] = c.raw_norm[i] > kBNormEps
                  ? radius * coef[i] / (c.raw_norm[i] * re[i] * re[i])
                  : 0.0;
  dX = radius * (dY.array().colwise() / re.array()) - (raw.array().colwise() * coef.array());
}

struct MemberCaches {
  nn::MlpCache sa, cond, trunk;
  Mat trunk_in;
};

const Mat& member_forward(const FbModel& m, ConstVecRef params, int k, const Mat& sa_in,
                          const Mat& cond_in, MemberCaches& c) {
  const Mat& sa_e = nn::mlp_forward_cached(
      m.sa_spec, params.segment(m.sa_off(k), m.sa_spec.param_count()), sa_in, c.sa);
  const Mat& cond_e = nn::mlp_forward_cached(
      m.cond_spec, params.segment(m.cond_off(k), m.cond_spec.param_count()), cond_in, c.cond);
  c.trunk_in.resize(sa_e.rows(), sa_e.cols() + cond_e.cols());
  c.trunk_in.leftCols(sa_e.cols()) = sa_e;
  c.trunk_in.rightCols(cond_e.cols()) = cond_e;
  return nn::mlp_forward_cached(
      m.trunk_spec, params.segment(m.trunk_off(k), m.trunk_spec.param_count()), c.trunk_in,
      c.trunk);
}

void member_backward(const FbModel& m, ConstVecRef params, int k, const MemberCaches& c,
                     const Mat& dF, VecRef grad, Mat& dTrunkIn) {
  nn::mlp_backward(m.trunk_spec, params.segment(m.trunk_off(k), m.trunk_spec.param_count()),
                   c.trunk, dF, grad.segment(m.trunk_off(k), m.trunk_spec.param_count()),
                   &dTrunkIn);
  int e = m.sizes.embed_dim;
  nn::mlp_backward(m.sa_spec, params.segment(m.sa_off(k), m.sa_spec.param_count()), c.sa,
                   dTrunkIn.leftCols(e), grad.segment(m.sa_off(k), m.sa_spec.param_count()),
                   nullptr);
  nn::mlp_backward(m.cond_spec, params.segment(m.cond_off(k), m.cond_spec.param_count()), c.cond,
                   dTrunkIn.rightCols(e), grad.segment(m.cond_off(k), m.cond_spec.param_count()),
                   nullptr);
}

// Reused across training steps so Eigen storage stays warm.
struct StepWorkspace {
  std::vector<MemberCaches> online, target, greedy;
  BNormCache b_anchor, b_next, b_tgt;
  Mat sa_in, cond_in, tgt_sa_in;
  Mat greedy_sa_in, greedy_cond_in, q;
  Mat dF, dB_anchor, dB_next, dRaw, dTrunkIn;

  void ensure(int ensemble) {
    if (static_cast<int>(online.size()) != ensemble) {
      online.resize(static_cast<std::size_t>(ensemble));
      target.resize(static_cast<std::size_t>(ensemble));
      greedy.resize(static_cast<std::size_t>(ensemble));
    }
  }
};

void fill_sa_inputs(const Mat& S, const Eigen::VectorXi& A, int n_actions, Mat& out) {
  out.resize(S.rows(), S.cols() + n_actions);
  out.leftCols(S.cols()) = S;
  out.rightCols(n_actions).setZero();
  for (Eigen::Index i = 0; i < A.size(); ++i) out(i, S.cols() + A[i]) = 1.0;
}

void fill_cond_inputs(const Mat& S, const Mat& Cond, Mat& out) {
  out.resize(S.rows(), S.cols() + Cond.cols());
  out.leftCols(S.cols()) = S;
  out.rightCols(Cond.cols()) = Cond;
}

}  // namespace

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::FB: return "fb";
    case Variant::BFB: return "bfb";
    case Variant::RFB: return "rfb";
  }
  throw std::logic_error("bad variant");
}

Variant variant_from_name(const std::string& name) {
  if (name == "fb") return Variant::FB;
  if (name == "bfb") return Variant::BFB;
  if (name == "rfb") return Variant::RFB;
  throw std::invalid_argument("unknown variant: " + name);
}

FbModel make_fb_model(Variant variant, const FbSizes& sizes, double gamma, std::uint64_t seed,
                      int obs_dim, int n_actions) {
  FbModel m;
  m.variant = variant;
  m.gamma = gamma;
  m.obs_dim = obs_dim;
  m.n_actions = n_actions;
  m.sizes = sizes;
  m.sa_spec = {obs_dim + n_actions, sizes.preproc_hidden, sizes.embed_dim, nn::Act::GeLU, true};
  m.cond_spec = {obs_dim + m.cond_dim(), sizes.preproc_hidden, sizes.embed_dim, nn::Act::GeLU,
                 true};
  m.trunk_spec = {2 * sizes.embed_dim, sizes.trunk_hidden, sizes.d, nn::Act::GeLU, true};
  m.b_spec = {obs_dim, sizes.b_hidden, sizes.d, nn::Act::GeLU, true};

  m.member_count =
      m.sa_spec.param_count() + m.cond_spec.param_count() + m.trunk_spec.param_count();
  m.b_off = sizes.ensemble * m.member_count;
  int total = m.b_off + m.b_spec.param_count();
  m.online.resize(total);
  Rng rng(mix_seed(seed, 0xFB0001));
  for (int k = 0; k < sizes.ensemble; ++k) {
    m.online.segment(m.sa_off(k), m.sa_spec.param_count()) = nn::init_mlp_params(m.sa_spec, rng);
    m.online.segment(m.cond_off(k), m.cond_spec.param_count()) =
        nn::init_mlp_params(m.cond_spec, rng);
    m.online.segment(m.trunk_off(k), m.trunk_spec.param_count()) =
        nn::init_mlp_params(m.trunk_spec, rng);
  }
  m.online.segment(m.b_off, m.b_spec.param_count()) = nn::init_mlp_params(m.b_spec, rng);
  m.target = m.online;
  return m;
}

Mat forward_F_params(const FbModel& m, ConstVecRef params, const Mat& S,
                     const Eigen::VectorXi& A, const Mat& Cond) {
  if (Cond.cols() != m.cond_dim())
    throw std::invalid_argument("forward_F: condition width " + std::to_string(Cond.cols()) +
                                " does not match variant (expected " +
                                std::to_string(m.cond_dim()) + ")");
  Mat sa_in, cond_in;
  fill_sa_inputs(S, A, m.n_actions, sa_in);
  fill_cond_inputs(S, Cond, cond_in);
  Mat acc = Mat::Zero(S.rows(), m.sizes.d);
  MemberCaches scratch;
  for (int k = 0; k < m.sizes.ensemble; ++k)
    acc += member_forward(m, params, k, sa_in, cond_in, scratch);
  return acc / static_cast<double>(m.sizes.ensemble);
}

Mat forward_B_params(const FbModel& m, ConstVecRef params, const Mat& S, long* degenerate_count) {
  BNormCache scratch;
  return b_forward(m, params, S, scratch, degenerate_count);
}

namespace {

const Mat& q_all_actions_ws(const FbModel& m, ConstVecRef params, const Mat& S, const Mat& Cond,
                            const Mat& Z, StepWorkspace& ws) {
  const Eigen::Index n = S.rows();
  const int A = m.n_actions;
  ws.ensure(m.sizes.ensemble);
  fill_cond_inputs(S, Cond, ws.greedy_cond_in);

  // all actions in one pass: rows [a*n + i] carry (s_i, onehot(a))
  ws.greedy_sa_in.resize(n * A, m.obs_dim + A);
  ws.greedy_sa_in.setZero();
  for (int a = 0; a < A; ++a) {
    ws.greedy_sa_in.middleRows(a * n, n).leftCols(m.obs_dim) = S;
    ws.greedy_sa_in.middleRows(a * n, n).col(m.obs_dim + a).setOnes();
  }

  ws.q.resize(n, A);
  ws.q.setZero();
  for (int k = 0; k < m.sizes.ensemble; ++k) {
    MemberCaches& c = ws.greedy[static_cast<std::size_t>(k)];
    const Mat& sa_e = nn::mlp_forward_cached(
        m.sa_spec, params.segment(m.sa_off(k), m.sa_spec.param_count()), ws.greedy_sa_in, c.sa);
    const Mat& cond_e = nn::mlp_forward_cached(
        m.cond_spec, params.segment(m.cond_off(k), m.cond_spec.param_count()), ws.greedy_cond_in,
        c.cond);
    c.trunk_in.resize(n * A, 2 * m.sizes.embed_dim);
    c.trunk_in.leftCols(m.sizes.embed_dim) = sa_e;
    for (int a = 0; a < A; ++a)
      c.trunk_in.middleRows(a * n, n).rightCols(m.sizes.embed_dim) = cond_e;
    const Mat& f = nn::mlp_forward_cached(
        m.trunk_spec, params.segment(m.trunk_off(k), m.trunk_spec.param_count()), c.trunk_in,
        c.trunk);
    for (int a = 0; a < A; ++a)
      ws.q.col(a) += (f.middleRows(a * n, n).array() * Z.array()).rowwise().sum().matrix();
  }
  ws.q /= static_cast<double>(m.sizes.ensemble);
  return ws.q;
}

Eigen::VectorXi greedy_actions_ws(const FbModel& m, ConstVecRef params, const Mat& S,
                                  const Mat& Cond, const Mat& Z, StepWorkspace& ws) {
  const Mat& q = q_all_actions_ws(m, params, S, Cond, Z, ws);
  Eigen::VectorXi out(q.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    int best = 0;
    for (int a = 1; a < m.n_actions; ++a)
      if (q(i, a) > q(i, best)) best = a;  // strict: ties keep the lowest index
    out[i] = best;
  }
  return out;
}

}  // namespace

Mat q_all_actions(const FbModel& m, ConstVecRef params, const Mat& S, const Mat& Cond,
                  const Mat& Z) {
  StepWorkspace scratch;
  return q_all_actions_ws(m, params, S, Cond, Z, scratch);
}

Eigen::VectorXi greedy_actions(const FbModel& m, ConstVecRef params, const Mat& S,
                               const Mat& Cond, const Mat& Z) {
  StepWorkspace scratch;
  return greedy_actions_ws(m, params, S, Cond, Z, scratch);
}

Mat make_condition(const FbModel& m, const Mat& Z, const Mat* H) {
  if (m.variant == Variant::FB) return Z;
  if (!H) throw std::invalid_argument("make_condition: BFB/RFB require context vectors");
  Mat cond(Z.rows(), 2 * m.sizes.d);
  cond.leftCols(m.sizes.d) = *H;
  cond.rightCols(m.sizes.d) = Z;
  return cond;
}

int greedy_action(const FbModel& m, const Eigen::Vector2d& s, const Vec& z_task, const Vec* h) {
  Mat S = s.transpose();
  Mat Z = z_task.transpose();
  Mat H;
  if (h) H = h->transpose();
  Mat cond = make_condition(m, Z, h ? &H : nullptr);
  return greedy_actions(m, m.online, S, cond, Z)[0];
}

double q_value(const FbModel& m, const Eigen::Vector2d& s, int a, const Vec& z_task,
               const Vec* h) {
  Mat S = s.transpose();
  Mat Z = z_task.transpose();
  Mat H;
  if (h) H = h->transpose();
  Mat cond = make_condition(m, Z, h ? &H : nullptr);
  Eigen::VectorXi A(1);
  A[0] = a;
  Mat f = forward_F_params(m, m.online, S, A, cond);
  return f.row(0).dot(z_task.transpose());
}

TaskSample sample_task_vectors(const FbModel& m, int n, const data::Dataset& dataset,
                               const Mat* h_rows, double kappa, double z_mix, Rng& rng,
                               bool rfb_mix) {
  const int d = m.sizes.d;
  const double radius = std::sqrt(static_cast<double>(d));
  if (m.variant != Variant::FB && !h_rows)
    throw std::invalid_argument("sample_task_vectors: BFB/RFB require context vectors");

  TaskSample out;
  out.z.resize(n, d);

  if (m.variant == Variant::RFB) {
    out.z = vmf::sample_z_rfb(*h_rows, kappa, d, rng);
    if (rfb_mix) {
      std::vector<int> b_rows;
      for (int i = 0; i < n; ++i)
        if (rng.bernoulli(z_mix)) b_rows.push_back(i);
      if (!b_rows.empty()) {
        Mat states = data::sample_rho_states(dataset, static_cast<int>(b_rows.size()), rng);
        Mat b = forward_B_params(m, m.online, states);
        for (std::size_t j = 0; j < b_rows.size(); ++j)
          out.z.row(b_rows[j]) = b.row(static_cast<Eigen::Index>(j));
      }
    }
  } else {
    // 50:50 mixture of uniform-on-sphere and backward-induced vectors
    std::vector<int> b_rows;
    for (int i = 0; i < n; ++i) {
      if (rng.bernoulli(z_mix)) {
        b_rows.push_back(i);
        out.z.row(i).setZero();
      } else {
        out.z.row(i) = radius * vmf::uniform_sphere(d, rng).transpose();
      }
    }
    if (!b_rows.empty()) {
      Mat states = data::sample_rho_states(dataset, static_cast<int>(b_rows.size()), rng);
      Mat b = forward_B_params(m, m.online, states);
      for (std::size_t j = 0; j < b_rows.size(); ++j)
        out.z.row(b_rows[j]) = b.row(static_cast<Eigen::Index>(j));
    }
  }
  out.cond = make_condition(m, out.z, h_rows);
  return out;
}

namespace {

FbLossParts fb_loss_ws(const FbModel& m, const FbBatchInputs& in, VecRef* grad,
                       StepWorkspace& ws) {
  const Eigen::Index n = in.s.rows();
  const Eigen::Index n_anchor = in.s_anchor.rows();
  const int K = m.sizes.ensemble;
  ws.ensure(K);

  const Mat& b_anchor = b_forward(m, m.online, in.s_anchor, ws.b_anchor, nullptr);
  const Mat& b_next = b_forward(m, m.online, in.s_next, ws.b_next, nullptr);

  // target scores against the whole anchor batch, no gradient
  const Mat& b_anchor_tgt = b_forward(m, m.target, in.s_anchor, ws.b_tgt, nullptr);
  fill_sa_inputs(in.s_next, in.next_actions, m.n_actions, ws.tgt_sa_in);
  fill_cond_inputs(in.s_next, in.cond, ws.greedy_cond_in);
  Mat m_target = Mat::Zero(n, n_anchor);
  for (int k = 0; k < K; ++k) {
    const Mat& f = member_forward(m, m.target, k, ws.tgt_sa_in, ws.greedy_cond_in,
                                  ws.target[static_cast<std::size_t>(k)]);
    m_target.noalias() += f * b_anchor_tgt.transpose();
  }
  m_target /= static_cast<double>(K);

  fill_sa_inputs(in.s, in.a, m.n_actions, ws.sa_in);
  fill_cond_inputs(in.s, in.cond, ws.cond_in);

  // every transition row regresses against every anchor in the batch
  const double pair_scale = 1.0 / (static_cast<double>(n) * n_anchor * K);
  const double row_scale = 1.0 / (static_cast<double>(n) * K);
  FbLossParts parts;
  ws.dB_anchor.resize(n_anchor, m.sizes.d);
  ws.dB_anchor.setZero();
  ws.dB_next.resize(n, m.sizes.d);
  ws.dB_next.setZero();
  for (int k = 0; k < K; ++k) {
    MemberCaches& caches = ws.online[static_cast<std::size_t>(k)];
    const Mat& f = member_forward(m, m.online, k, ws.sa_in, ws.cond_in, caches);
    Mat resid = f * b_anchor.transpose() - m.gamma * m_target;  // n x n_anchor
    Vec attract = (f.array() * b_next.array()).rowwise().sum();
    parts.bellman += pair_scale * resid.squaredNorm();
    parts.attract += row_scale * (-2.0) * attract.sum();
    if (grad) {
      ws.dF.noalias() = (2.0 * pair_scale) * (resid * b_anchor);
      ws.dF -= (2.0 * row_scale) * b_next;
      ws.dB_anchor.noalias() += (2.0 * pair_scale) * (resid.transpose() * f);
      ws.dB_next -= (2.0 * row_scale) * f;
      member_backward(m, m.online, k, caches, ws.dF, *grad, ws.dTrunkIn);
    }
  }
  parts.total = parts.bellman + parts.attract;
  if (!std::isfinite(parts.total)) throw std::runtime_error("fb_loss: non-finite loss");

  if (grad) {
    b_norm_backward(m, ws.b_anchor, ws.dB_anchor, ws.dRaw);
    nn::mlp_backward(m.b_spec, m.online.segment(m.b_off, m.b_spec.param_count()),
                     ws.b_anchor.mlp, ws.dRaw, grad->segment(m.b_off, m.b_spec.param_count()),
                     nullptr);
    b_norm_backward(m, ws.b_next, ws.dB_next, ws.dRaw);
    nn::mlp_backward(m.b_spec, m.online.segment(m.b_off, m.b_spec.param_count()),
                     ws.b_next.mlp, ws.dRaw, grad->segment(m.b_off, m.b_spec.param_count()),
                     nullptr);
  }
  return parts;
}

}  // namespace

FbLossParts fb_loss(const FbModel& m, const FbBatchInputs& in, VecRef* grad) {
  StepWorkspace scratch;
  return fb_loss_ws(m, in, grad, scratch);
}

SuccessorMatrix successor_oracle(const TabularMdp& mdp, const Mat& policy, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0) throw std::invalid_argument("successor_oracle: gamma in [0,1)");
  const int S = mdp.n_states, A = mdp.n_actions;
  if (static_cast<int>(mdp.transition.size()) != A)
    throw std::invalid_argument("successor_oracle: transition count != n_actions");
  for (const Mat& P : mdp.transition) {
    if (P.rows() != S || P.cols() != S)
      throw std::invalid_argument("successor_oracle: transition shape mismatch");
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      if (std::abs(P.row(i).sum() - 1.0) > 1e-9 || P.row(i).minCoeff() < 0.0)
        throw std::invalid_argument("successor_oracle: non-stochastic transition row");
  }
  if (policy.rows() != S || policy.cols() != A)
    throw std::invalid_argument("successor_oracle: policy shape mismatch");
  for (Eigen::Index i = 0; i < policy.rows(); ++i)
    if (std::abs(policy.row(i).sum() - 1.0) > 1e-9)
      throw std::invalid_argument("successor_oracle: policy rows must sum to 1");

  // M = (I - gamma * P Pi)^{-1} P over state-action rows
  Mat P_sa(S * A, S);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) P_sa.row(s * A + a) = mdp.transition[static_cast<std::size_t>(a)].row(s);
  Mat Pi = Mat::Zero(S, S * A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) Pi(s, s * A + a) = policy(s, a);
  Mat lhs = Mat::Identity(S * A, S * A) - gamma * (P_sa * Pi);
  SuccessorMatrix out;
  out.m = lhs.partialPivLu().solve(P_sa);
  out.gamma = gamma;
  return out;
}

TrainLog train_fb(FbModel& model, const data::Dataset& dataset,
                  const belief::BeliefEncoder* encoder, const TrainHyper& hyper) {
  if (model.variant != Variant::FB && !encoder)
    throw std::invalid_argument("train_fb: BFB/RFB require a pretrained encoder");

  Rng rng(mix_seed(hyper.seed, 0x7314FB));

  // Context vectors are produced by the frozen encoder, so per-episode
  // windows can be encoded once up front and sampled from a small bank.
  std::vector<Mat> h_bank;
  if (model.variant != Variant::FB) {
    int t_eff = std::min(hyper.context_len, dataset.manifest.episode_len);
    int per_ep = (t_eff == dataset.manifest.episode_len) ? 1 : hyper.h_bank;
    h_bank.resize(dataset.episodes.size());
    for (std::size_t e = 0; e < dataset.episodes.size(); ++e) {
      const auto& ep = dataset.episodes[e];
      h_bank[e].resize(per_ep, model.sizes.d);
      for (int w = 0; w < per_ep; ++w) {
        int offset = (per_ep == 1) ? 0 : rng.uniform_int(ep.length() - t_eff + 1);
        std::vector<data::Transition> window;
        window.reserve(static_cast<std::size_t>(t_eff));
        for (int t = offset; t < offset + t_eff; ++t) window.push_back(ep.transition(t));
        h_bank[e].row(w) = belief::infer_context(*encoder, window).transpose();
      }
    }
  }

  nn::AdamState opt = nn::AdamState::make(static_cast<int>(model.online.size()), hyper.lr);
  Vec grad(model.online.size());
  StepWorkspace ws;
  TrainLog log;

  for (int step = 0; step < hyper.steps; ++step) {
    data::Batch batch = data::sample_batch(dataset, hyper.batch, rng);

    Mat h;
    const Mat* h_ptr = nullptr;
    if (model.variant != Variant::FB) {
      h.resize(hyper.batch, model.sizes.d);
      for (int i = 0; i < hyper.batch; ++i) {
        const Mat& bank = h_bank[static_cast<std::size_t>(batch.episode_index[static_cast<std::size_t>(i)])];
        h.row(i) = bank.row(bank.rows() == 1 ? 0 : rng.uniform_int(static_cast<int>(bank.rows())));
      }
      h_ptr = &h;
    }

    TaskSample task = sample_task_vectors(model, hyper.batch, dataset, h_ptr, hyper.kappa,
                                          hyper.z_mix, rng, hyper.rfb_mix);

    FbBatchInputs in;
    in.s = std::move(batch.s);
    in.a = std::move(batch.a);
    in.s_next = std::move(batch.s_next);
    in.s_anchor = std::move(batch.s_anchor);
    in.z = std::move(task.z);
    in.cond = std::move(task.cond);
    if (hyper.uniform_policy_backup) {
      in.next_actions.resize(hyper.batch);
      for (int i = 0; i < hyper.batch; ++i) in.next_actions[i] = rng.uniform_int(model.n_actions);
    } else {
      in.next_actions = greedy_actions_ws(model, model.online, in.s_next, in.cond, in.z, ws);
    }

    grad.setZero();
    FbLossParts parts;
    try {
      VecRef gref = grad;
      parts = fb_loss_ws(model, in, &gref, ws);
      nn::adam_step(opt, model.online, grad);
    } catch (const std::runtime_error&) {
      if (!hyper.divergence_checkpoint.empty()) save_model(model, hyper.divergence_checkpoint, &opt);
      throw;
    }
    nn::polyak_update(model.target, model.online, hyper.polyak);

    if (step % hyper.log_every == 0) log.entries.emplace_back(step, parts.total);
  }
  return log;
}

void save_model(const FbModel& m, const std::filesystem::path& path, const nn::AdamState* opt) {
  nlohmann::json h;
  h["kind"] = "fb_model";
  h["variant"] = variant_name(m.variant);
  h["gamma"] = m.gamma;
  h["obs_dim"] = m.obs_dim;
  h["n_actions"] = m.n_actions;
  h["d"] = m.sizes.d;
  h["embed_dim"] = m.sizes.embed_dim;
  h["preproc_hidden"] = m.sizes.preproc_hidden;
  h["trunk_hidden"] = m.sizes.trunk_hidden;
  h["b_hidden"] = m.sizes.b_hidden;
  h["ensemble"] = m.sizes.ensemble;
  h["has_optimizer"] = opt != nullptr;
  std::vector<const Vec*> arrays = {&m.online, &m.target};
  Vec step_vec(1);
  if (opt) {
    step_vec[0] = static_cast<double>(opt->step);
    arrays.push_back(&opt->m);
    arrays.push_back(&opt->v);
    arrays.push_back(&step_vec);
    h["adam_lr"] = opt->lr;
  }
  io::write_checkpoint(path, h, arrays);
}

FbModel load_model(const std::filesystem::path& path, nn::AdamState* opt) {
  io::Checkpoint ck = io::read_checkpoint(path);
  if (ck.header.value("kind", "") != "fb_model")
    throw std::runtime_error("load_model: not a model checkpoint");
  FbSizes sizes;
  sizes.d = ck.header.at("d").get<int>();
  sizes.embed_dim = ck.header.at("embed_dim").get<int>();
  sizes.preproc_hidden = ck.header.at("preproc_hidden").get<std::vector<int>>();
  sizes.trunk_hidden = ck.header.at("trunk_hidden").get<std::vector<int>>();
  sizes.b_hidden = ck.header.at("b_hidden").get<std::vector<int>>();
  sizes.ensemble = ck.header.at("ensemble").get<int>();
  FbModel m = make_fb_model(variant_from_name(ck.header.at("variant").get<std::string>()), sizes,
                            ck.header.at("gamma").get<double>(), 0,
                            ck.header.at("obs_dim").get<int>(),
                            ck.header.at("n_actions").get<int>());
  if (ck.arrays.size() < 2 || ck.arrays[0].size() != m.online.size())
    throw std::runtime_error("load_model: parameter size mismatch");
  m.online = ck.arrays[0];
  m.target = ck.arrays[1];
  if (opt && ck.header.value("has_optimizer", false)) {
    opt->m = ck.arrays[2];
    opt->v = ck.arrays[3];
    opt->step = static_cast<std::int64_t>(ck.arrays[4][0]);
    opt->lr = ck.header.at("adam_lr").get<double>();
  }
  return m;
}

void write_model_sidecar(const std::filesystem::path& model_path, int steps,
                         std::uint64_t dataset_hash, std::uint64_t encoder_hash) {
  FbModel m = load_model(model_path);
  nlohmann::json j;
  j["variant"] = variant_name(m.variant);
  j["d"] = m.sizes.d;
  j["gamma"] = m.gamma;
  j["steps"] = steps;
  j["dataset_hash"] = dataset_hash;
  j["encoder_hash"] = encoder_hash;
  std::ofstream out(model_path.string() + ".meta.json");
  out << j.dump(2) << '\n';
}

}  // namespace fbrl::fb
