#include "fbrl/nn.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

namespace fbrl::nn {

namespace {

using MatMap = Eigen::Map<Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;

// tanh through the vectorized exp kernel; Eigen's double tanh/erf fall
// back to scalar libm calls and dominate the step time otherwise
Mat fast_tanh(const Mat& z) {
  return (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
}

Mat erf_scaled(const Mat& z) {
  return z.unaryExpr([](double x) { return std::erf(x * M_SQRT1_2); });
}

// gelu(z) given E = erf(z/sqrt(2))
Mat gelu_from_erf(const Mat& z, const Mat& e) {
  return (0.5 * z.array() * (1.0 + e.array())).matrix();
}

Mat gelu_grad_times(const Mat& z, const Mat& e, const Mat& dA) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return (dA.array() *
          (0.5 * (1.0 + e.array()) +
           z.array() * (-0.5 * z.array().square()).exp() * kInvSqrt2Pi))
      .matrix();
}

Mat apply_act(Act act, const Mat& z, Mat* erf_cache) {
  switch (act) {
    case Act::None: return z;
    case Act::Tanh: return fast_tanh(z);
    case Act::GeLU: {
      Mat e = erf_scaled(z);
      if (erf_cache) *erf_cache = e;
      return gelu_from_erf(z, e);
    }
  }
  throw std::logic_error("bad activation");
}

Mat act_grad_times(Act act, const Mat& z, const Mat& a, const Mat& e, const Mat& dA) {
  switch (act) {
    case Act::None: return dA;
    case Act::Tanh: return (dA.array() * (1.0 - a.array().square())).matrix();
    case Act::GeLU: return gelu_grad_times(z, e, dA);
  }
  throw std::logic_error("bad activation");
}

// y = xhat * gain + bias rowwise, xhat = (z - mean) * inv_std
void layer_norm_forward(const Mat& z, ConstVecRef gain, ConstVecRef bias, Mat& y, Mat& xhat,
                        Vec& inv_std) {
  Vec mu = z.rowwise().mean();
  xhat = z.array().colwise() - mu.array();
  inv_std = (xhat.array().square().rowwise().mean() + kLayerNormEps).rsqrt();
  xhat.array().colwise() *= inv_std.array();
  y = xhat.array().rowwise() * gain.transpose().array();
  y.array().rowwise() += bias.transpose().array();
}

void layer_norm_backward(const Mat& xhat, const Vec& inv_std, ConstVecRef gain, const Mat& dY,
                         Mat& dZ, VecRef dGain, VecRef dBias) {
  dGain += (dY.array() * xhat.array()).colwise().sum().matrix().transpose();
  dBias += dY.colwise().sum().transpose();
  Mat dxhat = dY.array().rowwise() * gain.transpose().array();
  Vec m1 = dxhat.rowwise().mean();
  Vec m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  dZ = ((dxhat.array().colwise() - m1.array()) - xhat.array().colwise() * m2.array())
           .colwise() *
       inv_std.array();
}

bool row_less(const Mat& m, int i, int j) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double a = m(i, c), b = m(j, c);
    if (a < b) return true;
    if (b < a) return false;
    // equal values may still differ in bits (signed zeros); keep the
    // order total so canonicalization is unique
    auto ba = std::bit_cast<std::uint64_t>(a), bb = std::bit_cast<std::uint64_t>(b);
    if (ba != bb) return ba < bb;
  }
  return false;
}

}  // namespace

std::vector<int> lexicographic_row_order(const Mat& m) {
  std::vector<int> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return row_less(m, i, j); });
  return order;
}

std::vector<int> MlpSpec::dims() const {
  std::vector<int> d;
  d.push_back(input_dim);
  d.insert(d.end(), hidden.begin(), hidden.end());
  d.push_back(output_dim);
  return d;
}

int MlpSpec::param_count() const {
  auto d = dims();
  int n = 0;
  for (std::size_t l = 0; l + 1 < d.size(); ++l) n += d[l] * d[l + 1] + d[l + 1];
  if (first_layer_norm && !hidden.empty()) n += 2 * hidden.front();
  return n;
}

Vec init_mlp_params(const MlpSpec& spec, Rng& rng) {
  Vec p(spec.param_count());
  auto d = spec.dims();
  int off = 0;
  for (int l = 0; l < spec.n_linear(); ++l) {
    double s = 1.0 / std::sqrt(static_cast<double>(d[static_cast<std::size_t>(l)]));
    int n_w = d[static_cast<std::size_t>(l)] * d[static_cast<std::size_t>(l) + 1];
    int n_b = d[static_cast<std::size_t>(l) + 1];
    for (int i = 0; i < n_w + n_b; ++i) p[off + i] = rng.uniform(-s, s);
    off += n_w + n_b;
    if (l == 0 && spec.first_layer_norm && !spec.hidden.empty()) {
      p.segment(off, n_b).setOnes();
      p.segment(off + n_b, n_b).setZero();
      off += 2 * n_b;
    }
  }
  return p;
}

Mat mlp_forward(const MlpSpec& spec, ConstVecRef params, const Mat& X, MlpCache* cache) {
  MlpCache local;
  MlpCache& c = cache ? *cache : local;
  return mlp_forward_cached(spec, params, X, c);
}

const Mat& mlp_forward_cached(const MlpSpec& spec, ConstVecRef params, const Mat& X,
                              MlpCache& c) {
  if (X.cols() != spec.input_dim)
    throw std::invalid_argument("mlp_forward: input width " + std::to_string(X.cols()) +
                                " != spec input_dim " + std::to_string(spec.input_dim));
  auto d = spec.dims();
  const int L = spec.n_linear();
  c.input = X;
  c.z.resize(static_cast<std::size_t>(L));
  c.a.resize(static_cast<std::size_t>(L));
  c.gelu_erf.resize(static_cast<std::size_t>(L));

  int off = 0;
  const Mat* in = &c.input;
  for (int l = 0; l < L; ++l) {
    int rows = d[static_cast<std::size_t>(l) + 1], cols = d[static_cast<std::size_t>(l)];
    ConstMatMap W(params.data() + off, rows, cols);
    ConstVecMap b(params.data() + off + rows * cols, rows);
    off += rows * cols + rows;
    Mat& z = c.z[static_cast<std::size_t>(l)];
    z.noalias() = (*in) * W.transpose();
    z.rowwise() += b.transpose();
    Mat& a = c.a[static_cast<std::size_t>(l)];
    if (l == L - 1) {
      a = z;
    } else if (l == 0 && spec.first_layer_norm) {
      ConstVecMap gain(params.data() + off, rows);
      ConstVecMap bias(params.data() + off + rows, rows);
      off += 2 * rows;
      Mat normed;
      layer_norm_forward(z, gain, bias, normed, c.ln_xhat, c.ln_inv_std);
      a = fast_tanh(normed);
    } else {
      a = apply_act(spec.hidden_act, z, &c.gelu_erf[static_cast<std::size_t>(l)]);
    }
    in = &a;
  }
  return c.a.back();
}

void mlp_backward(const MlpSpec& spec, ConstVecRef params, const MlpCache& cache,
                  const Eigen::Ref<const Mat>& dY, VecRef grad, Mat* dX) {
  auto d = spec.dims();
  const int L = spec.n_linear();

  // parameter offsets per layer
  std::vector<int> w_off(static_cast<std::size_t>(L));
  int ln_off = -1;
  {
    int off = 0;
    for (int l = 0; l < L; ++l) {
      w_off[static_cast<std::size_t>(l)] = off;
      int rows = d[static_cast<std::size_t>(l) + 1], cols = d[static_cast<std::size_t>(l)];
      off += rows * cols + rows;
      if (l == 0 && spec.first_layer_norm && !spec.hidden.empty()) {
        ln_off = off;
        off += 2 * rows;
      }
    }
  }

  Mat dA = dY;
  for (int l = L - 1; l >= 0; --l) {
    int rows = d[static_cast<std::size_t>(l) + 1], cols = d[static_cast<std::size_t>(l)];
    ConstMatMap W(params.data() + w_off[static_cast<std::size_t>(l)], rows, cols);
    Mat dZ;
    if (l == L - 1) {
      dZ = std::move(dA);
    } else if (l == 0 && spec.first_layer_norm) {
      const Mat& a = cache.a[0];
      Mat dNormed = (dA.array() * (1.0 - a.array().square())).matrix();
      ConstVecMap gain(params.data() + ln_off, rows);
      VecMap dGain(grad.data() + ln_off, rows);
      VecMap dBias(grad.data() + ln_off + rows, rows);
      layer_norm_backward(cache.ln_xhat, cache.ln_inv_std, gain, dNormed, dZ, dGain, dBias);
    } else {
      dZ = act_grad_times(spec.hidden_act, cache.z[static_cast<std::size_t>(l)],
                          cache.a[static_cast<std::size_t>(l)],
                          cache.gelu_erf[static_cast<std::size_t>(l)], dA);
    }
    const Mat& in = (l == 0) ? cache.input : cache.a[static_cast<std::size_t>(l) - 1];
    MatMap dW(grad.data() + w_off[static_cast<std::size_t>(l)], rows, cols);
    VecMap db(grad.data() + w_off[static_cast<std::size_t>(l)] + rows * cols, rows);
    dW.noalias() += dZ.transpose() * in;
    db += dZ.colwise().sum().transpose();
    if (l > 0) {
      dA.noalias() = dZ * W;
    } else if (dX) {
      dX->noalias() = dZ * W;
    }
  }
}

int AttentionSpec::param_count() const {
  return 4 * (width * width + width)      // q, k, v, out projections
         + 4 * width                      // two layer norms
         + ff_dim * width + ff_dim        // ff in
         + width * ff_dim + width;        // ff out
}

Vec init_attention_params(const AttentionSpec& spec, Rng& rng) {
  Vec p(spec.param_count());
  int off = 0;
  auto fill = [&](int n, int fan_in) {
    double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < n; ++i) p[off + i] = rng.uniform(-s, s);
    off += n;
  };
  for (int i = 0; i < 4; ++i) fill(spec.width * spec.width + spec.width, spec.width);
  p.segment(off, spec.width).setOnes();
  p.segment(off + spec.width, spec.width).setZero();
  p.segment(off + 2 * spec.width, spec.width).setOnes();
  p.segment(off + 3 * spec.width, spec.width).setZero();
  off += 4 * spec.width;
  fill(spec.ff_dim * spec.width + spec.ff_dim, spec.width);
  fill(spec.width * spec.ff_dim + spec.width, spec.ff_dim);
  return p;
}

namespace {

struct AttnOffsets {
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int ln1_g, ln1_b, ln2_g, ln2_b;
  int w1, b1, w2, b2;
};

AttnOffsets attn_offsets(const AttentionSpec& s) {
  AttnOffsets o{};
  int off = 0;
  int step = s.width * s.width;
  o.wq = off; o.bq = off + step; off += step + s.width;
  o.wk = off; o.bk = off + step; off += step + s.width;
  o.wv = off; o.bv = off + step; off += step + s.width;
  o.wo = off; o.bo = off + step; off += step + s.width;
  o.ln1_g = off; o.ln1_b = off + s.width;
  o.ln2_g = off + 2 * s.width; o.ln2_b = off + 3 * s.width;
  off += 4 * s.width;
  o.w1 = off; o.b1 = off + s.ff_dim * s.width; off += s.ff_dim * s.width + s.ff_dim;
  o.w2 = off; o.b2 = off + s.width * s.ff_dim;
  return o;
}

}  // namespace

Mat attention_forward(const AttentionSpec& spec, ConstVecRef params, const Mat& tokens,
                      AttnCache* cache) {
  if (tokens.cols() != spec.width)
    throw std::invalid_argument("attention_forward: token width mismatch");
  if (spec.width % spec.heads != 0)
    throw std::invalid_argument("attention_forward: width not divisible by heads");
  const int T = static_cast<int>(tokens.rows());
  const int dh = spec.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttnOffsets o = attn_offsets(spec);

  AttnCache local;
  AttnCache& c = cache ? *cache : local;

  // Canonical token order: reductions over the set happen in a
  // content-determined order, making permutation equivariance exact.
  c.perm = lexicographic_row_order(tokens);
  c.x_sorted.resize(T, spec.width);
  for (int i = 0; i < T; ++i) c.x_sorted.row(i) = tokens.row(c.perm[static_cast<std::size_t>(i)]);

  ConstVecMap ln1_g(params.data() + o.ln1_g, spec.width);
  ConstVecMap ln1_b(params.data() + o.ln1_b, spec.width);
  layer_norm_forward(c.x_sorted, ln1_g, ln1_b, c.u1, c.u1_xhat, c.u1_inv_std);

  ConstMatMap Wq(params.data() + o.wq, spec.width, spec.width);
  ConstMatMap Wk(params.data() + o.wk, spec.width, spec.width);
  ConstMatMap Wv(params.data() + o.wv, spec.width, spec.width);
  ConstVecMap bq(params.data() + o.bq, spec.width);
  ConstVecMap bk(params.data() + o.bk, spec.width);
  ConstVecMap bv(params.data() + o.bv, spec.width);
  c.q.noalias() = c.u1 * Wq.transpose(); c.q.rowwise() += bq.transpose();
  c.k.noalias() = c.u1 * Wk.transpose(); c.k.rowwise() += bk.transpose();
  c.v.noalias() = c.u1 * Wv.transpose(); c.v.rowwise() += bv.transpose();

  c.attn.assign(static_cast<std::size_t>(spec.heads), Mat());
  c.heads_out.resize(T, spec.width);
  for (int h = 0; h < spec.heads; ++h) {
    auto Qh = c.q.middleCols(h * dh, dh);
    auto Kh = c.k.middleCols(h * dh, dh);
    auto Vh = c.v.middleCols(h * dh, dh);
    Mat S = scale * (Qh * Kh.transpose());
    Mat& A = c.attn[static_cast<std::size_t>(h)];
    A.resize(T, T);
    for (int i = 0; i < T; ++i) {
      double mx = S.row(i).maxCoeff();
      A.row(i) = (S.row(i).array() - mx).exp();
      A.row(i) /= A.row(i).sum();
    }
    c.heads_out.middleCols(h * dh, dh).noalias() = A * Vh;
  }

  ConstMatMap Wo(params.data() + o.wo, spec.width, spec.width);
  ConstVecMap bo(params.data() + o.bo, spec.width);
  c.x1.noalias() = c.heads_out * Wo.transpose();
  c.x1.rowwise() += bo.transpose();
  c.x1 += c.x_sorted;

  ConstVecMap ln2_g(params.data() + o.ln2_g, spec.width);
  ConstVecMap ln2_b(params.data() + o.ln2_b, spec.width);
  layer_norm_forward(c.x1, ln2_g, ln2_b, c.u2, c.u2_xhat, c.u2_inv_std);

  ConstMatMap W1(params.data() + o.w1, spec.ff_dim, spec.width);
  ConstVecMap b1(params.data() + o.b1, spec.ff_dim);
  ConstMatMap W2(params.data() + o.w2, spec.width, spec.ff_dim);
  ConstVecMap b2(params.data() + o.b2, spec.width);
  c.ff_z1.noalias() = c.u2 * W1.transpose();
  c.ff_z1.rowwise() += b1.transpose();
  c.ff_erf = erf_scaled(c.ff_z1);
  c.ff_a1 = gelu_from_erf(c.ff_z1, c.ff_erf);
  Mat y_sorted = c.ff_a1 * W2.transpose();
  y_sorted.rowwise() += b2.transpose();
  y_sorted += c.x1;

  Mat Y(T, spec.width);
  for (int i = 0; i < T; ++i) Y.row(c.perm[static_cast<std::size_t>(i)]) = y_sorted.row(i);
  return Y;
}

void attention_backward(const AttentionSpec& spec, ConstVecRef params, const AttnCache& cache,
                        const Mat& dY, VecRef grad, Mat* dTokens) {
  const int T = static_cast<int>(dY.rows());
  const int dh = spec.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttnOffsets o = attn_offsets(spec);

  Mat dYs(T, spec.width);
  for (int i = 0; i < T; ++i) dYs.row(i) = dY.row(cache.perm[static_cast<std::size_t>(i)]);

  // feedforward branch
  Mat dF = dYs;
  Mat dX1 = dYs;
  ConstMatMap W1(params.data() + o.w1, spec.ff_dim, spec.width);
  ConstMatMap W2(params.data() + o.w2, spec.width, spec.ff_dim);
  {
    MatMap dW2(grad.data() + o.w2, spec.width, spec.ff_dim);
    VecMap db2(grad.data() + o.b2, spec.width);
    dW2.noalias() += dF.transpose() * cache.ff_a1;
    db2 += dF.colwise().sum().transpose();
    Mat dA1 = dF * W2;
    Mat dZ1 = gelu_grad_times(cache.ff_z1, cache.ff_erf, dA1);
    MatMap dW1(grad.data() + o.w1, spec.ff_dim, spec.width);
    VecMap db1(grad.data() + o.b1, spec.ff_dim);
    dW1.noalias() += dZ1.transpose() * cache.u2;
    db1 += dZ1.colwise().sum().transpose();
    Mat dU2 = dZ1 * W1;
    ConstVecMap ln2_g(params.data() + o.ln2_g, spec.width);
    VecMap dG2(grad.data() + o.ln2_g, spec.width);
    VecMap dB2(grad.data() + o.ln2_b, spec.width);
    Mat dX1_ln;
    layer_norm_backward(cache.u2_xhat, cache.u2_inv_std, ln2_g, dU2, dX1_ln, dG2, dB2);
    dX1 += dX1_ln;
  }

  // attention branch
  Mat dXs = dX1;  // residual
  ConstMatMap Wo(params.data() + o.wo, spec.width, spec.width);
  MatMap dWo(grad.data() + o.wo, spec.width, spec.width);
  VecMap dbo(grad.data() + o.bo, spec.width);
  dWo.noalias() += dX1.transpose() * cache.heads_out;
  dbo += dX1.colwise().sum().transpose();
  Mat dHeads = dX1 * Wo;

  Mat dQ = Mat::Zero(T, spec.width);
  Mat dK = Mat::Zero(T, spec.width);
  Mat dV = Mat::Zero(T, spec.width);
  for (int h = 0; h < spec.heads; ++h) {
    const Mat& A = cache.attn[static_cast<std::size_t>(h)];
    auto Qh = cache.q.middleCols(h * dh, dh);
    auto Kh = cache.k.middleCols(h * dh, dh);
    auto Vh = cache.v.middleCols(h * dh, dh);
    auto dOh = dHeads.middleCols(h * dh, dh);
    Mat dA = dOh * Vh.transpose();
    dV.middleCols(h * dh, dh).noalias() = A.transpose() * dOh;
    Vec rowdot = (dA.array() * A.array()).rowwise().sum();
    Mat dS = (A.array() * (dA.array().colwise() - rowdot.array())).matrix() * scale;
    dQ.middleCols(h * dh, dh).noalias() = dS * Kh;
    dK.middleCols(h * dh, dh).noalias() = dS.transpose() * Qh;
  }

  MatMap dWq(grad.data() + o.wq, spec.width, spec.width);
  MatMap dWk(grad.data() + o.wk, spec.width, spec.width);
  MatMap dWv(grad.data() + o.wv, spec.width, spec.width);
  VecMap dbq(grad.data() + o.bq, spec.width);
  VecMap dbk(grad.data() + o.bk, spec.width);
  VecMap dbv(grad.data() + o.bv, spec.width);
  ConstMatMap Wq(params.data() + o.wq, spec.width, spec.width);
  ConstMatMap Wk(params.data() + o.wk, spec.width, spec.width);
  ConstMatMap Wv(params.data() + o.wv, spec.width, spec.width);
  dWq.noalias() += dQ.transpose() * cache.u1;
  dWk.noalias() += dK.transpose() * cache.u1;
  dWv.noalias() += dV.transpose() * cache.u1;
  dbq += dQ.colwise().sum().transpose();
  dbk += dK.colwise().sum().transpose();
  dbv += dV.colwise().sum().transpose();
  Mat dU1 = dQ * Wq + dK * Wk + dV * Wv;

  ConstVecMap ln1_g(params.data() + o.ln1_g, spec.width);
  VecMap dG1(grad.data() + o.ln1_g, spec.width);
  VecMap dB1(grad.data() + o.ln1_b, spec.width);
  Mat dXs_ln;
  layer_norm_backward(cache.u1_xhat, cache.u1_inv_std, ln1_g, dU1, dXs_ln, dG1, dB1);
  dXs += dXs_ln;

  if (dTokens) {
    dTokens->resize(T, spec.width);
    for (int i = 0; i < T; ++i)
      dTokens->row(cache.perm[static_cast<std::size_t>(i)]) = dXs.row(i);
  }
}

AdamState AdamState::make(int n, double lr) {
  AdamState s;
  s.m = Vec::Zero(n);
  s.v = Vec::Zero(n);
  s.lr = lr;
  return s;
}

void adam_step(AdamState& state, VecRef params, ConstVecRef grads) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!grads.allFinite()) throw std::runtime_error("adam_step: non-finite gradient");
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v.array() =
      state.beta2 * state.v.array() + (1.0 - state.beta2) * grads.array().square();
  double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -=
      state.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

void polyak_update(VecRef target, ConstVecRef online, double coeff) {
  if (target.size() != online.size()) throw std::invalid_argument("polyak_update: shape mismatch");
  if (coeff <= 0.0 || coeff > 1.0) throw std::invalid_argument("polyak_update: coeff out of range");
  target = (1.0 - coeff) * target + coeff * online;
}

double grad_check(const std::function<double(const Vec&)>& loss, const Vec& params,
                  const Vec& analytic_grad, double eps, int n_coords, Rng& rng) {
  const int dim = static_cast<int>(params.size());
  std::vector<int> coords;
  if (dim <= n_coords) {
    coords.resize(static_cast<std::size_t>(dim));
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    for (int i = 0; i < n_coords; ++i) coords.push_back(rng.uniform_int(dim));
  }
  double worst = 0.0;
  Vec p = params;
  for (int idx : coords) {
    double orig = p[idx];
    p[idx] = orig + eps;
    double up = loss(p);
    p[idx] = orig - eps;
    double down = loss(p);
    p[idx] = orig;
    double numeric = (up - down) / (2.0 * eps);
    double rel = std::abs(numeric - analytic_grad[idx]) /
                 std::max(1e-2, std::abs(numeric) + std::abs(analytic_grad[idx]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace fbrl::nn
