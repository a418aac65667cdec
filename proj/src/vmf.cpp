#include "fbrl/vmf.hpp"

namespace fbrl::vmf {

namespace {

// Marsaglia-Tsang for shape >= 1, boosted for shape < 1.
double sample_gamma(double shape, Rng& rng) {
  if (shape < 1.0) {
    double u = rng.uniform01();
    while (u == 0.0) u = rng.uniform01();
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double sample_beta_sym(double a, Rng& rng) {
  double x = sample_gamma(a, rng);
  double y = sample_gamma(a, rng);
  return x / (x + y);
}

}  // namespace

double vmf_sample_w(int d, double kappa, Rng& rng) {
  if (d < 2) throw std::invalid_argument("vmf_sample_w: d must be >= 2");
  if (kappa < 0.0) throw std::invalid_argument("vmf_sample_w: kappa must be >= 0");
  const double dm1 = static_cast<double>(d - 1);
  // rationalized form of (-2k + sqrt(4k^2 + (d-1)^2)) / (d-1), stable for
  // large kappa
  const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double c = kappa * x0 + dm1 * std::log(1.0 - x0 * x0);
  const double half = dm1 / 2.0;
  for (;;) {
    double z = sample_beta_sym(half, rng);
    double w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
    double u = rng.uniform01();
    while (u == 0.0) u = rng.uniform01();
    if (kappa * w + dm1 * std::log(1.0 - x0 * w) - c >= std::log(u)) return w;
  }
}

Mat vmf_sample_northpole(int d, double kappa, int n, Rng& rng) {
  if (d < 2) throw std::invalid_argument("vmf_sample_northpole: d must be >= 2");
  if (kappa < 0.0) throw std::invalid_argument("vmf_sample_northpole: kappa must be >= 0");
  if (n < 1) throw std::invalid_argument("vmf_sample_northpole: n must be >= 1");
  Mat out(n, d);
  for (int i = 0; i < n; ++i) {
    double w = vmf_sample_w(d, kappa, rng);
    // uniform tangent direction orthogonal to e1
    Vec v = rng.normal_vec(d - 1);
    double norm = v.norm();
    while (norm < 1e-12) {
      v = rng.normal_vec(d - 1);
      norm = v.norm();
    }
    v /= norm;
    out(i, 0) = w;
    out.row(i).tail(d - 1) = std::sqrt(std::max(0.0, 1.0 - w * w)) * v.transpose();
  }
  return out;
}

Vec householder_apply(const Vec& u, const Vec& x) {
  if (std::abs(u.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("householder_apply: u must be a unit vector");
  if (u.size() != x.size()) throw std::invalid_argument("householder_apply: size mismatch");
  Vec v = -u;
  v[0] += 1.0;  // v = e1 - u
  double vv = v.squaredNorm();
  if (vv < 1e-24) return x;
  return x - (2.0 * v.dot(x) / vv) * v;
}

Mat sample_z_rfb(const Mat& h_batch, double kappa, int d, Rng& rng) {
  constexpr double kEps = 1e-8;
  if (h_batch.cols() != d) throw std::invalid_argument("sample_z_rfb: anchor width mismatch");
  const double radius = std::sqrt(static_cast<double>(d));
  Mat s = vmf_sample_northpole(d, kappa, static_cast<int>(h_batch.rows()), rng);
  Mat z(h_batch.rows(), d);
  for (Eigen::Index i = 0; i < h_batch.rows(); ++i) {
    Vec u = h_batch.row(i).transpose() / (h_batch.row(i).norm() + kEps);
    double un = u.norm();
    if (un < 0.5) {
      // near-zero anchor: epsilon guard collapses it; fall back to e1
      u.setZero();
      u[0] = 1.0;
    } else {
      u /= un;
    }
    z.row(i) = radius * householder_apply(u, s.row(i).transpose()).transpose();
  }
  return z;
}

Vec uniform_sphere(int d, Rng& rng) {
  Vec v = rng.normal_vec(d);
  double n = v.norm();
  while (n < 1e-12) {
    v = rng.normal_vec(d);
    n = v.norm();
  }
  return v / n;
}

}  // namespace fbrl::vmf
