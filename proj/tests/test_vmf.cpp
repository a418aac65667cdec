#include "fbrl/vmf.hpp"

#include "test_util.hpp"

#include <doctest.h>

using namespace fbrl;
using namespace fbrl::vmf;

TEST_SUITE_BEGIN("vmf");

TEST_CASE("kappa 0 is uniform on the sphere") {
  Rng rng(1);
  Mat s = vmf_sample_northpole(3, 0.0, 10000, rng);
  CHECK(s.rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(s.colwise().mean().norm() <= 0.03);
}

TEST_CASE("huge kappa collapses to the mean direction") {
  Rng rng(2);
  Mat s = vmf_sample_northpole(100, 1e6, 200, rng);
  CHECK(s.col(0).minCoeff() >= 0.999);
}

TEST_CASE("mean resultant length matches coth(kappa) - 1/kappa in d=3") {
  Rng rng(3);
  Mat s = vmf_sample_northpole(3, 50.0, 100000, rng);
  double mrl = s.colwise().mean().norm();
  double expected = 1.0 / std::tanh(50.0) - 1.0 / 50.0;  // 0.980
  CHECK(std::abs(expected - 0.98) < 1e-3);
  CHECK(std::abs(mrl - expected) < 0.005);
}

TEST_CASE("axial marginal passes a KS test against the integrated density") {
  struct Case {
    int d;
    double kappa;
  };
  for (Case c : {Case{3, 50.0}, Case{16, 5.0}, Case{100, 50.0}}) {
    CAPTURE(c.d);
    CAPTURE(c.kappa);
    Rng rng(mix_seed(4, static_cast<std::uint64_t>(c.d)));
    const int n = 100000;
    std::vector<double> w(n);
    for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = vmf_sample_w(c.d, c.kappa, rng);
    std::vector<double> grid, cdf;
    testutil::vmf_marginal_cdf(c.d, c.kappa, 40001, grid, cdf);
    double d_stat = testutil::ks_statistic(w, grid, cdf);
    CHECK(testutil::ks_p_value(d_stat, n) > 0.01);
  }
}

TEST_CASE("householder reflection maps e1 onto u and preserves norms") {
  SUBCASE("u = e1 is the identity") {
    Vec u = Vec::Zero(5);
    u[0] = 1.0;
    Vec x = Vec::Random(5);
    CHECK((householder_apply(u, x) - x).norm() == 0.0);
  }

  SUBCASE("maps the pole onto u") {
    Vec u(3);
    u << 0.0, 1.0, 0.0;
    Vec e1(3);
    e1 << 1.0, 0.0, 0.0;
    CHECK((householder_apply(u, e1) - u).norm() < 1e-14);
  }

  SUBCASE("orthogonality: norms preserved") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      Vec u = uniform_sphere(8, rng);
      Vec x = rng.normal_vec(8);
      Vec e1 = Vec::Zero(8);
      e1[0] = 1.0;
      Vec y = householder_apply(u, x);
      CHECK(std::abs(y.norm() - x.norm()) / x.norm() < 1e-12);
      CHECK((householder_apply(u, e1) - u).norm() < 1e-12);
    }
  }

  SUBCASE("rejects non-unit directions") {
    Vec u(4);
    u << 0.5, 0.5, 0.5, 0.6;
    CHECK_THROWS_AS(householder_apply(u, Vec::Random(4)), std::invalid_argument);
  }
}

TEST_CASE("rfb samples live on the sqrt(d) sphere around their anchors") {
  Rng rng(6);
  const int d = 32;
  Mat h = Mat::Random(64, d);
  Mat z = sample_z_rfb(h, 50.0, d, rng);
  double radius = std::sqrt(static_cast<double>(d));
  for (int i = 0; i < 64; ++i) CHECK(std::abs(z.row(i).norm() - radius) < 1e-6);

  SUBCASE("kappa -> infinity collapses onto the anchor direction") {
    Mat z_hi = sample_z_rfb(h, 1e8, d, rng);
    for (int i = 0; i < 64; ++i) {
      double cos = z_hi.row(i).dot(h.row(i)) / (z_hi.row(i).norm() * h.row(i).norm());
      CHECK(cos > 0.999);
    }
  }

  SUBCASE("near-zero anchors fall back to the first basis vector") {
    Mat h0 = Mat::Zero(4, d);
    Mat z0 = sample_z_rfb(h0, 1e8, d, rng);
    for (int i = 0; i < 4; ++i) CHECK(z0(i, 0) / radius > 0.999);
  }
}

TEST_CASE("well-separated anchors induce disjoint cones") {
  Rng rng(7);
  const int d = 100;
  Vec u1 = Vec::Zero(d), u2 = Vec::Zero(d);
  u1[0] = 1.0;
  u2[0] = -1.0;  // cosine -1
  Mat anchors(2, d);
  anchors.row(0) = u1.transpose();
  anchors.row(1) = u2.transpose();
  int errors = 0;
  for (int i = 0; i < 5000; ++i) {
    Mat z = sample_z_rfb(anchors, 50.0, d, rng);
    // classify each sample by nearest anchor
    if (z.row(0).dot(u1) < z.row(0).dot(u2)) ++errors;
    if (z.row(1).dot(u2) < z.row(1).dot(u1)) ++errors;
  }
  CHECK(errors == 0);
}

TEST_CASE("rotational equivariance of the sampled distribution") {
  Rng rng(8);
  const int d = 16;
  const int n = 100000;
  Vec u = uniform_sphere(d, rng);
  // random orthogonal map from a QR factorization
  Mat g(d, d);
  for (int i = 0; i < d; ++i) g.row(i) = rng.normal_vec(d).transpose();
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ();

  Mat anchors_u = u.transpose().replicate(n, 1);
  Mat anchors_qu = (q * u).transpose().replicate(n, 1);
  Rng r1(100), r2(200);
  Mat z_u = sample_z_rfb(anchors_u, 50.0, d, r1);
  Mat z_qu = sample_z_rfb(anchors_qu, 50.0, d, r2);

  Vec m1 = q * (z_u.colwise().mean().transpose() / std::sqrt(static_cast<double>(d)));
  Vec m2 = z_qu.colwise().mean().transpose() / std::sqrt(static_cast<double>(d));
  CHECK((m1 - m2).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("sampling is deterministic given the seed") {
  Rng r1(9), r2(9);
  Mat a = vmf_sample_northpole(10, 20.0, 100, r1);
  Mat b = vmf_sample_northpole(10, 20.0, 100, r2);
  CHECK(a == b);
  CHECK_THROWS_AS(vmf_sample_northpole(1, 1.0, 1, r1), std::invalid_argument);
  CHECK_THROWS_AS(vmf_sample_northpole(3, -1.0, 1, r1), std::invalid_argument);
}

TEST_SUITE_END();
