#pragma once

#include "fbrl/common.hpp"

namespace fbrl::vmf {

// Exact von Mises-Fisher samples with mean direction e1, via the
// tangent-normal decomposition: the axial marginal w is drawn with the
// Ulrich/Wood rejection scheme, the tangent direction uniformly on the
// orthogonal sphere. kappa = 0 reduces to the uniform distribution.
Mat vmf_sample_northpole(int d, double kappa, int n, Rng& rng);

// Single draw of the axial marginal w on [-1, 1], density
// proportional to exp(kappa*w) * (1-w^2)^((d-3)/2).
double vmf_sample_w(int d, double kappa, Rng& rng);

// Reflection H = I - 2 v v^T / (v^T v) with v = e1 - u, mapping e1 to u.
// Applied as an operator; identity when u is within 1e-12 of e1.
Vec householder_apply(const Vec& u, const Vec& x);

// Per row of h_batch: normalize the anchor, draw a vMF sample around e1,
// rotate onto the anchor, scale to the sphere of radius sqrt(d).
Mat sample_z_rfb(const Mat& h_batch, double kappa, int d, Rng& rng);

// Uniform sample on the unit sphere S^{d-1}.
Vec uniform_sphere(int d, Rng& rng);

}  // namespace fbrl::vmf
