#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mas/denoiser.hpp"
#include "mas/diffusion.hpp"
#include "mas/eval.hpp"
#include "mas/geometry.hpp"
#include "mas/mas.hpp"

namespace testing_support {

/// Predicts, for every view, the noise that makes x_hat_0 equal the
/// normalized perspective projection of one fixed 3D motion. `cameras(stream,
/// t)` returns the camera the stream is looking through at step t.
template <class CameraLookup>
struct ConsistencyOracle {
  const mas::Motion3D* target;
  const mas::NoiseSchedule* sched;
  mas::Normalizer norm;
  CameraLookup cameras;

  mas::Motion2D operator()(const mas::Motion2D& x, int t, int stream) const {
    const mas::Motion2D x0 = norm.normalize(mas::perspective_project(*target, cameras(stream, t)));
    const double ab = sched->alpha_bar(t);
    mas::Motion2D out = x;
    out.points() = (x.points() - std::sqrt(ab) * x0.points()) / std::sqrt(1.0 - ab);
    return out;
  }
};

struct RingLookup {
  std::vector<mas::CameraView> ring;
  const mas::CameraView& operator()(int stream, int) const { return ring[static_cast<std::size_t>(stream)]; }
};

inline ConsistencyOracle<RingLookup> ring_oracle(const mas::Motion3D& X, const mas::NoiseSchedule& s,
                                                 const mas::MasConfig& cfg, const mas::Normalizer& norm) {
  return {&X, &s, norm, RingLookup{mas::make_camera_ring(cfg.views, cfg.elevation, cfg.camera_distance, cfg.focal, cfg.layout)}};
}

// Plain-loop FID using the eigenvalues of the (non-symmetric) product Sa Sb.
inline double scalar_fid(const mas::FeatureSet& A, const mas::FeatureSet& B) {
  const int d = static_cast<int>(A.cols());
  auto stats = [d](const mas::FeatureSet& X, std::vector<double>& mu, Eigen::MatrixXd& cov) {
    const int n = static_cast<int>(X.rows());
    mu.assign(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < d; ++a) mu[static_cast<std::size_t>(a)] += X(i, a) / n;
    cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i)
      for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b)
          cov(a, b) += (X(i, a) - mu[static_cast<std::size_t>(a)]) * (X(i, b) - mu[static_cast<std::size_t>(b)]) / (n - 1);
  };
  std::vector<double> ma, mb;
  Eigen::MatrixXd ca, cb;
  stats(A, ma, ca);
  stats(B, mb, cb);
  double total = 0.0;
  for (int a = 0; a < d; ++a) {
    const double diff = ma[static_cast<std::size_t>(a)] - mb[static_cast<std::size_t>(a)];
    total += diff * diff + ca(a, a) + cb(a, a);
  }
  const Eigen::EigenSolver<Eigen::MatrixXd> es(ca * cb);
  for (int i = 0; i < d; ++i) total -= 2.0 * std::sqrt(std::max(0.0, es.eigenvalues()(i).real()));
  return total;
}

// All-pairs precision/recall with fully sorted neighbor lists.
inline mas::PrecisionRecall brute_force_pr(const mas::FeatureSet& gen, const mas::FeatureSet& ref, int k) {
  auto radii = [k](const mas::FeatureSet& S) {
    std::vector<double> r;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      std::vector<double> d;
      for (Eigen::Index j = 0; j < S.rows(); ++j)
        if (j != i) d.push_back((S.row(i) - S.row(j)).norm());
      std::sort(d.begin(), d.end());
      r.push_back(d[static_cast<std::size_t>(k - 1)]);
    }
    return r;
  };
  auto coverage = [](const mas::FeatureSet& Q, const mas::FeatureSet& S, const std::vector<double>& r) {
    int hits = 0;
    for (Eigen::Index q = 0; q < Q.rows(); ++q) {
      bool in = false;
      for (Eigen::Index s = 0; s < S.rows(); ++s) in = in || (Q.row(q) - S.row(s)).norm() <= r[static_cast<std::size_t>(s)];
      hits += in;
    }
    return static_cast<double>(hits) / static_cast<double>(Q.rows());
  };
  return {coverage(gen, ref, radii(ref)), coverage(ref, gen, radii(gen))};
}

}  // namespace testing_support
