#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mas/denoiser.hpp"
#include "mas/error.hpp"
#include "mas/geometry.hpp"
#include "mas/motion.hpp"
#include "mas/rng.hpp"
#include "mas/synthdata.hpp"

namespace mas {

/// One feature vector per row.
using FeatureSet = Eigen::MatrixXd;

inline constexpr int kMinFeatureFrames = 8;
inline constexpr int kFeatureVersion = 1;

/// Yaw band of the side-view evaluation variant.
inline CameraDistribution side_view(CameraDistribution cams) {
  cams.yaw_min = std::numbers::pi / 4.0;
  cams.yaw_max = 3.0 * std::numbers::pi / 4.0;
  return cams;
}

/// One perspective projection per motion through a camera with uniformly
/// random yaw. Motion i draws its yaw from derive_seed(seed, {i}).
inline std::vector<Motion2D> random_projection_protocol(const std::vector<Motion3D>& motions,
                                                        const CameraDistribution& cams,
                                                        std::uint64_t seed,
                                                        std::vector<double>* yaws = nullptr) {
  cams.validate();
  std::vector<Motion2D> out;
  out.reserve(motions.size());
  if (yaws) yaws->clear();
  for (std::size_t i = 0; i < motions.size(); ++i) {
    Rng rng = make_rng(derive_seed(seed, {i}));
    const double yaw =
        cams.yaw_min == cams.yaw_max ? cams.yaw_min : uniform(rng, cams.yaw_min, cams.yaw_max);
    out.push_back(perspective_project(motions[i], cams.camera(yaw)));
    if (yaws) yaws->push_back(yaw);
  }
  return out;
}

// Features (per joint j, computed on normalized coordinates):
//   speed mean, speed std              2J
//   position std about the joint mean  J
//   distance to frame centroid mean/std 2J
//   spectral energy share in 3 bands   3
inline constexpr int feature_dimension(int joints) { return 5 * joints + 3; }

/// Spectral bands in cycles per frame: [0, 1/16), [1/16, 1/6), [1/6, 1/2].
inline constexpr double kBandEdges[2] = {1.0 / 16.0, 1.0 / 6.0};

inline Eigen::VectorXd extract_features(const Motion2D& m, const Normalizer& norm) {
  const int L = m.frames(), J = m.joints();
  if (L < kMinFeatureFrames)
    fail(ErrorKind::TooShort, "feature extraction needs at least " + std::to_string(kMinFeatureFrames) +
                                  " frames, got " + std::to_string(L));
  const Motion2D x = norm.normalize(m);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dimension(J));

  auto mean_std = [](const Eigen::ArrayXd& a) {
    const double mu = a.mean();
    return std::pair{mu, std::sqrt(std::max(0.0, (a - mu).square().mean()))};
  };

  for (int j = 0; j < J; ++j) {
    Eigen::ArrayXd speed(L - 1);
    for (int l = 0; l + 1 < L; ++l) speed(l) = (x(l + 1, j) - x(l, j)).norm();
    const auto [sm, ss] = mean_std(speed);
    f(2 * j) = sm;
    f(2 * j + 1) = ss;

    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (int l = 0; l < L; ++l) mean += x(l, j);
    mean /= L;
    double var = 0.0;
    for (int l = 0; l < L; ++l) var += (x(l, j) - mean).squaredNorm();
    f(2 * J + j) = std::sqrt(var / L);
  }

  Eigen::MatrixXd centroid_dist(J, L);
  for (int l = 0; l < L; ++l) {
    Eigen::Vector2d c = Eigen::Vector2d::Zero();
    for (int j = 0; j < J; ++j) c += x(l, j);
    c /= J;
    for (int j = 0; j < J; ++j) centroid_dist(j, l) = (x(l, j) - c).norm();
  }
  for (int j = 0; j < J; ++j) {
    const auto [dm, ds] = mean_std(centroid_dist.row(j).transpose().array());
    f(3 * J + 2 * j) = dm;
    f(3 * J + 2 * j + 1) = ds;
  }

  // Power spectrum of every centered coordinate track, pooled over tracks.
  double band[3] = {0.0, 0.0, 0.0};
  const Eigen::MatrixXd tracks = x.frame_matrix();
  const Eigen::VectorXd track_mean = tracks.rowwise().mean();
  for (int k = 1; k <= L / 2; ++k) {
    const double freq = static_cast<double>(k) / L;
    const int b = freq < kBandEdges[0] ? 0 : (freq < kBandEdges[1] ? 1 : 2);
    Eigen::VectorXd re = Eigen::VectorXd::Zero(tracks.rows());
    Eigen::VectorXd im = Eigen::VectorXd::Zero(tracks.rows());
    for (int l = 0; l < L; ++l) {
      const double ang = 2.0 * std::numbers::pi * freq * l;
      re += std::cos(ang) * (tracks.col(l) - track_mean);
      im -= std::sin(ang) * (tracks.col(l) - track_mean);
    }
    band[b] += (re.squaredNorm() + im.squaredNorm()) / (static_cast<double>(L) * L);
  }
  const double total = band[0] + band[1] + band[2];
  // Below 1e-20 the tracks are static up to rounding.
  for (int b = 0; b < 3; ++b) f(5 * J + b) = total > 1e-20 ? band[b] / total : 0.0;
  return f;
}

inline FeatureSet extract_feature_set(const std::vector<Motion2D>& motions, const Normalizer& norm) {
  require(!motions.empty(), ErrorKind::InsufficientSamples, "no motions to featurize");
  const int J = motions.front().joints();
  FeatureSet out(static_cast<Eigen::Index>(motions.size()), feature_dimension(J));
  for (std::size_t i = 0; i < motions.size(); ++i) {
    require(motions[i].joints() == J, ErrorKind::ShapeMismatch, "joint count differs across motions");
    out.row(static_cast<Eigen::Index>(i)) = extract_features(motions[i], norm).transpose();
  }
  return out;
}

/// Per-dimension standardization fitted on a reference feature set.
struct FeatureScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;

  static FeatureScaler fit(const FeatureSet& ref) {
    require(ref.rows() >= 2, ErrorKind::InsufficientSamples, "need two reference features to standardize");
    FeatureScaler s;
    s.mean = ref.colwise().mean();
    s.scale = ((ref.rowwise() - s.mean).array().square().colwise().sum() / static_cast<double>(ref.rows() - 1))
                  .sqrt()
                  .matrix();
    for (Eigen::Index c = 0; c < s.scale.size(); ++c)
      if (!(s.scale(c) > 1e-12)) s.scale(c) = 1.0;
    return s;
  }

  FeatureSet apply(const FeatureSet& f) const {
    return ((f.rowwise() - mean).array().rowwise() / scale.array()).matrix();
  }
};

namespace detail {

inline Eigen::MatrixXd covariance(const FeatureSet& a) {
  const Eigen::MatrixXd c = a.rowwise() - a.colwise().mean();
  return (c.transpose() * c) / static_cast<double>(a.rows() - 1);
}

inline Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

inline double kth_smallest(std::vector<double> v, int k) {
  std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
  return v[static_cast<std::size_t>(k - 1)];
}

}  // namespace detail

/// Frechet distance between Gaussian fits of A and B.
inline double fid(const FeatureSet& A, const FeatureSet& B) {
  require(A.cols() == B.cols(), ErrorKind::ShapeMismatch, "feature dimensions differ");
  const Eigen::Index need = A.cols() + 1;
  if (A.rows() < need || B.rows() < need)
    fail(ErrorKind::InsufficientSamples, "FID needs at least " + std::to_string(need) +
                                             " samples per set, got " + std::to_string(A.rows()) +
                                             " and " + std::to_string(B.rows()));
  const Eigen::RowVectorXd dmu = A.colwise().mean() - B.colwise().mean();
  const Eigen::MatrixXd sa = detail::covariance(A);
  const Eigen::MatrixXd sb = detail::covariance(B);
  // tr (Sa Sb)^{1/2} = tr (Sa^{1/2} Sb Sa^{1/2})^{1/2}, the latter symmetric.
  const Eigen::MatrixXd ra = detail::sqrt_psd(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::max(0.0, dmu.squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross);
}

/// Mean feature distance over `pair_count` random pairs of distinct rows.
inline double diversity(const FeatureSet& A, int pair_count, std::uint64_t seed) {
  if (A.rows() < 2) fail(ErrorKind::InsufficientSamples, "diversity needs at least two samples");
  require(pair_count >= 1, ErrorKind::InvalidArgument, "pair_count must be positive");
  Rng rng = make_rng(seed);
  const int n = static_cast<int>(A.rows());
  double total = 0.0;
  for (int p = 0; p < pair_count; ++p) {
    const int i = uniform_int(rng, 0, n - 1);
    int j = uniform_int(rng, 0, n - 2);
    if (j >= i) ++j;
    total += (A.row(i) - A.row(j)).norm();
  }
  return total / pair_count;
}

/// Radius of each row's k-nearest-neighbor ball within its own set, the row
/// itself excluded.
inline Eigen::VectorXd knn_radii(const FeatureSet& S, int k) {
  const Eigen::Index n = S.rows();
  Eigen::VectorXd r(n);
  std::vector<double> d(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) d[w++] = (S.row(i) - S.row(j)).norm();
    r(i) = detail::kth_smallest(d, k);
  }
  return r;
}

/// Fraction of `query` rows inside the union of `support` k-NN balls.
inline double manifold_coverage(const FeatureSet& query, const FeatureSet& support,
                                const Eigen::VectorXd& radii) {
  Eigen::Index inside = 0;
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    for (Eigen::Index s = 0; s < support.rows(); ++s) {
      if ((query.row(q) - support.row(s)).norm() <= radii(s)) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(query.rows());
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// k-NN manifold precision (gen inside ref's manifold) and recall (ref inside
/// gen's manifold).
inline PrecisionRecall precision_recall(const FeatureSet& gen, const FeatureSet& ref, int k) {
  require(k >= 1, ErrorKind::InvalidArgument, "k must be positive");
  require(gen.cols() == ref.cols(), ErrorKind::ShapeMismatch, "feature dimensions differ");
  if (gen.rows() <= k || ref.rows() <= k)
    fail(ErrorKind::InsufficientSamples, "precision/recall needs more than k samples per set");
  return {manifold_coverage(gen, ref, knn_radii(ref, k)), manifold_coverage(ref, gen, knn_radii(gen, k))};
}

/// Per bone: std / mean of its length over frames.
inline std::vector<double> bone_length_consistency(const Motion3D& m, const Skeleton& skel) {
  require(m.joints() == skel.joints(), ErrorKind::ShapeMismatch,
          "motion has " + std::to_string(m.joints()) + " joints, skeleton " + std::to_string(skel.joints()));
  std::vector<double> out;
  for (const auto& [p, c] : skel.bones()) {
    Eigen::ArrayXd len(m.frames());
    for (int l = 0; l < m.frames(); ++l) len(l) = (m(l, c) - m(l, p)).norm();
    const double mu = len.mean();
    const double sd = std::sqrt(std::max(0.0, (len - mu).square().mean()));
    out.push_back(mu > 0.0 ? sd / mu : 0.0);
  }
  return out;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::InsufficientSamples, "median of an empty set");
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  if (v.size() % 2 == 1) return v[h];
  const double hi = v[h];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h)));
}

struct EvalConfig {
  int repeats = 10;
  int k = 3;
  int diversity_pairs = 300;
  std::uint64_t seed = 0;
  CameraDistribution cameras;

  void validate() const {
    require(repeats >= 2, ErrorKind::InvalidArgument, "confidence intervals need at least two repeats");
    require(k >= 1, ErrorKind::InvalidArgument, "k must be positive");
    require(diversity_pairs >= 1, ErrorKind::InvalidArgument, "diversity_pairs must be positive");
    cameras.validate();
  }
};

struct MetricStat {
  double mean = 0.0;
  /// 95% normal-approximation half width over repeats.
  double ci = 0.0;
  std::vector<double> values;

  double lo() const { return mean - ci; }
  double hi() const { return mean + ci; }

  static MetricStat of(std::vector<double> v) {
    MetricStat s;
    const double n = static_cast<double>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.ci = v.size() > 1 ? 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    s.values = std::move(v);
    return s;
  }
};

/// True when the two 95% intervals share no point.
inline bool disjoint(const MetricStat& a, const MetricStat& b) { return a.hi() < b.lo() || b.hi() < a.lo(); }

struct MetricsReport {
  MetricStat fid, diversity, precision, recall;
  std::size_t generated_count = 0;
  std::size_t reference_count = 0;
  int repeats = 0;
  int k = 0;
  int diversity_pairs = 0;
  int feature_dim = 0;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(6);
    auto line = [&](const char* name, const MetricStat& s) {
      os << name << ": " << s.mean << "\n" << name << "_ci95: " << s.ci << "\n";
    };
    line("fid", fid);
    line("diversity", diversity);
    line("precision", precision);
    line("recall", recall);
    os << "generated_count: " << generated_count << "\nreference_count: " << reference_count
       << "\nrepeats: " << repeats << "\nk: " << k << "\ndiversity_pairs: " << diversity_pairs
       << "\nfeature_dim: " << feature_dim << "\nfeature_version: " << kFeatureVersion << "\n";
    return os.str();
  }

  static std::string table_header() { return "fid\tfid_ci\tdiversity\tdiversity_ci\tprecision\tprecision_ci\trecall\trecall_ci\tn_gen\tn_ref"; }

  std::string table_row() const {
    std::ostringstream os;
    os.precision(6);
    os << fid.mean << '\t' << fid.ci << '\t' << diversity.mean << '\t' << diversity.ci << '\t'
       << precision.mean << '\t' << precision.ci << '\t' << recall.mean << '\t' << recall.ci << '\t'
       << generated_count << '\t' << reference_count;
    return os.str();
  }
};

/// Reference-side state shared by every evaluation against one dataset.
struct ReferenceFeatures {
  Normalizer norm;
  FeatureScaler scaler;
  FeatureSet features;  // standardized

  static ReferenceFeatures build(const std::vector<Motion2D>& ref, const Normalizer& norm) {
    ReferenceFeatures r;
    r.norm = norm;
    const FeatureSet raw = extract_feature_set(ref, norm);
    r.scaler = FeatureScaler::fit(raw);
    r.features = r.scaler.apply(raw);
    return r;
  }

  FeatureSet standardized(const std::vector<Motion2D>& motions) const {
    return scaler.apply(extract_feature_set(motions, norm));
  }
};

namespace detail {

inline std::vector<Eigen::Index> subsample_rows(Eigen::Index pool, Eigen::Index count, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(pool));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng = make_rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (count < pool) idx.resize(static_cast<std::size_t>(count));
  return idx;
}

inline FeatureSet take_rows(const FeatureSet& f, const std::vector<Eigen::Index>& rows) {
  FeatureSet out(static_cast<Eigen::Index>(rows.size()), f.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = f.row(rows[i]);
  return out;
}

}  // namespace detail

/// Repeated evaluation: `generated(r)` supplies the standardized generated
/// features of repeat r; each repeat compares them against a fresh reference
/// subsample of equal size.
inline MetricsReport evaluate_repeats(const std::function<FeatureSet(int)>& generated,
                                      const ReferenceFeatures& ref, const EvalConfig& cfg) {
  cfg.validate();
  std::vector<double> f, d, p, r;
  MetricsReport rep;
  for (int i = 0; i < cfg.repeats; ++i) {
    const std::uint64_t rs = derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)});
    const FeatureSet gen = generated(i);
    const FeatureSet refs =
        detail::take_rows(ref.features, detail::subsample_rows(ref.features.rows(), gen.rows(), derive_seed(rs, {1})));
    f.push_back(fid(gen, refs));
    d.push_back(diversity(gen, cfg.diversity_pairs, derive_seed(rs, {2})));
    const PrecisionRecall pr = precision_recall(gen, refs, cfg.k);
    p.push_back(pr.precision);
    r.push_back(pr.recall);
    rep.generated_count = static_cast<std::size_t>(gen.rows());
    rep.reference_count = static_cast<std::size_t>(refs.rows());
    rep.feature_dim = static_cast<int>(gen.cols());
  }
  rep.fid = MetricStat::of(std::move(f));
  rep.diversity = MetricStat::of(std::move(d));
  rep.precision = MetricStat::of(std::move(p));
  rep.recall = MetricStat::of(std::move(r));
  rep.repeats = cfg.repeats;
  rep.k = cfg.k;
  rep.diversity_pairs = cfg.diversity_pairs;
  return rep;
}

/// Generated 3D motions, re-projected with fresh random yaws every repeat.
inline MetricsReport evaluate_motions3d(const std::vector<Motion3D>& gen, const ReferenceFeatures& ref,
                                        const EvalConfig& cfg) {
  return evaluate_repeats(
      [&](int i) {
        const std::uint64_t rs = derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)});
        return ref.standardized(random_projection_protocol(gen, cfg.cameras, derive_seed(rs, {0})));
      },
      ref, cfg);
}

/// Generated 2D motions (e.g. plain 2D ancestral samples); only the reference
/// subsample varies across repeats.
inline MetricsReport evaluate_motions2d(const std::vector<Motion2D>& gen, const ReferenceFeatures& ref,
                                        const EvalConfig& cfg) {
  const FeatureSet g = ref.standardized(gen);
  return evaluate_repeats([&](int) { return g; }, ref, cfg);
}

/// FID between two disjoint random halves of the reference set, per repeat:
/// the level a perfect generator of half-set size reaches.
inline MetricStat self_noise_floor(const ReferenceFeatures& ref, const EvalConfig& cfg) {
  cfg.validate();
  const Eigen::Index half = ref.features.rows() / 2;
  std::vector<double> f;
  for (int i = 0; i < cfg.repeats; ++i) {
    const auto idx = detail::subsample_rows(ref.features.rows(), ref.features.rows(),
                                            derive_seed(cfg.seed, {static_cast<std::uint64_t>(i), 3}));
    std::vector<Eigen::Index> a(idx.begin(), idx.begin() + half), b(idx.begin() + half, idx.begin() + 2 * half);
    f.push_back(fid(detail::take_rows(ref.features, a), detail::take_rows(ref.features, b)));
  }
  return MetricStat::of(std::move(f));
}

}  // namespace mas
