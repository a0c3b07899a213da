#include <gtest/gtest.h>

#include <algorithm>
#include <complex>

#include "mas/eval.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace mas;

namespace {

FeatureSet gaussian_set(Rng& rng, int n, int dim, double shift = 0.0) {
  FeatureSet f(n, dim);
  fill_normal(f, rng);
  f.col(0).array() += shift;
  return f;
}

Motion2D random_walk_2d(Rng& rng, int frames, int joints) {
  Motion2D m(frames, joints);
  Motion2D steps = normal_motion<2>(frames, joints, rng);
  for (int l = 1; l < frames; ++l)
    for (int j = 0; j < joints; ++j) m(l, j) = m(l - 1, j) + 0.1 * steps(l, j);
  return m;
}

const Normalizer kNorm{0.0, 0.0, 0.5};

}  // namespace

TEST(Fid, IdenticalSetsGiveZero) {
  Rng rng = make_rng(61);
  const FeatureSet A = gaussian_set(rng, 200, 8);
  EXPECT_LE(fid(A, A), 1e-8);
}

TEST(Fid, Symmetric) {
  Rng rng = make_rng(62);
  const FeatureSet A = gaussian_set(rng, 100, 6), B = gaussian_set(rng, 150, 6, 0.5);
  EXPECT_NEAR(fid(A, B), fid(B, A), 1e-9);
}

TEST(Fid, InvariantUnderOrthogonalTransform) {
  Rng rng = make_rng(63);
  FeatureSet A = gaussian_set(rng, 120, 10), B = gaussian_set(rng, 120, 10, 1.0);
  B.col(3) *= 2.0;
  Eigen::MatrixXd M(10, 10);
  fill_normal(M, rng);
  const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(M).householderQ();
  EXPECT_NEAR(fid(A * Q, B * Q), fid(A, B), 1e-6);
}

TEST(Fid, ShiftedGaussiansGiveSquaredDistance) {
  Rng rng = make_rng(64);
  for (double delta : {0.5, 1.0, 2.0}) {
    const FeatureSet A = gaussian_set(rng, 20000, 4), B = gaussian_set(rng, 20000, 4, delta);
    EXPECT_NEAR(fid(A, B), delta * delta, 0.02 + 0.02 * delta * delta);
  }
}

TEST(Fid, MatchesScalarOracle) {
  Rng rng = make_rng(65);
  for (int trial = 0; trial < 20; ++trial) {
    FeatureSet A = gaussian_set(rng, 30, 5), B = gaussian_set(rng, 40, 5, 0.3);
    Eigen::MatrixXd mix(5, 5);
    fill_normal(mix, rng);
    B = B * mix;
    EXPECT_NEAR(fid(A, B), testing_support::scalar_fid(A, B), 1e-8);
  }
}

TEST(Fid, NeedsDimensionPlusOneSamples) {
  Rng rng = make_rng(66);
  EXPECT_MAS_ERROR(fid(gaussian_set(rng, 5, 5), gaussian_set(rng, 10, 5)), ErrorKind::InsufficientSamples);
  EXPECT_NO_THROW(fid(gaussian_set(rng, 6, 5), gaussian_set(rng, 6, 5)));
  EXPECT_MAS_ERROR(fid(gaussian_set(rng, 10, 5), gaussian_set(rng, 10, 4)), ErrorKind::ShapeMismatch);
}

TEST(Diversity, IdenticalSetIsZero) {
  const FeatureSet A = FeatureSet::Constant(10, 4, 1.5);
  EXPECT_EQ(diversity(A, 50, 1), 0.0);
}

TEST(Diversity, MatchesMonteCarloReference) {
  Rng rng = make_rng(67);
  constexpr int k = 6;
  const FeatureSet A = gaussian_set(rng, 20000, k);
  // E||x - y|| for x, y ~ N(0, I_k) by independent Monte-Carlo.
  double ref = 0.0;
  constexpr int draws = 200000;
  std::normal_distribution<double> normal;
  for (int i = 0; i < draws; ++i) {
    double s = 0.0;
    for (int c = 0; c < k; ++c) {
      const double d = normal(rng) - normal(rng);
      s += d * d;
    }
    ref += std::sqrt(s) / draws;
  }
  EXPECT_NEAR(diversity(A, 100000, 2), ref, 0.02);
}

TEST(Diversity, SeedReproducibleAndValidated) {
  Rng rng = make_rng(68);
  const FeatureSet A = gaussian_set(rng, 50, 3);
  EXPECT_EQ(diversity(A, 100, 7), diversity(A, 100, 7));
  EXPECT_MAS_ERROR(diversity(A.topRows(1), 10, 1), ErrorKind::InsufficientSamples);
}

TEST(PrecisionRecall, MatchesBruteForce) {
  Rng rng = make_rng(69);
  for (int trial = 0; trial < 5; ++trial) {
    const FeatureSet gen = gaussian_set(rng, 200, 4, 0.4 * trial);
    const FeatureSet ref = gaussian_set(rng, 200, 4);
    for (int k : {1, 3, 5}) {
      const PrecisionRecall a = precision_recall(gen, ref, k), b = testing_support::brute_force_pr(gen, ref, k);
      EXPECT_EQ(a.precision, b.precision);
      EXPECT_EQ(a.recall, b.recall);
    }
  }
}

TEST(PrecisionRecall, IdenticalSetsAreFullyCovered) {
  Rng rng = make_rng(70);
  const FeatureSet A = gaussian_set(rng, 100, 5);
  const PrecisionRecall pr = precision_recall(A, A, 3);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_EQ(pr.recall, 1.0);
}

TEST(PrecisionRecall, ModeCollapseSignature) {
  Rng rng = make_rng(71);
  const FeatureSet ref = gaussian_set(rng, 300, 4);
  const FeatureSet gen = FeatureSet::Zero(300, 4).rowwise() + 0.05 * Eigen::RowVectorXd::Ones(4);
  const PrecisionRecall pr = precision_recall(gen, ref, 3);
  EXPECT_EQ(pr.precision, 1.0);
  EXPECT_LT(pr.recall, 0.05);
}

TEST(PrecisionRecall, NeedsMoreThanK) {
  Rng rng = make_rng(72);
  EXPECT_MAS_ERROR(precision_recall(gaussian_set(rng, 3, 2), gaussian_set(rng, 10, 2), 3), ErrorKind::InsufficientSamples);
}

TEST(Features, DimensionMatchesDescriptor) {
  Rng rng = make_rng(73);
  for (int J : {1, 4, 16, 17}) {
    EXPECT_EQ(feature_dimension(J), 2 * J + J + 2 * J + 3);
    EXPECT_EQ(extract_features(random_walk_2d(rng, 20, J), kNorm).size(), feature_dimension(J));
  }
}

TEST(Features, StaticMotionHasZeroVelocityFeatures) {
  Rng rng = make_rng(74);
  const Motion2D pose = normal_motion<2>(1, 5, rng);
  Motion2D m(30, 5);
  for (int l = 0; l < 30; ++l)
    for (int j = 0; j < 5; ++j) m(l, j) = pose(0, j);
  const Eigen::VectorXd f = extract_features(m, kNorm);
  EXPECT_EQ(f.head(10).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LE(f.segment(10, 5).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(f.tail(3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Features, TimeReversalKeepsSpeedFeatures) {
  Rng rng = make_rng(75);
  const Motion2D m = random_walk_2d(rng, 40, 6);
  Motion2D r(40, 6);
  for (int l = 0; l < 40; ++l)
    for (int j = 0; j < 6; ++j) r(l, j) = m(39 - l, j);
  const Eigen::VectorXd a = extract_features(m, kNorm), b = extract_features(r, kNorm);
  EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Features, SpectralBandsLocateAPureTone) {
  // A sinusoid at 1/8 cycles per frame lands entirely in the middle band.
  Motion2D m(64, 1);
  for (int l = 0; l < 64; ++l) m(l, 0) = Eigen::Vector2d(std::sin(2 * std::numbers::pi * l / 8.0), 0.0);
  const Eigen::VectorXd f = extract_features(m, kNorm);
  EXPECT_NEAR(f(5), 0.0, 1e-12);
  EXPECT_NEAR(f(6), 1.0, 1e-12);
  EXPECT_NEAR(f(7), 0.0, 1e-12);
}

TEST(Features, TooShortRejected) {
  EXPECT_MAS_ERROR(extract_features(Motion2D(7, 3), kNorm), ErrorKind::TooShort);
  EXPECT_NO_THROW(extract_features(Motion2D(8, 3), kNorm));
}

TEST(BoneConsistency, GroundTruthIsRigid) {
  const Skeleton skel = Skeleton::human16_with_ball();
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (double cv : bone_length_consistency(sample_motion3d(skel, MotionFamilyParams{}, seed), skel)) EXPECT_LT(cv, 1e-9);
}

TEST(BoneConsistency, GrowsWithJitter) {
  const Skeleton skel = Skeleton::human16();
  const Motion3D X = sample_motion3d(skel, MotionFamilyParams{}, 3);
  double previous = -1.0;
  for (double sigma : {0.0, 0.005, 0.01, 0.02, 0.04, 0.08}) {
    Rng rng = make_rng(76);
    Motion3D J = X;
    for (int l = 0; l < J.frames(); ++l) J(l, 12) += sigma * Eigen::Vector3d(normal_motion<3>(1, 1, rng)(0, 0));
    const double cv = bone_length_consistency(J, skel)[11];  // bone ending at joint 12
    EXPECT_GT(cv, previous);
    previous = cv;
  }
}

TEST(BoneConsistency, RotationInvariant) {
  Rng rng = make_rng(77);
  const Skeleton skel = Skeleton::human16();
  Motion3D X = sample_motion3d(skel, MotionFamilyParams{}, 4);
  for (int l = 0; l < X.frames(); ++l) X(l, 5) += 0.02 * Eigen::Vector3d(normal_motion<3>(1, 1, rng)(0, 0));
  const Eigen::Matrix3d R = testing_support::random_rotation(rng);
  Motion3D Y = X;
  Y.points() = R * X.points();
  const auto a = bone_length_consistency(X, skel), b = bone_length_consistency(Y, skel);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  EXPECT_MAS_ERROR(bone_length_consistency(Motion3D(4, 3), skel), ErrorKind::ShapeMismatch);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_MAS_ERROR(median({}), ErrorKind::InsufficientSamples);
}

TEST(Protocol, ReproducibleAndSideBand) {
  const Skeleton skel = Skeleton::human16();
  std::vector<Motion3D> motions;
  for (std::uint64_t s = 0; s < 40; ++s) motions.push_back(sample_motion3d(skel, MotionFamilyParams{}, s));
  std::vector<double> ya, yb, ys;
  const auto a = random_projection_protocol(motions, CameraDistribution{}, 9, &ya);
  const auto b = random_projection_protocol(motions, CameraDistribution{}, 9, &yb);
  EXPECT_EQ(ya, yb);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].points(), b[i].points());
  random_projection_protocol(motions, side_view(CameraDistribution{}), 9, &ys);
  for (double y : ys) {
    EXPECT_GE(y, std::numbers::pi / 4);
    EXPECT_LE(y, 3 * std::numbers::pi / 4);
  }
}

TEST(Protocol, GroundTruthProjectionsSitAtSelfNoiseFloor) {
  // Reference: 400 dataset records. Generated: 200 held-out ground-truth 3D
  // motions re-projected by the protocol, the size of the floor's halves.
  const Skeleton skel = Skeleton::human16();
  const Dataset train = build_dataset(skel, MotionFamilyParams{}, 400, CameraDistribution{}, 80);
  const Dataset held = build_dataset(skel, MotionFamilyParams{}, 200, CameraDistribution{}, 81);
  std::vector<Motion2D> ref_records;
  for (const auto& r : train.records) ref_records.push_back(r.uv);
  const ReferenceFeatures ref = ReferenceFeatures::build(ref_records, train.manifest.normalization);
  EvalConfig cfg;
  cfg.seed = 5;
  const MetricsReport rep = evaluate_motions3d(held.ground_truth, ref, cfg);
  const MetricStat floor = self_noise_floor(ref, cfg);
  EXPECT_LT(rep.fid.mean, floor.hi());
  EXPECT_LT(std::abs(rep.precision.mean - rep.recall.mean), rep.precision.ci + rep.recall.ci + 0.05);
  EXPECT_EQ(rep.repeats, 10);
  EXPECT_EQ(rep.fid.values.size(), 10u);
  EXPECT_EQ(rep.generated_count, 200u);
  EXPECT_EQ(rep.feature_dim, 83);
  // Deterministic given the seed.
  EXPECT_EQ(evaluate_motions3d(held.ground_truth, ref, cfg).fid.values, rep.fid.values);
}

TEST(MetricStat, NormalIntervalOverRepeats) {
  const MetricStat s = MetricStat::of({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.ci, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_TRUE(disjoint(MetricStat::of({1.0, 1.1}), MetricStat::of({5.0, 5.1})));
  EXPECT_FALSE(disjoint(s, MetricStat::of({2.0, 3.0})));
}

TEST(MetricsReport, TextAndTableRow) {
  MetricsReport r;
  r.fid = MetricStat::of({1.0, 3.0});
  r.repeats = 2;
  const std::string text = r.to_text();
  EXPECT_NE(text.find("fid: 2\n"), std::string::npos);
  EXPECT_NE(text.find("repeats: 2\n"), std::string::npos);
  const auto tabs = [](const std::string& s) { return std::count(s.begin(), s.end(), '\t'); };
  EXPECT_EQ(tabs(r.table_row()), tabs(MetricsReport::table_header()));
}
