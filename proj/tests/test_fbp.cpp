#include <gtest/gtest.h>

#include "nett/fbp.hpp"

using namespace nett;

TEST(FbpConfig, FilterNames) {
  EXPECT_EQ(parse_fbp_filter("log_kernel"), FbpFilter::log_kernel);
  EXPECT_EQ(parse_fbp_filter("ram-lak-style"), FbpFilter::log_kernel);
  EXPECT_EQ(parse_fbp_filter("derivative2"), FbpFilter::derivative2);
  EXPECT_THROW(parse_fbp_filter("hann"), InvalidArgument);
  EXPECT_EQ(FbpConfig{}.filter, FbpFilter::log_kernel);
}

TEST(FbpKernel, AntiderivativeOfLog) {
  // d/dt (t log|t| - t) = log|t|; check by central difference.
  for (double t : {-2.0, -0.3, 0.7, 1.9}) {
    const double h = 1e-6;
    const double num = (fbp_detail::xlogx_minus_x(t + h) - fbp_detail::xlogx_minus_x(t - h)) / (2 * h);
    EXPECT_NEAR(num, std::log(std::abs(t)), 1e-8);
  }
  EXPECT_EQ(fbp_detail::xlogx_minus_x(0.0), 0.0);
}

TEST(Fbp, StoredCalibrationMatchesRecomputation) {
  EXPECT_NEAR(calibrate_fbp_scale(FbpFilter::log_kernel, PatGeometry::desk_full()), FbpConfig::kLogKernelScale,
              1e-12 * FbpConfig::kLogKernelScale);
}

TEST(Fbp, FullSamplingDiscIsAccurate) {
  const PatOperator op(PatGeometry::desk_full());
  const Image disc = disc_phantom(64);
  const Image rec = fbp_reconstruct(op, FbpConfig{}, op.apply(disc));
  EXPECT_LE(relative_error(disc, rec), 0.15);
}

TEST(Fbp, SparseSamplingIsWorse) {
  const PatOperator full(PatGeometry::desk_full());
  const PatOperator sparse(PatGeometry::desk_sparse());
  const Image disc = disc_phantom(64);
  const double ef = relative_error(disc, fbp_reconstruct(full, FbpConfig{}, full.apply(disc)));
  const double es = relative_error(disc, fbp_reconstruct(sparse, FbpConfig{}, sparse.apply(disc)));
  EXPECT_GT(es, ef);
}

TEST(Fbp, ZeroDataAndLinearity) {
  const PatOperator op(PatGeometry::desk_sparse());
  const FbpReconstructor rec(op, FbpConfig{});
  EXPECT_EQ(norm2(rec.reconstruct(op.range_zero())), 0.0);
  SeededRng rng(4);
  Sinogram a = op.range_zero(), b = op.range_zero();
  for (double& v : a.values()) v = rng.normal();
  for (double& v : b.values()) v = rng.normal();
  const Image lhs = rec.reconstruct(2.0 * a + b);
  const Image rhs = 2.0 * rec.reconstruct(a) + rec.reconstruct(b);
  EXPECT_LE(distance(lhs, rhs), 1e-12 * norm2(rhs));
}

TEST(Fbp, ShapeMismatch) {
  const PatOperator op(PatGeometry::desk_sparse());
  EXPECT_THROW(fbp_reconstruct(op, FbpConfig{}, Sinogram(3, 3)), ShapeError);
}

TEST(Fbp, Derivative2FilterRemainsAvailable) {
  const PatOperator op(PatGeometry::desk_full());
  const Image disc = disc_phantom(64);
  const Image rec = fbp_reconstruct(op, FbpConfig{FbpFilter::derivative2, 0.0}, op.apply(disc));
  EXPECT_TRUE(rec.all_finite());
  EXPECT_GT(norm2(rec), 0.0);
}
