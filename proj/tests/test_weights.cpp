#include "sdpd/errors.hpp"
#include "sdpd/weights.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

using namespace sdpd;
using sdpd::testing::dense_resolvent;
using sdpd::testing::random_coordinates;
using sdpd::testing::random_matrix;
using sdpd::testing::random_weights;

namespace {

std::vector<Coordinate> grid3() {
  std::vector<Coordinate> c;
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 3; ++col) c.push_back({static_cast<double>(col), static_cast<double>(r)});
  return c;
}

std::vector<Eigen::Index> sorted_neighbors(const SpatialWeights& w, Eigen::Index i) {
  auto s = w.neighbors(i);
  std::vector<Eigen::Index> v(s.begin(), s.end());
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(KnnWeights, CornerCellOnGrid) {
  const auto w = build_knn_weights(grid3(), 2);
  // Cell (0,0) is index 0; (0,1) and (1,0) are indices 1 and 3.
  EXPECT_EQ(sorted_neighbors(w, 0), (std::vector<Eigen::Index>{1, 3}));
  for (double v : w.weights(0)) EXPECT_EQ(v, 0.5);
}

TEST(KnnWeights, CenterCellTieBreakOracle) {
  const auto c = grid3();
  const auto w = build_knn_weights(c, 2);
  // Exhaustive sort by (distance, index).
  std::vector<std::pair<double, Eigen::Index>> d;
  for (Eigen::Index j = 0; j < 9; ++j)
    if (j != 4) d.push_back({std::hypot(c[j].lon - c[4].lon, c[j].lat - c[4].lat), j});
  std::sort(d.begin(), d.end());
  std::vector<Eigen::Index> oracle = {d[0].second, d[1].second};
  std::sort(oracle.begin(), oracle.end());
  EXPECT_EQ(sorted_neighbors(w, 4), oracle);
  EXPECT_EQ(oracle, (std::vector<Eigen::Index>{1, 3}));
}

TEST(KnnWeights, RowsAreStochasticWithZeroDiagonal) {
  for (int k : {1, 4, 11}) {
    const auto w = random_weights(60, k, 3);
    EXPECT_EQ(w.k(), k);
    // k copies of fl(1/k) need not sum to 1 in floating point.
    EXPECT_LE(w.max_row_sum_error(), k * std::numeric_limits<double>::epsilon());
    const auto d = w.dense();
    for (Eigen::Index i = 0; i < 60; ++i) {
      EXPECT_EQ(d(i, i), 0.0);
      EXPECT_EQ(w.neighbors(i).size(), static_cast<std::size_t>(k));
      EXPECT_DOUBLE_EQ(d.row(i).sum(), 1.0);
    }
  }
}

TEST(KnnWeights, Deterministic) {
  const auto c = random_coordinates(80, 5);
  const auto a = build_knn_weights(c, 6);
  const auto b = build_knn_weights(c, 6);
  for (Eigen::Index i = 0; i < 80; ++i) {
    EXPECT_TRUE(std::equal(a.neighbors(i).begin(), a.neighbors(i).end(), b.neighbors(i).begin()));
  }
}

TEST(KnnWeights, MatchesBruteForceNearest) {
  const auto c = random_coordinates(40, 9);
  const auto w = build_knn_weights(c, 5);
  for (Eigen::Index i = 0; i < 40; ++i) {
    std::vector<std::pair<double, Eigen::Index>> d;
    for (Eigen::Index j = 0; j < 40; ++j)
      if (j != i) d.push_back({std::hypot(c[j].lon - c[i].lon, c[j].lat - c[i].lat), j});
    std::sort(d.begin(), d.end());
    std::vector<Eigen::Index> oracle;
    for (int h = 0; h < 5; ++h) oracle.push_back(d[h].second);
    std::sort(oracle.begin(), oracle.end());
    EXPECT_EQ(sorted_neighbors(w, i), oracle);
  }
}

TEST(KnnWeights, Errors) {
  const auto c = grid3();
  try {
    build_knn_weights(c, 9);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("9"), std::string::npos);
  }
  EXPECT_THROW(build_knn_weights(c, 0), ValidationError);
  auto dup = c;
  dup[5] = dup[2];
  EXPECT_THROW(build_knn_weights(dup, 2), ValidationError);
  KnnOptions allow;
  allow.allow_duplicate_centroids = true;
  EXPECT_NO_THROW(build_knn_weights(dup, 2, allow));
  EXPECT_THROW(SpatialWeights(2, {{0}, {0}}, {{1.0}, {1.0}}), ValidationError);
}

TEST(KnnWeights, GreatCircleOption) {
  // Near the pole, longitude spacing shrinks: the great-circle metric picks the
  // east-west neighbor, the planar metric does not.
  std::vector<Coordinate> c = {{0.0, 80.0}, {3.0, 80.0}, {0.0, 78.0}};
  const auto planar = build_knn_weights(c, 1);
  KnnOptions gc;
  gc.metric = DistanceMetric::great_circle;
  const auto sphere = build_knn_weights(c, 1, gc);
  EXPECT_EQ(planar.neighbors(0)[0], 2);
  EXPECT_EQ(sphere.neighbors(0)[0], 1);
}

TEST(SpatialLag, OnesZerosAndDenseOracle) {
  const auto w = build_knn_weights(grid3(), 2);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(9);
  EXPECT_LE((spatial_lag(w, ones) - ones).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(spatial_lag(w, Eigen::VectorXd(Eigen::VectorXd::Zero(9))).cwiseAbs().maxCoeff(), 0.0);
  const Eigen::VectorXd v = random_matrix(9, 1, 3);
  EXPECT_LE((spatial_lag(w, v) - w.dense() * v).cwiseAbs().maxCoeff(), 1e-14);
  const Eigen::MatrixXd m = random_matrix(9, 4, 4);
  EXPECT_LE((spatial_lag(w, m) - w.dense() * m).cwiseAbs().maxCoeff(), 1e-14);
  // Neighbor mean.
  for (Eigen::Index i = 0; i < 9; ++i) {
    double s = 0.0;
    for (auto j : w.neighbors(i)) s += v[j];
    EXPECT_NEAR(spatial_lag(w, v)[i], s / 2.0, 1e-15);
  }
  EXPECT_THROW(spatial_lag(w, Eigen::VectorXd(Eigen::VectorXd::Ones(8))), ValidationError);
}

TEST(LogDet, IdentityAtZero) {
  const auto w = random_weights(30, 3, 1);
  EXPECT_EQ(log_det_resolvent(w, 0.0), 0.0);
}

TEST(LogDet, TwoUnitClosedForm) {
  const auto w = build_knn_weights(std::vector<Coordinate>{{0, 0}, {1, 0}}, 1);
  EXPECT_NEAR(log_det_resolvent(w, 0.5), std::log(0.75), 1e-14);
  EXPECT_NEAR(log_det_resolvent(w, 0.5), -0.28768, 1e-5);
  for (double rho : {-0.7, 0.2, 0.9}) EXPECT_NEAR(log_det_resolvent(w, rho), std::log(1 - rho * rho), 1e-13);
  EXPECT_THROW(log_det_resolvent(w, 1.0), SingularResolventError);
}

TEST(LogDet, DenseLuOracle) {
  const auto w = random_weights(50, 4, 7);
  for (double rho : {-0.5, 0.3, 0.9}) {
    const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(50, 50) - rho * w.dense();
    const auto lu = a.partialPivLu();
    double oracle = 0.0;
    for (Eigen::Index i = 0; i < 50; ++i) oracle += std::log(std::abs(lu.matrixLU()(i, i)));
    EXPECT_NEAR(log_det_resolvent(w, rho), oracle, 1e-8);
  }
}

TEST(LogDet, SpectrumAgreesWithLu) {
  const auto w = random_weights(100, 5, 8);
  const WeightsSpectrum spec(w);
  for (double rho : {-0.9, -0.2, 0.4, 0.95}) {
    EXPECT_NEAR(spec.log_abs_det(rho), log_det_resolvent(w, rho), 1e-8);
    const double h = 1e-6;
    const double fd = (spec.log_abs_det(rho + h) - spec.log_abs_det(rho - h)) / (2 * h);
    EXPECT_NEAR(spec.log_abs_det_derivative(rho), fd, 1e-5);
  }
}

TEST(Resolvent, SolveExamples) {
  const auto w = random_weights(50, 4, 2);
  const Eigen::MatrixXd b = random_matrix(50, 3, 5);
  EXPECT_EQ(solve_resolvent(w, 0.0, b), b);
  for (double rho : {-0.5, 0.0, 0.5, 0.9}) {
    const Eigen::VectorXd x = solve_resolvent(w, rho, Eigen::VectorXd::Ones(50));
    EXPECT_LE((x.array() - 1.0 / (1.0 - rho)).abs().maxCoeff(), 1e-10);
  }
  const double rho = 0.7;
  const Eigen::MatrixXd x = solve_resolvent(w, rho, b);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(50, 50) - rho * w.dense();
  EXPECT_LE((a * x - b).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((x - a.partialPivLu().solve(b)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Resolvent, DiagonalsAndTranspose) {
  const auto w = random_weights(70, 3, 4);
  const Resolvent r(w, 0.6);
  const Eigen::MatrixXd inv = dense_resolvent(w, 0.6);
  EXPECT_LE((r.inverse_diagonal() - inv.diagonal()).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::VectorXd dw = r.inverse_times_diagonal(w.sparse());
  EXPECT_LE((dw - (inv * w.dense()).diagonal()).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd b = random_matrix(70, 2, 1);
  EXPECT_LE((r.solve_transpose(b) - inv.transpose() * b).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Resolvent, CacheSharesFactorizations) {
  auto w = std::make_shared<const SpatialWeights>(random_weights(40, 3, 1));
  ResolventCache cache(w, 4);
  std::vector<std::thread> threads;
  std::vector<std::shared_ptr<const Resolvent>> got(8);
  for (int t = 0; t < 8; ++t) threads.emplace_back([&, t] { got[t] = cache.get(0.25 * (t % 2)); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(cache.size(), 2u);
  for (int t = 2; t < 8; ++t) EXPECT_EQ(got[t]->rho(), got[t % 2]->rho());
  EXPECT_EQ(cache.get(0.25).get(), cache.get(0.25).get());
  for (double r : {0.1, 0.2, 0.3, 0.4, 0.5}) cache.get(r);
  EXPECT_LE(cache.size(), 4u);
}

TEST(WeightsIo, RoundTrip) {
  const auto w = random_weights(25, 3, 6);
  const auto path = std::filesystem::path(SDPD_SCRATCH_DIR) / "weights.csv";
  std::filesystem::create_directories(path.parent_path());
  write_weights(w, path);
  const auto r = read_weights(path, 25);
  EXPECT_EQ(r.dense(), w.dense());
}

TEST(Weights, PermutationRelabelsUnits) {
  const auto w = random_weights(20, 3, 6);
  std::vector<Eigen::Index> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  const auto p = w.permuted(perm);
  const auto a = w.dense(), b = p.dense();
  for (Eigen::Index r = 0; r < 20; ++r)
    for (Eigen::Index c = 0; c < 20; ++c) EXPECT_EQ(b(r, c), a(perm[r], perm[c]));
}
