#pragma once

#include "sdpd/panel.hpp"
#include "sdpd/weights.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <random>
#include <string>
#include <vector>

namespace sdpd::testing {

inline std::vector<Coordinate> random_coordinates(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::vector<Coordinate> c(n);
  for (auto& p : c) p = {u(rng), u(rng)};
  return c;
}

inline SpatialWeights random_weights(Eigen::Index n, int k, std::uint64_t seed) {
  return build_knn_weights(random_coordinates(n, seed), k);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = z(rng);
  return m;
}

// Panel with labels filled in and the given covariates.
inline PanelDataset labelled_panel(const Eigen::MatrixXd& y,
                                   std::vector<std::pair<std::string, Eigen::MatrixXd>> covs = {},
                                   std::vector<Coordinate> centroids = {}) {
  PanelDataset p;
  p.y = y;
  for (auto& [name, m] : covs) p.covariates.emplace(name, m);
  if (centroids.empty()) centroids = random_coordinates(y.rows(), 99);
  p.centroids = centroids;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    p.unit_ids.push_back(fmt::format("u{}", i));
    p.country_of_unit.push_back("c");
  }
  for (Eigen::Index t = 0; t < y.cols(); ++t) p.period_ids.push_back(static_cast<int>(2000 + t));
  return p;
}

// Dense (I - rho W)^{-1}.
inline Eigen::MatrixXd dense_resolvent(const SpatialWeights& w, double rho) {
  const Eigen::Index n = w.n();
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - rho * w.dense();
  return a.partialPivLu().inverse();
}

struct DenseSummary {
  double direct, indirect, total;
};

inline DenseSummary dense_summary(const Eigen::MatrixXd& m) {
  const auto n = static_cast<double>(m.rows());
  const double diag = m.diagonal().sum();
  const double all = m.sum();
  return {diag / n, (all - diag) / (n * (n - 1.0)), all / n};
}

}  // namespace sdpd::testing
