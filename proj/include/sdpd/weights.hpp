#pragma once

#include "sdpd/panel.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <complex>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace sdpd {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor>;

// Time-invariant spatial weight matrix in compressed-row form. Immutable once
// built; safe to share across threads.
class SpatialWeights {
 public:
  SpatialWeights() = default;
  // Rows given as parallel (column, weight) lists. Diagonal entries and
  // out-of-range columns are rejected.
  SpatialWeights(Eigen::Index n, std::vector<std::vector<Eigen::Index>> neighbors,
                 std::vector<std::vector<double>> weights);

  Eigen::Index n() const { return n_; }
  // Neighbor count when every row has the same number of nonzeros, else 0.
  int k() const { return k_; }
  Eigen::Index nonzeros() const { return static_cast<Eigen::Index>(cols_.size()); }

  std::span<const Eigen::Index> neighbors(Eigen::Index i) const {
    return {cols_.data() + row_ptr_[i], cols_.data() + row_ptr_[i + 1]};
  }
  std::span<const double> weights(Eigen::Index i) const {
    return {vals_.data() + row_ptr_[i], vals_.data() + row_ptr_[i + 1]};
  }

  const SparseMatrix& sparse() const { return sparse_; }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(sparse_); }

  Eigen::VectorXd lag(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd lag(const Eigen::MatrixXd& m) const;

  double max_row_sum_error() const;

  // Relabels units: new unit r is old unit perm[r].
  SpatialWeights permuted(std::span<const Eigen::Index> perm) const;

 private:
  Eigen::Index n_ = 0;
  int k_ = 0;
  std::vector<Eigen::Index> row_ptr_{0};
  std::vector<Eigen::Index> cols_;
  std::vector<double> vals_;
  SparseMatrix sparse_;
};

enum class DistanceMetric { planar, great_circle };

struct KnnOptions {
  DistanceMetric metric = DistanceMetric::planar;
  // Identical centroids are rejected unless this is set, in which case the
  // index tie-break decides among them.
  bool allow_duplicate_centroids = false;
};

// Row i holds the k nearest other units with weight 1/k each. Distance ties
// are broken by ascending unit index.
SpatialWeights build_knn_weights(std::span<const Coordinate> centroids, int k,
                                 const KnnOptions& options = {});

double centroid_distance(const Coordinate& a, const Coordinate& b, DistanceMetric metric);

// Neighbor graph as delimited text: header "i,j,w", zero-based indices.
void write_weights(const SpatialWeights& w, const std::filesystem::path& path);
SpatialWeights read_weights(const std::filesystem::path& path, Eigen::Index n);

Eigen::VectorXd spatial_lag(const SpatialWeights& w, const Eigen::VectorXd& v);
Eigen::MatrixXd spatial_lag(const SpatialWeights& w, const Eigen::MatrixXd& m);

// Sparse LU factorization of A = I - rho W.
class Resolvent {
 public:
  Resolvent(const SpatialWeights& w, double rho);

  double rho() const { return rho_; }
  Eigen::Index n() const { return n_; }
  double log_abs_det() const { return log_abs_det_; }

  // Solves A X = B.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const;
  // Solves A' X = B.
  Eigen::MatrixXd solve_transpose(const Eigen::MatrixXd& b) const;
  // diag(A^{-1}).
  Eigen::VectorXd inverse_diagonal() const;
  // diag(A^{-1} M) for a sparse n x n matrix M.
  Eigen::VectorXd inverse_times_diagonal(const SparseMatrix& m) const;

 private:
  double rho_;
  Eigen::Index n_;
  double log_abs_det_ = 0.0;
  mutable Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
};

// Eigenvalues of W for repeated log-determinant evaluations.
class WeightsSpectrum {
 public:
  static constexpr Eigen::Index kMaxDimension = 5000;

  explicit WeightsSpectrum(const SpatialWeights& w);

  std::span<const std::complex<double>> eigenvalues() const { return eigenvalues_; }
  // sum ln|1 - rho lambda_i|
  double log_abs_det(double rho) const;
  // d/drho of log_abs_det
  double log_abs_det_derivative(double rho) const;

 private:
  std::vector<std::complex<double>> eigenvalues_;
};

// Per-rho factorizations shared across callers. Factorization runs outside
// the lock; the first finished writer wins and later ones reuse its entry.
class ResolventCache {
 public:
  explicit ResolventCache(std::shared_ptr<const SpatialWeights> w, std::size_t capacity = 32);

  std::shared_ptr<const Resolvent> get(double rho) const;
  const SpatialWeights& weights() const { return *w_; }
  std::size_t size() const;

 private:
  std::shared_ptr<const SpatialWeights> w_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  mutable std::map<double, std::shared_ptr<const Resolvent>> entries_;
};

// ln|det(I - rho W)| by sparse LU. Throws SingularResolventError.
double log_det_resolvent(const SpatialWeights& w, double rho);

// X with (I - rho W) X = B.
Eigen::MatrixXd solve_resolvent(const SpatialWeights& w, double rho, const Eigen::MatrixXd& b);

}  // namespace sdpd
