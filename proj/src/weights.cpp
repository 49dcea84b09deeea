#include "sdpd/weights.hpp"

#include "sdpd/errors.hpp"

#include <fmt/format.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sdpd {

SpatialWeights::SpatialWeights(Eigen::Index n, std::vector<std::vector<Eigen::Index>> neighbors,
                               std::vector<std::vector<double>> weights)
    : n_(n) {
  if (static_cast<Eigen::Index>(neighbors.size()) != n ||
      static_cast<Eigen::Index>(weights.size()) != n)
    throw ValidationError("weight rows do not match dimension");
  std::vector<Eigen::Triplet<double>> triplets;
  int common_k = neighbors.empty() ? 0 : static_cast<int>(neighbors[0].size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cols = neighbors[i];
    const auto& vals = weights[i];
    if (cols.size() != vals.size()) throw ValidationError("weight row length mismatch");
    if (static_cast<int>(cols.size()) != common_k) common_k = 0;
    for (std::size_t e = 0; e < cols.size(); ++e) {
      if (cols[e] < 0 || cols[e] >= n)
        throw ValidationError(fmt::format("neighbor index {} out of range in row {}", cols[e], i));
      if (cols[e] == i) throw ValidationError(fmt::format("self-neighbor in row {}", i));
      cols_.push_back(cols[e]);
      vals_.push_back(vals[e]);
      triplets.emplace_back(i, cols[e], vals[e]);
    }
    row_ptr_.push_back(static_cast<Eigen::Index>(cols_.size()));
  }
  k_ = common_k;
  sparse_.resize(n, n);
  sparse_.setFromTriplets(triplets.begin(), triplets.end());
  sparse_.makeCompressed();
}

Eigen::VectorXd SpatialWeights::lag(const Eigen::VectorXd& v) const {
  if (v.size() != n_)
    throw ValidationError(fmt::format("spatial lag: vector of length {} for n = {}", v.size(), n_));
  Eigen::VectorXd out(n_);
  for (Eigen::Index i = 0; i < n_; ++i) {
    double s = 0.0;
    for (auto e = row_ptr_[i]; e < row_ptr_[i + 1]; ++e) s += vals_[e] * v[cols_[e]];
    out[i] = s;
  }
  return out;
}

Eigen::MatrixXd SpatialWeights::lag(const Eigen::MatrixXd& m) const {
  if (m.rows() != n_)
    throw ValidationError(fmt::format("spatial lag: matrix with {} rows for n = {}", m.rows(), n_));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_, m.cols());
  for (Eigen::Index i = 0; i < n_; ++i)
    for (auto e = row_ptr_[i]; e < row_ptr_[i + 1]; ++e) out.row(i) += vals_[e] * m.row(cols_[e]);
  return out;
}

double SpatialWeights::max_row_sum_error() const {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n_; ++i) {
    double s = 0.0;
    for (auto e = row_ptr_[i]; e < row_ptr_[i + 1]; ++e) s += vals_[e];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

SpatialWeights SpatialWeights::permuted(std::span<const Eigen::Index> perm) const {
  if (static_cast<Eigen::Index>(perm.size()) != n_) throw ValidationError("permutation size");
  std::vector<Eigen::Index> inverse(n_, -1);
  for (Eigen::Index r = 0; r < n_; ++r) inverse[perm[r]] = r;
  if (std::find(inverse.begin(), inverse.end(), -1) != inverse.end())
    throw ValidationError("not a permutation");
  std::vector<std::vector<Eigen::Index>> nb(n_);
  std::vector<std::vector<double>> wt(n_);
  for (Eigen::Index r = 0; r < n_; ++r) {
    auto old = perm[r];
    for (auto e = row_ptr_[old]; e < row_ptr_[old + 1]; ++e) {
      nb[r].push_back(inverse[cols_[e]]);
      wt[r].push_back(vals_[e]);
    }
  }
  return SpatialWeights(n_, std::move(nb), std::move(wt));
}

double centroid_distance(const Coordinate& a, const Coordinate& b, DistanceMetric metric) {
  if (metric == DistanceMetric::planar) return std::hypot(a.lon - b.lon, a.lat - b.lat);
  constexpr double kRad = 3.14159265358979323846 / 180.0;
  constexpr double kEarthRadiusKm = 6371.0088;
  const double dlat = (b.lat - a.lat) * kRad;
  const double dlon = (b.lon - a.lon) * kRad;
  const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(a.lat * kRad) * std::cos(b.lat * kRad) * std::sin(dlon / 2) *
                       std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

SpatialWeights build_knn_weights(std::span<const Coordinate> centroids, int k,
                                 const KnnOptions& options) {
  const auto n = static_cast<Eigen::Index>(centroids.size());
  if (k < 1) throw ValidationError("k must be at least 1");
  if (k >= n)
    throw ValidationError(fmt::format("k = {} must be smaller than the number of units n = {}", k, n));
  for (const auto& c : centroids)
    if (!std::isfinite(c.lon) || !std::isfinite(c.lat))
      throw ValidationError("non-finite centroid");

  std::vector<std::vector<Eigen::Index>> nb(n);
  std::vector<std::vector<double>> wt(n, std::vector<double>(k, 1.0 / k));
  std::vector<std::pair<double, Eigen::Index>> cand(n - 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index m = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double d = centroid_distance(centroids[i], centroids[j], options.metric);
      if (d == 0.0 && !options.allow_duplicate_centroids)
        throw ValidationError(fmt::format("units {} and {} share the same centroid", std::min(i, j),
                                          std::max(i, j)));
      cand[m++] = {d, j};
    }
    // pair ordering: distance first, then ascending index.
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    nb[i].reserve(k);
    for (int e = 0; e < k; ++e) nb[i].push_back(cand[e].second);
    std::sort(nb[i].begin(), nb[i].end());
  }
  return SpatialWeights(n, std::move(nb), std::move(wt));
}

void write_weights(const SpatialWeights& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "i,j,w\n";
  for (Eigen::Index i = 0; i < w.n(); ++i) {
    auto nb = w.neighbors(i);
    auto wt = w.weights(i);
    for (std::size_t e = 0; e < nb.size(); ++e)
      out << fmt::format("{},{},{:.17g}\n", i, nb[e], wt[e]);
  }
}

SpatialWeights read_weights(const std::filesystem::path& path, Eigen::Index n) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("i,j,w", 0) != 0) throw ValidationError(path.string() + ": expected header i,j,w");
  std::vector<std::vector<Eigen::Index>> nb(n);
  std::vector<std::vector<double>> wt(n);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    Eigen::Index i = 0, j = 0;
    double v = 0;
    char c1 = 0, c2 = 0;
    if (!(ss >> i >> c1 >> j >> c2 >> v) || c1 != ',' || c2 != ',')
      throw ValidationError(fmt::format("{} line {}: malformed entry", path.string(), line_no));
    if (i < 0 || i >= n) throw ValidationError(fmt::format("row index {} out of range", i));
    nb[i].push_back(j);
    wt[i].push_back(v);
  }
  return SpatialWeights(n, std::move(nb), std::move(wt));
}

Eigen::VectorXd spatial_lag(const SpatialWeights& w, const Eigen::VectorXd& v) { return w.lag(v); }
Eigen::MatrixXd spatial_lag(const SpatialWeights& w, const Eigen::MatrixXd& m) { return w.lag(m); }

// --- Resolvent -------------------------------------------------------------

namespace {

// Solutions larger than this for unit-norm probes mean I - rho W is
// numerically singular.
constexpr double kSingularGrowth = 1e12;

SparseMatrix identity_minus(const SparseMatrix& w, double rho) {
  SparseMatrix id(w.rows(), w.cols());
  id.setIdentity();
  SparseMatrix a = id - rho * w;
  a.makeCompressed();
  return a;
}

}  // namespace

Resolvent::Resolvent(const SpatialWeights& w, double rho) : rho_(rho), n_(w.n()) {
  if (!std::isfinite(rho)) throw SingularResolventError("non-finite rho");
  SparseMatrix a = identity_minus(w.sparse(), rho);
  lu_.analyzePattern(a);
  lu_.factorize(a);
  const auto singular = [&] {
    return SingularResolventError(
        fmt::format("I - rho W is singular at rho = {:.10g}", rho));
  };
  if (lu_.info() != Eigen::Success) throw singular();
  log_abs_det_ = lu_.logAbsDeterminant();
  if (!std::isfinite(log_abs_det_)) throw singular();

  // Probe with the ones vector and an alternating vector: these hit the
  // eigenvalues 1 and -1 of row-stochastic W.
  Eigen::MatrixXd probes(n_, 2);
  for (Eigen::Index i = 0; i < n_; ++i) {
    probes(i, 0) = 1.0;
    probes(i, 1) = (i % 2 == 0) ? 1.0 : -1.0;
  }
  Eigen::MatrixXd x = lu_.solve(probes);
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > kSingularGrowth) throw singular();
}

Eigen::MatrixXd Resolvent::solve(const Eigen::MatrixXd& b) const {
  if (b.rows() != n_)
    throw ValidationError(fmt::format("resolvent solve: {} rows for n = {}", b.rows(), n_));
  Eigen::MatrixXd x = lu_.solve(b);
  return x;
}

Eigen::MatrixXd Resolvent::solve_transpose(const Eigen::MatrixXd& b) const {
  if (b.rows() != n_)
    throw ValidationError(fmt::format("resolvent solve: {} rows for n = {}", b.rows(), n_));
  Eigen::MatrixXd x = lu_.transpose().solve(b);
  return x;
}

Eigen::VectorXd Resolvent::inverse_diagonal() const {
  constexpr Eigen::Index kBlock = 64;
  Eigen::VectorXd diag(n_);
  for (Eigen::Index start = 0; start < n_; start += kBlock) {
    const auto m = std::min(kBlock, n_ - start);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n_, m);
    for (Eigen::Index c = 0; c < m; ++c) rhs(start + c, c) = 1.0;
    Eigen::MatrixXd x = lu_.solve(rhs);
    for (Eigen::Index c = 0; c < m; ++c) diag[start + c] = x(start + c, c);
  }
  return diag;
}

Eigen::VectorXd Resolvent::inverse_times_diagonal(const SparseMatrix& m) const {
  if (m.rows() != n_ || m.cols() != n_) throw ValidationError("dimension mismatch");
  constexpr Eigen::Index kBlock = 64;
  Eigen::VectorXd diag(n_);
  for (Eigen::Index start = 0; start < n_; start += kBlock) {
    const auto cnt = std::min(kBlock, n_ - start);
    Eigen::MatrixXd rhs = Eigen::MatrixXd(m.middleCols(start, cnt));
    Eigen::MatrixXd x = lu_.solve(rhs);
    for (Eigen::Index c = 0; c < cnt; ++c) diag[start + c] = x(start + c, c);
  }
  return diag;
}

// --- Spectrum --------------------------------------------------------------

WeightsSpectrum::WeightsSpectrum(const SpatialWeights& w) {
  if (w.n() > kMaxDimension)
    throw ValidationError(fmt::format("eigenvalue path limited to n <= {}, got {}",
                                      kMaxDimension, w.n()));
  Eigen::EigenSolver<Eigen::MatrixXd> solver(w.dense(), false);
  if (solver.info() != Eigen::Success)
    throw EstimationError("eigenvalue decomposition of W failed");
  const auto& ev = solver.eigenvalues();
  eigenvalues_.assign(ev.data(), ev.data() + ev.size());
}

double WeightsSpectrum::log_abs_det(double rho) const {
  double s = 0.0;
  for (const auto& lam : eigenvalues_) s += std::log(std::abs(1.0 - rho * lam));
  return s;
}

double WeightsSpectrum::log_abs_det_derivative(double rho) const {
  double s = 0.0;
  for (const auto& lam : eigenvalues_) s -= (lam / (1.0 - rho * lam)).real();
  return s;
}

// --- Cache -----------------------------------------------------------------

ResolventCache::ResolventCache(std::shared_ptr<const SpatialWeights> w, std::size_t capacity)
    : w_(std::move(w)), capacity_(std::max<std::size_t>(capacity, 1)) {}

std::shared_ptr<const Resolvent> ResolventCache::get(double rho) const {
  {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(rho);
    if (it != entries_.end()) return it->second;
  }
  auto fresh = std::make_shared<const Resolvent>(*w_, rho);
  std::lock_guard lock(mutex_);
  auto [it, inserted] = entries_.emplace(rho, fresh);
  if (inserted && entries_.size() > capacity_) {
    // Evict an arbitrary entry other than the new one.
    auto victim = entries_.begin() == it ? std::next(entries_.begin()) : entries_.begin();
    entries_.erase(victim);
  }
  return it->second;
}

std::size_t ResolventCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

double log_det_resolvent(const SpatialWeights& w, double rho) {
  if (rho == 0.0) return 0.0;
  return Resolvent(w, rho).log_abs_det();
}

Eigen::MatrixXd solve_resolvent(const SpatialWeights& w, double rho, const Eigen::MatrixXd& b) {
  if (b.rows() != w.n())
    throw ValidationError(fmt::format("resolvent solve: {} rows for n = {}", b.rows(), w.n()));
  if (rho == 0.0) return b;
  return Resolvent(w, rho).solve(b);
}

}  // namespace sdpd
