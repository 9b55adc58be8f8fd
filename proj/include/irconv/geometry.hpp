#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "irconv/tensor.hpp"

namespace irconv {

// A point cloud: positions (N,3) plus per-point features (N,C), C >= 0.
template <class Real> struct PointCloud {
  Tensor<Real> positions; // (N, 3)
  Tensor<Real> features;  // (N, C)

  std::int64_t n() const { return positions.shape.empty() ? 0 : positions.shape[0]; }
  std::int64_t channels() const {
    return features.shape.size() == 2 ? features.shape[1] : 0;
  }
};

template <class Real> PointCloud<Real> make_cloud(Tensor<Real> positions) {
  PointCloud<Real> c;
  std::int64_t n = positions.shape.empty() ? 0 : positions.shape[0];
  c.positions = std::move(positions);
  c.features = Tensor<Real>({n, 0});
  return c;
}

template <class Real>
PointCloud<Real> make_cloud(Tensor<Real> positions, Tensor<Real> features) {
  PointCloud<Real> c;
  c.positions = std::move(positions);
  c.features = std::move(features);
  return c;
}

template <class Real> void validate_cloud(const PointCloud<Real> &c) {
  if (c.positions.shape.size() != 2 || c.positions.shape[1] != 3)
    throw std::invalid_argument("point cloud: positions must be (N,3), got " +
                                shape_str(c.positions.shape));
  if (c.positions.shape[0] < 1)
    throw std::invalid_argument("point cloud: must contain at least one point");
  if (c.features.shape.size() != 2 || c.features.shape[0] != c.positions.shape[0])
    throw std::invalid_argument("point cloud: features " +
                                shape_str(c.features.shape) +
                                " do not match positions " +
                                shape_str(c.positions.shape));
  if (!c.positions.all_finite() || !c.features.all_finite())
    throw std::invalid_argument("point cloud: non-finite coordinate or feature");
}

template <class Real>
inline Real sq_dist3(const Tensor<Real> &p, std::int64_t i, std::int64_t j) {
  Real dx = p[i * 3 + 0] - p[j * 3 + 0];
  Real dy = p[i * 3 + 1] - p[j * 3 + 1];
  Real dz = p[i * 3 + 2] - p[j * 3 + 2];
  return dx * dx + dy * dy + dz * dz;
}

// k-nearest-neighbour graph, exact (brute force).  neighbors is flat (N,k):
// row i lists the neighbourhood of point i.  With include_self (the default)
// the point itself is listed first and the remaining k-1 slots hold the
// nearest other points; distance ties break toward the smaller point index.
struct KnnGraph {
  std::int64_t n = 0;
  std::int64_t k = 0;
  bool include_self = true;
  std::vector<std::int64_t> neighbors; // (n * k)

  std::int64_t at(std::int64_t i, std::int64_t j) const {
    return neighbors[static_cast<std::size_t>(i * k + j)];
  }
};

template <class Real>
KnnGraph build_knn_graph(const Tensor<Real> &positions, std::int64_t k,
                         bool include_self = true) {
  if (positions.shape.size() != 2 || positions.shape[1] != 3)
    throw std::invalid_argument("knn: positions must be (N,3), got " +
                                shape_str(positions.shape));
  const std::int64_t n = positions.shape[0];
  const std::int64_t others = include_self ? k - 1 : k;
  if (k < 1)
    throw std::invalid_argument("knn: k must be at least 1, got " + std::to_string(k));
  if (others > n - 1)
    throw std::invalid_argument("knn: k=" + std::to_string(k) + " (include_self=" +
                                (include_self ? "true" : "false") +
                                ") needs more neighbours than the " +
                                std::to_string(n) + "-point cloud provides");
  KnnGraph g;
  g.n = n;
  g.k = k;
  g.include_self = include_self;
  g.neighbors.resize(static_cast<std::size_t>(n * k));
  std::vector<std::pair<Real, std::int64_t>> cand;
  cand.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    cand.clear();
    for (std::int64_t j = 0; j < n; ++j)
      if (j != i) cand.emplace_back(sq_dist3(positions, i, j), j);
    std::partial_sort(cand.begin(), cand.begin() + others, cand.end());
    std::int64_t *row = g.neighbors.data() + i * k;
    std::int64_t w = 0;
    if (include_self) row[w++] = i;
    for (std::int64_t j = 0; j < others; ++j) row[w++] = cand[j].second;
  }
  return g;
}

// Greedy farthest point sampling.  Starts from `start`, then repeatedly
// selects the point with the largest distance to the already-selected set;
// ties break toward the smaller index.  Returns m point indices in selection
// order.
template <class Real>
std::vector<std::int64_t> farthest_point_sample(const Tensor<Real> &positions,
                                                std::int64_t m,
                                                std::int64_t start = 0) {
  if (positions.shape.size() != 2 || positions.shape[1] != 3)
    throw std::invalid_argument("fps: positions must be (N,3), got " +
                                shape_str(positions.shape));
  const std::int64_t n = positions.shape[0];
  if (m < 1 || m > n)
    throw std::invalid_argument("fps: sample count " + std::to_string(m) +
                                " out of range for " + std::to_string(n) + " points");
  if (start < 0 || start >= n)
    throw std::invalid_argument("fps: start index " + std::to_string(start) +
                                " out of range");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(m));
  std::vector<Real> min_d(static_cast<std::size_t>(n),
                          std::numeric_limits<Real>::max());
  std::int64_t cur = start;
  out.push_back(cur);
  for (std::int64_t round = 1; round < m; ++round) {
    std::int64_t best = -1;
    Real best_d = -Real(1);
    for (std::int64_t j = 0; j < n; ++j) {
      min_d[j] = std::min(min_d[j], sq_dist3(positions, j, cur));
      if (min_d[j] > best_d) {
        best_d = min_d[j];
        best = j;
      }
    }
    cur = best;
    out.push_back(cur);
  }
  return out;
}

// Gather a sub-cloud at the given indices (positions and features).
template <class Real>
PointCloud<Real> subsample(const PointCloud<Real> &c,
                           const std::vector<std::int64_t> &idx) {
  const std::int64_t cch = c.channels();
  PointCloud<Real> out;
  out.positions = Tensor<Real>({static_cast<std::int64_t>(idx.size()), 3});
  out.features = Tensor<Real>({static_cast<std::int64_t>(idx.size()), cch});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= c.n())
      throw std::invalid_argument("subsample: index " + std::to_string(idx[r]) +
                                  " out of range");
    for (std::int64_t d = 0; d < 3; ++d)
      out.positions[static_cast<std::int64_t>(r) * 3 + d] =
          c.positions[idx[r] * 3 + d];
    for (std::int64_t d = 0; d < cch; ++d)
      out.features[static_cast<std::int64_t>(r) * cch + d] =
          c.features[idx[r] * cch + d];
  }
  return out;
}

// Mean distance between each point and its non-self graph neighbours; serves
// as the KDE bandwidth.  Requires the graph to contain at least one non-self
// neighbour per point.
template <class Real>
Real kernel_bandwidth(const Tensor<Real> &positions, const KnnGraph &g) {
  if (g.k < (g.include_self ? 2 : 1))
    throw std::invalid_argument("kernel_bandwidth: graph needs at least one "
                                "non-self neighbour per point (k >= 2 with self)");
  double acc = 0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < g.n; ++i)
    for (std::int64_t jj = 0; jj < g.k; ++jj) {
      std::int64_t j = g.at(i, jj);
      if (j == i) continue;
      acc += std::sqrt(static_cast<double>(sq_dist3(positions, i, j)));
      ++count;
    }
  if (count == 0)
    throw std::invalid_argument("kernel_bandwidth: no non-self neighbour pairs");
  return static_cast<Real>(acc / static_cast<double>(count));
}

template <class Real> struct DensityEstimate {
  Real sigma = 0;
  std::vector<Real> values; // one per point, >= 1 when the graph has self loops
};

// Unnormalized Gaussian KDE truncated to the k-neighbourhood:
//   mu_i = sum_{j in N(i)} exp(-|p_i - p_j|^2 / (2 sigma^2)).
// The self term contributes exactly 1.
template <class Real>
DensityEstimate<Real> kde_density(const Tensor<Real> &positions, const KnnGraph &g,
                                  Real sigma) {
  if (!(sigma > Real(0)))
    throw std::invalid_argument("kde_density: bandwidth must be positive, got " +
                                std::to_string(static_cast<double>(sigma)));
  DensityEstimate<Real> out;
  out.sigma = sigma;
  out.values.resize(static_cast<std::size_t>(g.n));
  const Real inv = Real(1) / (Real(2) * sigma * sigma);
  for (std::int64_t i = 0; i < g.n; ++i) {
    Real acc = 0;
    for (std::int64_t jj = 0; jj < g.k; ++jj)
      acc += std::exp(-sq_dist3(positions, i, g.at(i, jj)) * inv);
    out.values[static_cast<std::size_t>(i)] = acc;
  }
  return out;
}

} // namespace irconv
