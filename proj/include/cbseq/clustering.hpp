#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

#include "cbseq/channeling.hpp"
#include "cbseq/core.hpp"

namespace cbseq {

constexpr double kDefaultEps = 1.0;
constexpr int kDefaultMinPts = 1;
constexpr double kDefaultSliceSeconds = 14400.0;  // 4 hours

/// Per-feature log1p followed by z-score, fit on one time slice. Byte
/// counts span orders of magnitude, so a unit-scale eps is only
/// meaningful after this normalization. A constant feature maps to 0.
struct FeatureScaler {
  std::array<double, 5> mean{};
  std::array<double, 5> stddev{};

  static FeatureScaler fit(const std::vector<std::array<double, 5>>& points) {
    FeatureScaler s;
    if (points.empty()) {
      s.stddev.fill(1.0);
      return s;
    }
    for (int d = 0; d < 5; ++d) {
      double sum = 0.0;
      for (const auto& p : points) sum += std::log1p(p[d]);
      s.mean[d] = sum / static_cast<double>(points.size());
      double var = 0.0;
      for (const auto& p : points) {
        double x = std::log1p(p[d]) - s.mean[d];
        var += x * x;
      }
      var /= static_cast<double>(points.size());
      s.stddev[d] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return s;
  }

  std::array<double, 5> transform(const std::array<double, 5>& p) const {
    std::array<double, 5> out;
    for (int d = 0; d < 5; ++d)
      out[d] = (std::log1p(p[d]) - mean[d]) / stddev[d];
    return out;
  }
};

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

 private:
  std::vector<std::size_t> parent_;
};

inline double sq_dist(const std::array<double, 5>& a,
                      const std::array<double, 5>& b) {
  double s = 0.0;
  for (int d = 0; d < 5; ++d) {
    double x = a[d] - b[d];
    s += x * x;
  }
  return s;
}

}  // namespace detail

/// DBSCAN cluster assignment, -1 for noise. With min_pts = 1 every point
/// is core, so the result is exactly the connected components of the
/// eps-neighborhood graph (computed by union-find, which makes the
/// partition independent of input order). For min_pts > 1 the standard
/// core/border semantics apply; border points attach to the first core
/// cluster that reaches them in index order.
inline std::vector<int> dbscan(const std::vector<std::array<double, 5>>& points,
                               double eps = kDefaultEps,
                               int min_pts = kDefaultMinPts) {
  const std::size_t n = points.size();
  const double eps2 = eps * eps;
  std::vector<int> assign(n, -1);
  if (n == 0) return assign;

  if (min_pts <= 1) {
    detail::UnionFind uf(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (detail::sq_dist(points[i], points[j]) <= eps2) uf.unite(i, j);
    std::map<std::size_t, int> root_to_id;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = uf.find(i);
      auto [it, inserted] =
          root_to_id.try_emplace(r, static_cast<int>(root_to_id.size()));
      assign[i] = it->second;
    }
    return assign;
  }

  // General DBSCAN. Neighborhoods include the point itself.
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    nbrs[i].push_back(i);
    for (std::size_t j = i + 1; j < n; ++j)
      if (detail::sq_dist(points[i], points[j]) <= eps2) {
        nbrs[i].push_back(j);
        nbrs[j].push_back(i);
      }
  }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i)
    core[i] = nbrs[i].size() >= static_cast<std::size_t>(min_pts);

  int next_id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i] || assign[i] != -1) continue;
    int cid = next_id++;
    std::vector<std::size_t> stack{i};
    assign[i] = cid;
    while (!stack.empty()) {
      std::size_t p = stack.back();
      stack.pop_back();
      if (!core[p]) continue;  // border points do not expand
      for (std::size_t q : nbrs[p]) {
        if (assign[q] == -1) {
          assign[q] = cid;
          stack.push_back(q);
        }
      }
    }
  }
  return assign;
}

/// A group of behaviorally similar channels confined to one time slice.
struct ChannelCluster {
  int cluster_id = 0;
  std::int64_t time_slice = 0;
  std::vector<std::size_t> members;  // indices into the channel list,
                                     // ordered by channel start time
  Label label = Label::Unlabeled;    // Unlabeled when members disagree
};

inline Label derive_cluster_label(const std::vector<Label>& member_labels) {
  if (member_labels.empty()) return Label::Unlabeled;
  Label first = member_labels.front();
  for (Label l : member_labels)
    if (l != first) return Label::Unlabeled;
  return first;
}

/// Slices channels into 4-hour windows by start time, scales each slice
/// independently, and clusters per slice. Cluster ids are globally
/// unique, assigned in (slice, first-member) order.
inline std::vector<ChannelCluster> cluster_channels(
    const std::vector<Channel>& channels, double eps = kDefaultEps,
    int min_pts = kDefaultMinPts, double slice = kDefaultSliceSeconds,
    std::map<std::int64_t, FeatureScaler>* scalers_out = nullptr) {
  std::map<std::int64_t, std::vector<std::size_t>> by_slice;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    auto s = static_cast<std::int64_t>(
        std::floor(channels[i].start_time / slice));
    by_slice[s].push_back(i);
  }

  std::vector<ChannelCluster> out;
  int next_id = 0;
  for (auto& [slice_idx, idxs] : by_slice) {
    std::vector<std::array<double, 5>> pts;
    pts.reserve(idxs.size());
    for (std::size_t i : idxs)
      pts.push_back(abstract_features(channels[i]).as_vector());
    FeatureScaler scaler = FeatureScaler::fit(pts);
    if (scalers_out) (*scalers_out)[slice_idx] = scaler;
    for (auto& p : pts) p = scaler.transform(p);

    std::vector<int> assign = dbscan(pts, eps, min_pts);
    std::map<int, ChannelCluster> local;
    for (std::size_t k = 0; k < idxs.size(); ++k) {
      if (assign[k] < 0) continue;  // noise only possible when min_pts > 1
      auto& cl = local[assign[k]];
      cl.time_slice = slice_idx;
      cl.members.push_back(idxs[k]);
    }
    for (auto& [local_id, cl] : local) {
      std::sort(cl.members.begin(), cl.members.end(),
                [&](std::size_t a, std::size_t b) {
                  if (channels[a].start_time != channels[b].start_time)
                    return channels[a].start_time < channels[b].start_time;
                  return a < b;
                });
      std::vector<Label> labels;
      labels.reserve(cl.members.size());
      for (std::size_t m : cl.members) labels.push_back(channels[m].label);
      cl.label = derive_cluster_label(labels);
      cl.cluster_id = next_id++;
      out.push_back(std::move(cl));
    }
  }
  return out;
}

}  // namespace cbseq
