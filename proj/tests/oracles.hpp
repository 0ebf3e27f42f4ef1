#pragma once

// Independent brute-force metric oracles. These intentionally share no code
// with the library implementation: surfaces come from a naive six-neighbor
// scan and every distance is an all-pairs search.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "trifuse/volume.hpp"

namespace oracles {

inline double dice(const trifuse::Mask& a, const trifuse::Mask& b) {
  std::int64_t inter = 0, na = 0, nb = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (a[i]) ++na;
    if (b[i]) ++nb;
    if (a[i] && b[i]) ++inter;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

inline std::vector<std::array<int, 3>> surface(const trifuse::Mask& m) {
  std::vector<std::array<int, 3>> out;
  const int D = m.dim(0), H = m.dim(1), W = m.dim(2);
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!m(z, y, x)) continue;
        bool boundary = false;
        const int nb[6][3] = {{z - 1, y, x}, {z + 1, y, x}, {z, y - 1, x},
                              {z, y + 1, x}, {z, y, x - 1}, {z, y, x + 1}};
        for (const auto& n : nb) {
          if (n[0] < 0 || n[0] >= D || n[1] < 0 || n[1] >= H || n[2] < 0 || n[2] >= W ||
              !m(n[0], n[1], n[2])) {
            boundary = true;
            break;
          }
        }
        if (boundary) out.push_back({z, y, x});
      }
  return out;
}

inline std::vector<double> directed_distances(const std::vector<std::array<int, 3>>& from,
                                              const std::vector<std::array<int, 3>>& to,
                                              const std::array<double, 3>& sp) {
  std::vector<double> d;
  d.reserve(from.size());
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) {
      const double dz = (p[0] - q[0]) * sp[0];
      const double dy = (p[1] - q[1]) * sp[1];
      const double dx = (p[2] - q[2]) * sp[2];
      best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
    }
    d.push_back(best);
  }
  return d;
}

inline double p95_nearest_rank(std::vector<double> d) {
  std::sort(d.begin(), d.end());
  std::size_t r = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
  if (r < 1) r = 1;
  if (r > d.size()) r = d.size();
  return d[r - 1];
}

inline std::optional<double> hd95(const trifuse::Mask& a, const trifuse::Mask& b,
                                  const std::array<double, 3>& sp) {
  const auto sa = surface(a), sb = surface(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty()) return std::nullopt;
  return std::max(p95_nearest_rank(directed_distances(sa, sb, sp)),
                  p95_nearest_rank(directed_distances(sb, sa, sp)));
}

inline std::optional<double> exact_hausdorff(const trifuse::Mask& a, const trifuse::Mask& b,
                                             const std::array<double, 3>& sp) {
  const auto sa = surface(a), sb = surface(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty()) return std::nullopt;
  auto max_of = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end());
  };
  return std::max(max_of(directed_distances(sa, sb, sp)),
                  max_of(directed_distances(sb, sa, sp)));
}

}  // namespace oracles
