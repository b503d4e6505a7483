#pragma once

// Exhaustive farthest-point oracle: every step rescans all candidates against
// all chosen points from scratch, using true (square-rooted) distances.

#include <cmath>
#include <vector>

namespace greedy_oracle {

inline double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline std::vector<std::size_t> order(const std::vector<std::vector<double>>& pts, std::size_t k) {
    const std::size_t n = pts.size();
    std::vector<double> c(pts[0].size(), 0.0);
    for (const auto& p : pts)
        for (std::size_t j = 0; j < c.size(); ++j) c[j] += p[j] / static_cast<double>(n);
    std::vector<std::size_t> chosen;
    std::size_t seed = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (dist(pts[i], c) > dist(pts[seed], c)) seed = i;
    chosen.push_back(seed);
    while (chosen.size() < k) {
        std::size_t best = n;
        double best_d = -1;
        for (std::size_t i = 0; i < n; ++i) {
            bool used = false;
            for (auto j : chosen) used = used || j == i;
            if (used) continue;
            double m = 1e300;
            for (auto j : chosen) m = std::min(m, dist(pts[i], pts[j]));
            if (m > best_d) {
                best_d = m;
                best = i;
            }
        }
        chosen.push_back(best);
    }
    return chosen;
}

} // namespace greedy_oracle
