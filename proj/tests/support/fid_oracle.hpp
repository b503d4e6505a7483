#pragma once

// Closed forms for the Frechet distance when both covariances are diagonal in
// a shared basis: |mu1 - mu2|^2 + sum_i (sqrt(s1_i) - sqrt(s2_i))^2.

#include <cmath>
#include <vector>

namespace fid_oracle {

inline double diagonal(const std::vector<double>& mu1, const std::vector<double>& s1, const std::vector<double>& mu2,
                       const std::vector<double>& s2) {
    double d = 0;
    for (std::size_t i = 0; i < mu1.size(); ++i) {
        d += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
        d += (std::sqrt(s1[i]) - std::sqrt(s2[i])) * (std::sqrt(s1[i]) - std::sqrt(s2[i]));
    }
    return d;
}

} // namespace fid_oracle
