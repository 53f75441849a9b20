#pragma once

// Slow, direct reference implementations used to check the library's
// statistics. Each one follows the textbook definition with no shortcuts.

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

// Kendall tau-b from an O(n^2) scan over all pairs.
inline std::optional<double> kendall_tau_b(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::int64_t concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0) ++ties_x;
            if (dy == 0) ++ties_y;
            if (dx == 0 || dy == 0) continue;
            if ((dx > 0) == (dy > 0)) ++concordant; else ++discordant;
        }
    }
    const std::int64_t n0 = static_cast<std::int64_t>(n * (n - 1) / 2);
    if (n0 == ties_x || n0 == ties_y) return std::nullopt;
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(n0 - ties_x) * static_cast<double>(n0 - ties_y));
}

inline double fraction_equal(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(a.size());
}

// Category index: 0 both correct, 1 probe wrong only, 2 probe correct only, 3 both wrong.
inline int category(bool probe_ok, bool behavior_ok) {
    if (probe_ok && behavior_ok) return 0;
    if (!probe_ok && behavior_ok) return 1;
    if (probe_ok) return 2;
    return 3;
}

struct Alignment {
    std::vector<std::array<double, 4>> proportions;
    std::array<std::vector<std::size_t>, 4> run_lengths;
};

// Enumerates every (instance, start, end) segment and keeps the maximal ones.
inline Alignment alignment(const std::vector<std::vector<int>>& preds, const std::vector<int>& behavior_ok,
                           const std::vector<int>& labels) {
    const std::size_t L = preds.size(), N = labels.size();
    Alignment out;
    std::vector<std::array<std::size_t, 4>> counts(L, {0, 0, 0, 0});
    for (auto& r : out.run_lengths) r.assign(L + 1, 0);
    for (std::size_t i = 0; i < N; ++i) {
        std::vector<int> cat(L);
        for (std::size_t l = 0; l < L; ++l) {
            cat[l] = category(preds[l][i] == labels[i], behavior_ok[i] != 0);
            counts[l][static_cast<std::size_t>(cat[l])] += 1;
        }
        for (std::size_t s = 0; s < L; ++s) {
            for (std::size_t e = s; e < L; ++e) {
                bool uniform = true;
                for (std::size_t k = s; k <= e; ++k) uniform = uniform && cat[k] == cat[s];
                if (!uniform) continue;
                const bool left_max = s == 0 || cat[s - 1] != cat[s];
                const bool right_max = e + 1 == L || cat[e + 1] != cat[s];
                if (left_max && right_max) out.run_lengths[static_cast<std::size_t>(cat[s])][e - s + 1] += 1;
            }
        }
    }
    out.proportions.assign(L, {0, 0, 0, 0});
    for (std::size_t l = 0; l < L; ++l)
        for (std::size_t c = 0; c < 4; ++c)
            out.proportions[l][c] = static_cast<double>(counts[l][c]) / static_cast<double>(N);
    return out;
}

inline double bayes_phi_half(double delta) { return 0.5 * std::erfc(-delta / (2.0 * std::sqrt(2.0))); }

}  // namespace oracle
