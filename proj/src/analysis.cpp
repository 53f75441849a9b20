#include "probelab/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

namespace probelab::analysis {

namespace {

bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' || c == '"' ||
           c == '\'';
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Sum of t*(t-1)/2 over runs of equal adjacent values of a sorted sequence.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal) {
    std::int64_t total = 0;
    std::size_t run = 1;
    for (std::size_t i = 1; i <= n; ++i) {
        if (i < n && equal(i - 1, i)) {
            ++run;
        } else {
            total += static_cast<std::int64_t>(run) * static_cast<std::int64_t>(run - 1) / 2;
            run = 1;
        }
    }
    return total;
}

// Sorts `v` ascending, returning the number of strict inversions removed.
std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo, std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = lo + (hi - lo) / 2;
    std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
    std::size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (v[j] < v[i]) {
            swaps += static_cast<std::int64_t>(mid - i);
            buf[k++] = v[j++];
        } else {
            buf[k++] = v[i++];
        }
    }
    while (i < mid) buf[k++] = v[i++];
    while (j < hi) buf[k++] = v[j++];
    std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
              v.begin() + static_cast<std::ptrdiff_t>(lo));
    return swaps;
}

void require_same_size(std::span<const std::vector<int>> rows, const char* what) {
    for (const auto& r : rows) {
        if (r.size() != rows.front().size())
            throw DataError(std::string(what) + ": layers disagree on the instance count");
    }
}

}  // namespace

std::string normalize_answer(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && (is_space(s[e - 1]) || is_terminal_punct(s[e - 1]))) --e;
    std::string out(s.substr(b, e - b));
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool behavior_em(std::string_view generated, std::string_view expected, EmTally* tally) {
    const std::string g = normalize_answer(generated);
    const std::string x = normalize_answer(expected);
    const bool malformed = g.empty();
    const bool ok = !malformed && !x.empty() && g.compare(0, x.size(), x) == 0;
    if (tally) {
        ++tally->scored;
        tally->correct += ok;
        tally->malformed += malformed;
    }
    return ok;
}

double behavior_accuracy(const actstore::RunManifest& m) {
    if (m.behavior.empty()) return 0.0;
    const auto correct = std::count_if(m.behavior.begin(), m.behavior.end(),
                                       [](const actstore::BehaviorRecord& b) { return b.em_correct; });
    return static_cast<double>(correct) / static_cast<double>(m.behavior.size());
}

std::vector<double> curve_of(std::span<const probes::ProbeStats> stats) {
    std::vector<double> c;
    c.reserve(stats.size());
    for (std::size_t l = 0; l < stats.size(); ++l) {
        if (stats[l].layer != l) throw DataError("probe stats are not ordered by layer");
        c.push_back(stats[l].mean);
    }
    return c;
}

LayerCurve layer_curves(const std::map<std::string, std::vector<probes::ProbeStats>>& stats_by_variation) {
    if (stats_by_variation.empty()) throw DataError("layer_curves: no variations");
    const auto& first = stats_by_variation.begin()->second;
    if (first.empty()) throw DataError("layer_curves: empty stats list");
    const std::size_t L = first.size();
    LayerCurve curve;
    curve.role = first.front().role;
    std::vector<std::vector<double>> rows;
    for (const auto& [name, stats] : stats_by_variation) {
        if (stats.size() != L)
            throw DataError("layer_curves: variation '" + name + "' has " + std::to_string(stats.size()) +
                            " layers, expected " + std::to_string(L));
        for (const auto& s : stats) {
            if (s.role != curve.role) throw DataError("layer_curves: mixed roles");
        }
        rows.push_back(curve_of(stats));
    }
    const double V = static_cast<double>(rows.size());
    curve.mean.assign(L, 0.0);
    curve.spread_pp.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        double sum = 0.0;
        for (const auto& r : rows) sum += r[l];
        const double mu = sum / V;
        double spread = 0.0;
        for (const auto& r : rows) spread = std::max(spread, std::abs(r[l] - mu));
        curve.mean[l] = mu;
        curve.spread_pp[l] = 100.0 * spread;
    }
    return curve;
}

std::optional<double> kendall_tau(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("kendall_tau: vectors differ in length");
    if (x.size() < 2) throw DataError("kendall_tau: need at least two observations");
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(y[i])) throw DataError("kendall_tau: NaN input");
    }
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return x[a] != x[b] ? x[a] < x[b] : y[a] < y[b];
    });
    const std::int64_t n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
    const std::int64_t n1 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return x[idx[a]] == x[idx[b]]; });
    const std::int64_t n3 = tied_pairs(n, [&](std::size_t a, std::size_t b) {
        return x[idx[a]] == x[idx[b]] && y[idx[a]] == y[idx[b]];
    });
    std::vector<double> ys(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
    const std::int64_t swaps = merge_count(ys, buf, 0, n);
    const std::int64_t n2 = tied_pairs(n, [&](std::size_t a, std::size_t b) { return ys[a] == ys[b]; });

    if (n0 == n1 || n0 == n2) return std::nullopt;
    const std::int64_t s = n0 - n1 - n2 + n3 - 2 * swaps;
    return static_cast<double>(s) /
           std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

VariationAgreement variation_agreement(const std::map<std::string, std::vector<int>>& preds) {
    VariationAgreement out;
    if (preds.empty()) return out;
    const std::size_t N = preds.begin()->second.size();
    for (const auto& [name, p] : preds) {
        if (p.size() != N) throw DataError("variation_agreement: instance sets differ in size");
        out.variations.push_back(name);
    }
    if (N == 0) throw DataError("variation_agreement: no instances");
    for (auto a = preds.begin(); a != preds.end(); ++a) {
        for (auto b = std::next(a); b != preds.end(); ++b) {
            std::size_t same = 0;
            for (std::size_t i = 0; i < N; ++i) same += a->second[i] == b->second[i];
            out.pairwise[{a->first, b->first}] = static_cast<double>(same) / static_cast<double>(N);
        }
    }
    std::size_t all = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const int v = preds.begin()->second[i];
        all += std::all_of(preds.begin(), preds.end(), [&](const auto& kv) { return kv.second[i] == v; });
    }
    out.all_agree = static_cast<double>(all) / static_cast<double>(N);
    return out;
}

AgreementMatrix cross_layer_agreement(std::span<const std::vector<int>> probe_preds) {
    const std::size_t L = probe_preds.size();
    AgreementMatrix m(L, std::vector<double>(L, 1.0));
    if (L == 0) return m;
    require_same_size(probe_preds, "cross_layer_agreement");
    const std::size_t N = probe_preds.front().size();
    if (N == 0) throw DataError("cross_layer_agreement: no instances");
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = i + 1; j < L; ++j) {
            std::size_t same = 0;
            for (std::size_t k = 0; k < N; ++k) same += probe_preds[i][k] == probe_preds[j][k];
            m[i][j] = m[j][i] = static_cast<double>(same) / static_cast<double>(N);
        }
    }
    return m;
}

std::string_view to_string(AlignmentCategory c) {
    switch (c) {
        case AlignmentCategory::both_correct: return "both_correct";
        case AlignmentCategory::probe_wrong_only: return "probe_wrong_only";
        case AlignmentCategory::probe_correct_only: return "probe_correct_only";
        case AlignmentCategory::both_wrong: return "both_wrong";
    }
    return "both_correct";
}

AlignmentBreakdown alignment(std::span<const std::vector<int>> probe_preds,
                             std::span<const int> behavior_correct, std::span<const int> true_labels) {
    const std::size_t L = probe_preds.size();
    const std::size_t N = true_labels.size();
    if (behavior_correct.size() != N) throw DataError("alignment: behavior and labels differ in length");
    for (const auto& p : probe_preds) {
        if (p.size() != N) throw DataError("alignment: probe predictions and labels differ in length");
    }
    if (N == 0) throw DataError("alignment: no instances");

    AlignmentBreakdown out;
    out.proportions.assign(L, {0.0, 0.0, 0.0, 0.0});
    for (auto& h : out.run_lengths) h.assign(L + 1, 0);

    std::vector<std::size_t> cat(L);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t l = 0; l < L; ++l) {
            const bool probe_ok = probe_preds[l][i] == true_labels[i];
            const bool beh_ok = behavior_correct[i] != 0;
            const AlignmentCategory c = probe_ok ? (beh_ok ? AlignmentCategory::both_correct
                                                           : AlignmentCategory::probe_correct_only)
                                                 : (beh_ok ? AlignmentCategory::probe_wrong_only
                                                           : AlignmentCategory::both_wrong);
            cat[l] = static_cast<std::size_t>(c);
            out.proportions[l][cat[l]] += 1.0;
        }
        std::size_t run = 0;
        for (std::size_t l = 0; l < L; ++l) {
            ++run;
            if (l + 1 == L || cat[l + 1] != cat[l]) {
                out.run_lengths[cat[l]][run] += 1;
                run = 0;
            }
        }
    }
    for (auto& row : out.proportions) {
        for (double& v : row) v /= static_cast<double>(N);
    }
    return out;
}

std::vector<double> probe_behavior_alignment(std::span<const std::vector<int>> probe_preds,
                                             std::span<const std::optional<Label>> behavior_labels) {
    std::vector<double> out;
    const std::size_t N = behavior_labels.size();
    if (N == 0) throw DataError("probe_behavior_alignment: no instances");
    for (const auto& p : probe_preds) {
        if (p.size() != N) throw DataError("probe_behavior_alignment: instance counts differ");
        std::size_t same = 0;
        for (std::size_t i = 0; i < N; ++i)
            same += behavior_labels[i].has_value() && p[i] == label_bit(*behavior_labels[i]);
        out.push_back(static_cast<double>(same) / static_cast<double>(N));
    }
    return out;
}

LayerThirds layer_thirds(std::size_t num_layers) {
    const std::size_t t = num_layers / 3;
    return {t, 2 * t};
}

InterventionDelta intervention_delta(const RunWithStats& baseline, const RunWithStats& intervened) {
    if (!baseline.manifest || !intervened.manifest) throw InvariantError("intervention_delta: missing manifest");
    const auto rep = actstore::validate_pair(*baseline.manifest, *intervened.manifest);
    if (!rep.compatible) {
        std::string why;
        for (const auto& p : rep.problems) why += (why.empty() ? "" : "; ") + p;
        throw DataError("incompatible runs for intervention delta: " + why);
    }
    InterventionDelta out;
    out.behavior_pp =
        100.0 * (behavior_accuracy(*intervened.manifest) - behavior_accuracy(*baseline.manifest));
    const std::size_t L = baseline.manifest->num_layers;
    const LayerThirds th = layer_thirds(L);
    const std::array<std::pair<std::size_t, std::size_t>, 3> ranges{
        {{0, th.lower_end}, {th.lower_end, th.middle_end}, {th.middle_end, L}}};
    for (const auto& [role, base_stats] : baseline.stats) {
        auto it = intervened.stats.find(role);
        if (it == intervened.stats.end()) continue;
        const auto base = curve_of(base_stats);
        const auto other = curve_of(it->second);
        if (base.size() != L || other.size() != L)
            throw DataError("intervention_delta: stats do not cover every layer");
        std::array<double, 3> d{};
        for (std::size_t k = 0; k < 3; ++k) {
            const auto [lo, hi] = ranges[k];
            if (lo == hi) {
                d[k] = std::numeric_limits<double>::quiet_NaN();
                continue;
            }
            double sum = 0.0;
            for (std::size_t l = lo; l < hi; ++l) sum += other[l] - base[l];
            d[k] = 100.0 * sum / static_cast<double>(hi - lo);
        }
        out.third_pp[role] = d;
    }
    return out;
}

double sample_relative(std::span<const double> curve, double t) {
    if (curve.size() < 2) throw DataError("relative rescaling needs at least two layers");
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("relative depth outside [0, 1]");
    if (t == 1.0) return curve.back();
    const double pos = t * static_cast<double>(curve.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(pos), curve.size() - 2);
    const double frac = pos - static_cast<double>(i);
    if (frac == 0.0) return curve[i];
    return curve[i] + frac * (curve[i + 1] - curve[i]);
}

std::vector<double> relative_rescale(std::span<const double> curve, std::size_t grid_points) {
    if (curve.size() < 2) throw DataError("relative rescaling needs at least two layers");
    if (grid_points < 2) throw DataError("relative rescaling needs at least two grid points");
    std::vector<double> out(grid_points);
    for (std::size_t j = 0; j < grid_points; ++j) {
        const double t = j + 1 == grid_points ? 1.0
                                              : static_cast<double>(j) / static_cast<double>(grid_points - 1);
        out[j] = sample_relative(curve, t);
    }
    return out;
}

double round_pp(double pp) { return std::round(pp * 10.0) / 10.0; }

}  // namespace probelab::analysis
