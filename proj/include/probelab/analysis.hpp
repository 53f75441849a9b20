#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "probelab/actstore.hpp"
#include "probelab/common.hpp"
#include "probelab/probes.hpp"

namespace probelab::analysis {

// ---------------------------------------------------------------------------
// Behavior scoring

/// Lowercase, trim whitespace, strip terminal punctuation.
std::string normalize_answer(std::string_view s);

struct EmTally {
    std::size_t scored = 0;
    std::size_t correct = 0;
    std::size_t malformed = 0;  // empty generations
    double accuracy() const { return scored == 0 ? 0.0 : static_cast<double>(correct) / scored; }
};

/// True iff normalize(generated) starts with normalize(expected). An empty
/// generation scores false and, when a tally is given, counts as malformed.
bool behavior_em(std::string_view generated, std::string_view expected, EmTally* tally = nullptr);

/// Mean em_correct over a run's behavior records.
double behavior_accuracy(const actstore::RunManifest& m);

// ---------------------------------------------------------------------------
// Layer curves

struct LayerCurve {
    Role role = Role::sample;
    std::vector<double> mean;       // per layer, accuracy in [0, 1]
    std::vector<double> spread_pp;  // per layer, max |acc - mean| in percentage points
};

/// `stats_by_variation[v][layer]` must all share the same layer count and role.
LayerCurve layer_curves(const std::map<std::string, std::vector<probes::ProbeStats>>& stats_by_variation);

/// Per-layer mean accuracies from a ProbeStats list ordered by layer.
std::vector<double> curve_of(std::span<const probes::ProbeStats> stats);

// ---------------------------------------------------------------------------
// Rank correlation

/// Kendall tau-b (tie corrected) in O(n log n). No value when either input
/// is constant.
std::optional<double> kendall_tau(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Agreement statistics

struct VariationAgreement {
    std::vector<std::string> variations;
    // pairwise[{a, b}] for a < b in `variations` order.
    std::map<std::pair<std::string, std::string>, double> pairwise;
    double all_agree = 0.0;
};

VariationAgreement variation_agreement(const std::map<std::string, std::vector<int>>& preds);

using AgreementMatrix = std::vector<std::vector<double>>;

/// Entry (i, j): fraction of instances predicted identically at layers i, j.
AgreementMatrix cross_layer_agreement(std::span<const std::vector<int>> probe_preds);

enum class AlignmentCategory { both_correct = 0, probe_wrong_only = 1, probe_correct_only = 2, both_wrong = 3 };
inline constexpr std::size_t kAlignmentCategories = 4;
std::string_view to_string(AlignmentCategory c);

struct AlignmentBreakdown {
    // proportions[layer][category]
    std::vector<std::array<double, kAlignmentCategories>> proportions;
    // run_lengths[category][k]: number of maximal consecutive-layer runs of
    // length k (1..L) over all instances; index 0 is unused.
    std::array<std::vector<std::size_t>, kAlignmentCategories> run_lengths;
};

AlignmentBreakdown alignment(std::span<const std::vector<int>> probe_preds,
                             std::span<const int> behavior_correct, std::span<const int> true_labels);

/// Per-layer fraction of instances whose probe prediction equals the label
/// implied by the model's answer. Instances without a parsed answer count
/// as disagreeing.
std::vector<double> probe_behavior_alignment(std::span<const std::vector<int>> probe_preds,
                                             std::span<const std::optional<Label>> behavior_labels);

// ---------------------------------------------------------------------------
// Interventions and scaling

struct LayerThirds {
    std::size_t lower_end = 0;   // [0, lower_end)
    std::size_t middle_end = 0;  // [lower_end, middle_end); upper is [middle_end, L)
};

/// Floor-based contiguous split; remainder layers go to the upper third.
LayerThirds layer_thirds(std::size_t num_layers);

struct InterventionDelta {
    double behavior_pp = 0.0;
    // role -> {lower, middle, upper} probe-accuracy deltas in pp
    std::map<Role, std::array<double, 3>> third_pp;
};

struct RunWithStats {
    const actstore::RunManifest* manifest = nullptr;
    // role -> per-layer stats ordered by layer
    std::map<Role, std::vector<probes::ProbeStats>> stats;
};

/// Intervened minus baseline. Throws DataError for incompatible runs.
InterventionDelta intervention_delta(const RunWithStats& baseline, const RunWithStats& intervened);

/// Piecewise-linear resampling of a per-layer curve onto `grid_points`
/// evenly spaced relative depths in [0, 1].
std::vector<double> relative_rescale(std::span<const double> curve, std::size_t grid_points);

/// Linear interpolation of a curve at relative depth t in [0, 1].
double sample_relative(std::span<const double> curve, double t);

/// Rounds to one decimal, the precision used in reports.
double round_pp(double pp);

}  // namespace probelab::analysis
