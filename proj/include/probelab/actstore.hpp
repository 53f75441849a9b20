#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "probelab/common.hpp"

namespace probelab::actstore {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kMagic[4] = {'A', 'C', 'T', 'R'};
inline constexpr std::size_t kHeaderBytes = 24;

struct BehaviorRecord {
    std::string generated_text;
    bool em_correct = false;
    std::optional<Label> predicted_label;
    friend bool operator==(const BehaviorRecord&, const BehaviorRecord&) = default;
};

struct RunManifest {
    std::string model_id;
    TaskKind task = TaskKind::blimp;
    Variation variation = Variation::instruction_first;
    Sanity sanity = Sanity::none;
    Intervention intervention = Intervention::none;
    std::size_t num_layers = 0;  // includes layer 0, the embedding output
    std::size_t hidden_dim = 0;
    std::vector<Role> roles;     // tensor block order on disk
    std::vector<std::string> instance_ids;
    std::vector<Label> labels;   // true task label per instance
    std::vector<BehaviorRecord> behavior;
    std::uint32_t format_version = kFormatVersion;
    bool degraded = false;
    // Free-form provenance written by producers (template policy, seeds...).
    nlohmann::json notes = nlohmann::json::object();

    std::size_t num_instances() const { return instance_ids.size(); }
    bool has_role(Role r) const;
    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

/// Pooled activations for one configuration. Each role's tensor is stored
/// row-major with shape [layer, instance, dim].
struct ActivationRun {
    RunManifest manifest;
    std::map<Role, std::vector<float>> tensors;

    std::span<const float> vector_at(Role role, std::size_t layer, std::size_t instance) const;
    /// N x d double matrix for one (role, layer).
    Eigen::MatrixXd layer_features(Role role, std::size_t layer) const;
    std::vector<int> label_bits() const;

    friend bool operator==(const ActivationRun&, const ActivationRun&) = default;
};

/// Throws DataError on any manifest or tensor invariant violation. A
/// non-finite value is reported with its (role, layer, instance, dim).
void validate(const ActivationRun& run);

nlohmann::ordered_json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

void write_run(const ActivationRun& run, const std::filesystem::path& path);
ActivationRun read_run(const std::filesystem::path& path);

/// Reads and fully verifies a run file, returning only its manifest.
RunManifest read_manifest(const std::filesystem::path& path);

struct PairReport {
    bool compatible = false;
    bool needs_reorder = false;
    // permutation[i] = index in `other` of the baseline's i-th instance.
    std::vector<std::size_t> permutation;
    std::vector<std::string> problems;
};

PairReport validate_pair(const ActivationRun& baseline, const ActivationRun& other);
PairReport validate_pair(const RunManifest& baseline, const RunManifest& other);

/// Returns `run` with instances reordered by `permutation` (as produced by
/// validate_pair), so that it aligns with the baseline.
ActivationRun reorder(const ActivationRun& run, std::span<const std::size_t> permutation);

}  // namespace probelab::actstore
