#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "probelab/common.hpp"
#include "probelab/probes.hpp"
#include "probelab/synth.hpp"

namespace probelab::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "PROBELAB_OUTPUT_ROOT";

struct CorpusSection {
    std::map<TaskKind, fs::path> inputs;  // raw record files, one per task
    std::vector<Variation> variations;
    std::vector<Sanity> sanity;           // extra variants beside the plain prompt
    std::size_t limit = 5000;
    std::size_t fewshot_pairs = 4;
    std::uint64_t seed = 0;
};

struct SynthRun {
    std::string name;
    synth::PlantProfile profile;
    std::uint64_t seed = 0;
    Intervention intervention = Intervention::none;
    Sanity sanity = Sanity::none;
};

struct ProbeSection {
    probes::ProbeConfig config;
    probes::CvOptions cv;
    std::optional<std::vector<std::size_t>> layers;  // all layers when unset
    std::optional<std::vector<Role>> roles;          // every stored role when unset
    bool control = false;
    std::uint64_t control_seed = 0;
    bool mdl = false;
    std::optional<std::vector<double>> mdl_schedule;
    std::uint64_t mdl_seed = 0;
    std::size_t workers = 1;
};

struct VariationGroup {
    std::string name;
    std::map<std::string, std::string> runs;  // variation label -> run name
};

struct InterventionPair {
    std::string name;
    std::string baseline;
    std::string intervened;
};

struct RunGroup {
    std::string name;
    std::vector<std::string> runs;
};

inline const std::vector<std::string> kStatistics{
    "behavior", "curves", "spread", "agreement", "alignment",
    "cross_layer", "tau", "intervention", "rescale"};

struct AnalysisSection {
    std::set<std::string> statistics;
    std::vector<VariationGroup> variation_groups;
    std::vector<InterventionPair> intervention_pairs;
    std::vector<RunGroup> tau_groups;
    std::size_t rescale_grid = 11;
};

struct IoSection {
    std::map<std::string, fs::path> runs;  // externally produced .actrun files
    std::optional<fs::path> output_dir;
};

struct PipelineConfig {
    CorpusSection corpus;
    std::vector<SynthRun> synth_runs;
    ProbeSection probe;
    AnalysisSection analysis;
    IoSection io;
    fs::path source;            // config file, empty when built in memory
    nlohmann::json canonical;   // effective config; the hash input
    std::string hash;

    /// Parses and validates a config. Relative paths resolve against `base_dir`.
    static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base_dir = {});
    static PipelineConfig load(const fs::path& path);

    /// Replaces the probe seeds and refreshes the hash.
    void override_seeds(std::vector<std::uint64_t> seeds);

    /// Every run name with its .actrun path; synthetic runs live under `out`.
    std::map<std::string, fs::path> run_paths(const fs::path& out) const;
};

/// Flag, then config, then $PROBELAB_OUTPUT_ROOT/<config stem>, then
/// ./probelab-out/<config stem>.
fs::path resolve_output_dir(const PipelineConfig& cfg, const std::optional<fs::path>& flag);

/// Runs fn(0..count-1) on up to `workers` threads. Each job owns its output
/// slot, so results do not depend on scheduling. The exception of the
/// lowest failing index is rethrown.
void run_jobs(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn);

std::vector<fs::path> cmd_build_corpus(const PipelineConfig& cfg, const fs::path& out);
std::vector<fs::path> cmd_synth(const PipelineConfig& cfg, const fs::path& out);
std::vector<fs::path> cmd_probe(const PipelineConfig& cfg, const fs::path& out);
std::vector<fs::path> cmd_report(const PipelineConfig& cfg, const fs::path& out);

/// Checks the config's referenced inputs and any extra files (.actrun or
/// corpus .jsonl). Returns one line per checked item; throws on the first
/// failure.
std::vector<std::string> cmd_validate(const PipelineConfig* cfg, const std::vector<fs::path>& files,
                                      const fs::path& out);

}  // namespace probelab::pipeline
