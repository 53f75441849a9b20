#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace probelab {

// Error hierarchy. The CLI maps each kind to its exit code.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class TaskKind { blimp, stereoset, olmpics, ewok, tom };
enum class Label { unacceptable = 0, acceptable = 1 };
enum class Role { sample, output };
enum class Variation { instruction_first, sample_first, no_instruction_fewshot };
enum class Sanity {
    none,
    unrelated_instruction,
    label_flip,
    random_label_flip,
    abstract_labels,
    random_word_labels
};
enum class Intervention { none, full, prompt_only };

std::string_view to_string(TaskKind t);
std::string_view to_string(Label l);
std::string_view to_string(Role r);
std::string_view to_string(Variation v);
std::string_view to_string(Sanity s);
std::string_view to_string(Intervention i);

std::optional<TaskKind> parse_task(std::string_view s);
std::optional<Label> parse_label(std::string_view s);
std::optional<Role> parse_role(std::string_view s);
std::optional<Variation> parse_variation(std::string_view s);
std::optional<Sanity> parse_sanity(std::string_view s);
std::optional<Intervention> parse_intervention(std::string_view s);

inline int label_bit(Label l) { return l == Label::acceptable ? 1 : 0; }

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash; used wherever a
/// hash decides a data split or an artifact identity.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Derives an independent substream seed from a parent seed and a tag.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

std::string hex64(std::uint64_t v);

/// Pair-sibling key of an instance id: everything before the last '/'.
/// Ids without a '/' form their own group.
std::string_view sibling_key(std::string_view instance_id);

}  // namespace probelab
