#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "probelab/common.hpp"

namespace probelab::corpus {

inline constexpr int kCorpusFormatVersion = 1;
inline constexpr std::size_t kDefaultInstanceLimit = 5000;
inline constexpr std::size_t kFewshotDemos = 4;
inline constexpr std::string_view kBlockSeparator = "\n";
// A demonstration is its text, the separator, then its verbalized answer.
inline constexpr std::string_view kDemoFormat = "{text}\\n{answer}";

struct TaskInstance {
    std::string id;
    TaskKind task = TaskKind::blimp;
    std::string text;
    Label label = Label::acceptable;
    std::string source_pair_id;
};

struct Rejection {
    std::size_t record_index = 0;
    std::string reason;
};

struct BuildResult {
    std::vector<TaskInstance> instances;
    std::vector<Rejection> rejections;
    std::vector<std::string> warnings;
};

/// Turns task-specific raw records into balanced acceptable/unacceptable
/// pairs. Malformed records are rejected individually; `limit` counts
/// instances (two per pair) and truncation emits a warning.
BuildResult build_instances(std::span<const nlohmann::json> raw_records, TaskKind task,
                            std::size_t limit = kDefaultInstanceLimit);

/// Reads a line-delimited raw file. Lines that fail to parse are reported
/// as rejections and replaced by a null record so indices stay aligned.
std::vector<nlohmann::json> read_raw_records(const std::filesystem::path& path,
                                             std::vector<Rejection>& parse_errors);

struct Span {
    std::size_t start = 0;
    std::size_t end = 0;
    bool empty() const { return start == end; }
    std::size_t size() const { return end - start; }
    friend bool operator==(const Span&, const Span&) = default;
};

struct AnswerVocabulary {
    std::string positive = "yes";
    std::string negative = "no";
    friend bool operator==(const AnswerVocabulary&, const AnswerVocabulary&) = default;
};

struct RenderedPrompt {
    std::string instance_id;
    TaskKind task = TaskKind::blimp;
    Label label = Label::acceptable;
    std::string source_pair_id;
    Variation variation = Variation::instruction_first;
    Sanity sanity = Sanity::none;
    std::string full_text;
    Span instruction;
    Span fewshot;
    Span sample;
    std::string expected_answer;
    AnswerVocabulary answer_vocabulary;

    std::string_view slice(Span s) const {
        return std::string_view(full_text).substr(s.start, s.size());
    }
    friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

struct FewshotPool {
    std::map<TaskKind, std::vector<TaskInstance>> demos;
};

struct PoolSplit {
    FewshotPool pool;
    std::vector<TaskInstance> evaluation;
};

/// Moves `pairs` whole sibling pairs per task out of `instances` into a
/// demonstration pool, chosen by seed. Pool and evaluation never share a
/// source_pair_id.
PoolSplit carve_fewshot_pool(std::vector<TaskInstance> instances, std::size_t pairs,
                             std::uint64_t seed);

/// The default yes/no instruction for each task.
std::string_view task_instruction(TaskKind task);

RenderedPrompt render_prompt(const TaskInstance& inst, Variation variation,
                             const std::optional<std::string>& instruction_text,
                             const FewshotPool& pool, std::uint64_t seed);

/// Number of letters 'a' (either case) in `text`.
std::size_t count_letter_a(std::string_view text);

std::string unrelated_instruction_text(std::size_t count);

/// Vocabulary used by random_word_labels for a given run seed.
AnswerVocabulary random_word_vocabulary(std::uint64_t seed);

RenderedPrompt apply_sanity_variant(const RenderedPrompt& p, Sanity variant, std::uint64_t seed);

nlohmann::ordered_json to_json(const RenderedPrompt& p);
RenderedPrompt prompt_from_json(const nlohmann::json& j);

/// One RenderedPrompt per line, each record carrying corpus_format_version.
/// A non-empty `config_hash` is stamped into every record.
void write_corpus(const std::filesystem::path& path, std::span<const RenderedPrompt> prompts,
                  std::string_view config_hash = {});
std::vector<RenderedPrompt> read_corpus(const std::filesystem::path& path);

}  // namespace probelab::corpus
