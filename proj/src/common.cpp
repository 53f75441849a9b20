#include "probelab/common.hpp"

#include <array>
#include <cstdio>
#include <utility>

namespace probelab {

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<TaskKind, 5> kTasks{{{TaskKind::blimp, "blimp"},
                                         {TaskKind::stereoset, "stereoset"},
                                         {TaskKind::olmpics, "olmpics"},
                                         {TaskKind::ewok, "ewok"},
                                         {TaskKind::tom, "tom"}}};
constexpr NameTable<Label, 2> kLabels{
    {{Label::acceptable, "acceptable"}, {Label::unacceptable, "unacceptable"}}};
constexpr NameTable<Role, 2> kRoles{{{Role::sample, "sample"}, {Role::output, "output"}}};
constexpr NameTable<Variation, 3> kVariations{
    {{Variation::instruction_first, "instruction_first"},
     {Variation::sample_first, "sample_first"},
     {Variation::no_instruction_fewshot, "no_instruction_fewshot"}}};
constexpr NameTable<Sanity, 6> kSanity{{{Sanity::none, "none"},
                                        {Sanity::unrelated_instruction, "unrelated_instruction"},
                                        {Sanity::label_flip, "label_flip"},
                                        {Sanity::random_label_flip, "random_label_flip"},
                                        {Sanity::abstract_labels, "abstract_labels"},
                                        {Sanity::random_word_labels, "random_word_labels"}}};
constexpr NameTable<Intervention, 3> kInterventions{{{Intervention::none, "none"},
                                                     {Intervention::full, "full"},
                                                     {Intervention::prompt_only, "prompt_only"}}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E value) {
    for (const auto& [e, name] : table) {
        if (e == value) return name;
    }
    throw InvariantError("enum value without a name");
}

template <typename E, std::size_t N>
std::optional<E> value_of(const NameTable<E, N>& table, std::string_view name) {
    for (const auto& [e, n] : table) {
        if (n == name) return e;
    }
    return std::nullopt;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::string_view to_string(TaskKind t) { return name_of(kTasks, t); }
std::string_view to_string(Label l) { return name_of(kLabels, l); }
std::string_view to_string(Role r) { return name_of(kRoles, r); }
std::string_view to_string(Variation v) { return name_of(kVariations, v); }
std::string_view to_string(Sanity s) { return name_of(kSanity, s); }
std::string_view to_string(Intervention i) { return name_of(kInterventions, i); }

std::optional<TaskKind> parse_task(std::string_view s) { return value_of(kTasks, s); }
std::optional<Label> parse_label(std::string_view s) { return value_of(kLabels, s); }
std::optional<Role> parse_role(std::string_view s) { return value_of(kRoles, s); }
std::optional<Variation> parse_variation(std::string_view s) { return value_of(kVariations, s); }
std::optional<Sanity> parse_sanity(std::string_view s) { return value_of(kSanity, s); }
std::optional<Intervention> parse_intervention(std::string_view s) {
    return value_of(kInterventions, s);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string_view sibling_key(std::string_view instance_id) {
    const auto pos = instance_id.rfind('/');
    return pos == std::string_view::npos ? instance_id : instance_id.substr(0, pos);
}

}  // namespace probelab
