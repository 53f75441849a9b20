#include "probelab/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace probelab::corpus {

namespace {

using nlohmann::json;

struct PairTexts {
    std::string acceptable;
    std::string unacceptable;
};

// Reason for rejection, or the two texts of the pair.
struct PairOrReason {
    std::optional<PairTexts> pair;
    std::string reason;
};

PairOrReason reject(std::string reason) { return {std::nullopt, std::move(reason)}; }

std::optional<std::string> string_field(const json& rec, const char* key) {
    auto it = rec.find(key);
    if (it == rec.end() || !it->is_string()) return std::nullopt;
    std::string s = it->get<std::string>();
    if (s.find_first_not_of(" \t\r\n") == std::string::npos) return std::nullopt;
    return s;
}

std::string replace_once(std::string text, std::string_view marker, std::string_view with) {
    const auto pos = text.find(marker);
    text.replace(pos, marker.size(), with);
    return text;
}

PairOrReason two_sentences(const json& rec, const char* good, const char* bad) {
    auto a = string_field(rec, good);
    auto u = string_field(rec, bad);
    if (!a) return reject(std::string("missing or empty field '") + good + "'");
    if (!u) return reject(std::string("missing or empty field '") + bad + "'");
    return {PairTexts{*a, *u}, {}};
}

PairOrReason olmpics_pair(const json& rec) {
    auto stem = string_field(rec, "stem");
    if (!stem) return reject("missing or empty field 'stem'");
    if (stem->find("[MASK]") == std::string::npos) return reject("stem has no [MASK]");
    auto opts = rec.find("options");
    if (opts == rec.end() || !opts->is_array() || opts->size() < 2)
        return reject("'options' must be an array of at least two strings");
    for (const auto& o : *opts) {
        if (!o.is_string() || o.get<std::string>().empty())
            return reject("'options' must be an array of at least two strings");
    }
    auto ans = rec.find("answer");
    if (ans == rec.end() || !ans->is_number_integer()) return reject("missing integer 'answer'");
    const auto idx = ans->get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= opts->size())
        return reject("'answer' index out of range");
    const std::string correct = (*opts)[static_cast<std::size_t>(idx)].get<std::string>();
    // The first option differing from the answer is the distractor.
    for (const auto& o : *opts) {
        const std::string option = o.get<std::string>();
        if (option != correct) {
            return {PairTexts{replace_once(*stem, "[MASK]", correct),
                              replace_once(*stem, "[MASK]", option)},
                    {}};
        }
    }
    return reject("all options equal the answer");
}

PairOrReason ewok_pair(const json& rec) {
    auto tmpl = string_field(rec, "template");
    if (!tmpl) return reject("missing or empty field 'template'");
    if (tmpl->find("[CONCEPT]") == std::string::npos) return reject("template has no [CONCEPT]");
    auto match = string_field(rec, "matching");
    auto mismatch = string_field(rec, "mismatching");
    if (!match) return reject("missing or empty field 'matching'");
    if (!mismatch) return reject("missing or empty field 'mismatching'");
    return {PairTexts{replace_once(*tmpl, "[CONCEPT]", *match),
                      replace_once(*tmpl, "[CONCEPT]", *mismatch)},
            {}};
}

PairOrReason tom_pair(const json& rec, std::string_view pair_id) {
    auto story_it = rec.find("story");
    std::string story;
    if (story_it != rec.end() && story_it->is_array()) {
        for (const auto& s : *story_it) {
            if (!s.is_string()) return reject("'story' entries must be strings");
            if (!story.empty()) story += ' ';
            story += s.get<std::string>();
        }
    } else if (story_it != rec.end() && story_it->is_string()) {
        story = story_it->get<std::string>();
    }
    if (story.find_first_not_of(" \t\r\n") == std::string::npos)
        return reject("missing or empty field 'story'");
    auto object = string_field(rec, "object");
    auto truth = string_field(rec, "true_location");
    if (!object) return reject("missing or empty field 'object'");
    if (!truth) return reject("missing or empty field 'true_location'");

    std::optional<std::string> wrong = string_field(rec, "false_location");
    if (!wrong) {
        // Distractor drawn from the story's other containers.
        std::vector<std::string> others;
        if (auto c = rec.find("containers"); c != rec.end() && c->is_array()) {
            for (const auto& x : *c) {
                if (x.is_string() && x.get<std::string>() != *truth) others.push_back(x.get<std::string>());
            }
        }
        if (others.empty()) return reject("no 'false_location' and no alternative 'containers'");
        wrong = others[fnv1a64(pair_id) % others.size()];
    }
    if (*wrong == *truth) return reject("false_location equals true_location");
    auto ending = [&](const std::string& loc) {
        return story + " The " + *object + " is in the " + loc + ".";
    };
    return {PairTexts{ending(*truth), ending(*wrong)}, {}};
}

std::string default_pair_id(TaskKind task, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu", index);
    return std::string(to_string(task)) + "-" + buf;
}

std::optional<std::string> explicit_pair_id(const json& rec) {
    auto it = rec.find("id");
    if (it == rec.end()) return std::nullopt;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
    return std::nullopt;
}

constexpr std::array<std::string_view, 5> kInstructions{
    // blimp
    "Is the given text linguistically acceptable? This means that it contains no grammatical "
    "errors in morphology, syntax, or semantics. Answer only with \"yes\" or \"no\": choose "
    "\"yes\" if the text meets these criteria or \"no\" if it violates them.",
    // stereoset
    "Does the given text contain stereotypical references? Answer only with \"yes\" or \"no\": "
    "choose \"yes\" if the text includes stereotypes or \"no\" if the text does not include "
    "stereotypes.",
    // olmpics
    "Does the given text make sense? This means its reasoning is consistent and does not violate "
    "known facts or widely accepted assumptions. Answer only with \"yes\" or \"no\": choose "
    "\"yes\" if the text meets these criteria or \"no\" if it violates them.",
    // ewok
    "Does the given text make sense? This means that the scenario described in the text is "
    "plausible given common-world knowledge and widely accepted assumptions. Answer only with "
    "\"yes\" or \"no\": choose \"yes\" if the text is plausible or \"no\" if it is implausible.",
    // tom
    "Are the assumptions in the last sentence of the given text logically correct, based on the "
    "preceding sentences? This means they align with events described earlier in the text. Answer "
    "only with \"yes\" or \"no\": choose \"yes\" if the assumptions are correct, or \"no\" if "
    "they are incorrect.",
};

constexpr std::array<std::string_view, 24> kRandomWords{
    "river",  "candle", "pepper", "window", "garden", "violin", "marble", "rocket",
    "pillow", "silver", "ladder", "tunnel", "basket", "forest", "hammer", "lemon",
    "anchor", "carpet", "saddle", "bottle", "parrot", "needle", "meadow", "wallet"};

const std::string& answer_for(const AnswerVocabulary& v, bool positive) {
    return positive ? v.positive : v.negative;
}

// Rewrites quoted vocabulary tokens ("yes" / "no") in an instruction,
// swapping both simultaneously so that swaps are involutions.
std::string relabel_instruction(std::string_view text, const AnswerVocabulary& from,
                                const AnswerVocabulary& to) {
    const std::string qp = "\"" + from.positive + "\"";
    const std::string qn = "\"" + from.negative + "\"";
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.substr(i, qp.size()) == qp) {
            out += "\"" + to.positive + "\"";
            i += qp.size();
        } else if (text.substr(i, qn.size()) == qn) {
            out += "\"" + to.negative + "\"";
            i += qn.size();
        } else {
            out += text[i++];
        }
    }
    return out;
}

// Replaces the instruction block text, moving the other spans accordingly.
void replace_instruction(RenderedPrompt& p, const std::string& new_text) {
    const Span old = p.instruction;
    const auto delta = static_cast<std::ptrdiff_t>(new_text.size()) -
                       static_cast<std::ptrdiff_t>(old.size());
    p.full_text.replace(old.start, old.size(), new_text);
    for (Span* s : {&p.fewshot, &p.sample}) {
        if (!s->empty() && s->start >= old.end) {
            s->start = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(s->start) + delta);
            s->end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(s->end) + delta);
        }
    }
    p.instruction.end = old.start + new_text.size();
}

bool seeded_coin(std::uint64_t seed, std::string_view key) {
    return (mix_seed(seed, key) >> 17) & 1U;
}

}  // namespace

BuildResult build_instances(std::span<const nlohmann::json> raw_records, TaskKind task,
                            std::size_t limit) {
    BuildResult out;
    const std::size_t max_pairs = limit / 2;
    std::set<std::string> seen_ids;
    std::size_t accepted_pairs = 0;
    std::size_t available_pairs = 0;

    for (std::size_t i = 0; i < raw_records.size(); ++i) {
        const json& rec = raw_records[i];
        if (!rec.is_object()) {
            out.rejections.push_back({i, "record is not an object"});
            continue;
        }
        const std::string pair_id = explicit_pair_id(rec).value_or(default_pair_id(task, i));
        PairOrReason r;
        switch (task) {
            case TaskKind::blimp: r = two_sentences(rec, "sentence_good", "sentence_bad"); break;
            case TaskKind::stereoset: r = two_sentences(rec, "stereotype", "anti_stereotype"); break;
            case TaskKind::olmpics: r = olmpics_pair(rec); break;
            case TaskKind::ewok: r = ewok_pair(rec); break;
            case TaskKind::tom: r = tom_pair(rec, pair_id); break;
        }
        if (!r.pair) {
            out.rejections.push_back({i, r.reason});
            continue;
        }
        if (r.pair->acceptable == r.pair->unacceptable) {
            out.rejections.push_back({i, "acceptable and unacceptable texts are identical"});
            continue;
        }
        if (!seen_ids.insert(pair_id).second) {
            out.rejections.push_back({i, "duplicate pair id '" + pair_id + "'"});
            continue;
        }
        ++available_pairs;
        if (accepted_pairs == max_pairs) continue;
        ++accepted_pairs;
        out.instances.push_back(
            {pair_id + "/acc", task, std::move(r.pair->acceptable), Label::acceptable, pair_id});
        out.instances.push_back({pair_id + "/unacc", task, std::move(r.pair->unacceptable),
                                 Label::unacceptable, pair_id});
    }
    if (available_pairs < max_pairs) {
        out.warnings.push_back("limit " + std::to_string(limit) + " exceeds available pairs (" +
                               std::to_string(available_pairs) + "); truncated to " +
                               std::to_string(2 * available_pairs) + " instances");
    }
    return out;
}

std::vector<nlohmann::json> read_raw_records(const std::filesystem::path& path,
                                             std::vector<Rejection>& parse_errors) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open raw file " + path.string());
    std::vector<json> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            parse_errors.push_back({records.size(), "line is not valid JSON"});
            j = nullptr;
        }
        records.push_back(std::move(j));
    }
    return records;
}

PoolSplit carve_fewshot_pool(std::vector<TaskInstance> instances, std::size_t pairs,
                             std::uint64_t seed) {
    std::map<TaskKind, std::vector<std::string>> pair_ids;
    for (const auto& inst : instances) {
        auto& ids = pair_ids[inst.task];
        if (std::find(ids.begin(), ids.end(), inst.source_pair_id) == ids.end())
            ids.push_back(inst.source_pair_id);
    }
    std::set<std::string> chosen;
    for (auto& [task, ids] : pair_ids) {
        std::sort(ids.begin(), ids.end(), [&](const std::string& a, const std::string& b) {
            const auto ha = mix_seed(seed, a), hb = mix_seed(seed, b);
            return ha != hb ? ha < hb : a < b;
        });
        for (std::size_t k = 0; k < std::min(pairs, ids.size()); ++k) chosen.insert(ids[k]);
    }
    PoolSplit split;
    for (auto& inst : instances) {
        if (chosen.count(inst.source_pair_id)) {
            split.pool.demos[inst.task].push_back(std::move(inst));
        } else {
            split.evaluation.push_back(std::move(inst));
        }
    }
    return split;
}

std::string_view task_instruction(TaskKind task) {
    return kInstructions[static_cast<std::size_t>(task)];
}

RenderedPrompt render_prompt(const TaskInstance& inst, Variation variation,
                             const std::optional<std::string>& instruction_text,
                             const FewshotPool& pool, std::uint64_t seed) {
    RenderedPrompt p;
    p.instance_id = inst.id;
    p.task = inst.task;
    p.label = inst.label;
    p.source_pair_id = inst.source_pair_id;
    p.variation = variation;
    p.expected_answer = answer_for(p.answer_vocabulary, inst.label == Label::acceptable);
    const std::string sep(kBlockSeparator);

    switch (variation) {
        case Variation::instruction_first:
        case Variation::sample_first: {
            if (!instruction_text || instruction_text->empty())
                throw ConfigError("instruction text required for " +
                                  std::string(to_string(variation)));
            const std::string& instr = *instruction_text;
            if (variation == Variation::instruction_first) {
                p.full_text = instr + sep + inst.text;
                p.instruction = {0, instr.size()};
                p.sample = {instr.size() + sep.size(), p.full_text.size()};
            } else {
                p.full_text = inst.text + sep + instr;
                p.sample = {0, inst.text.size()};
                p.instruction = {inst.text.size() + sep.size(), p.full_text.size()};
            }
            break;
        }
        case Variation::no_instruction_fewshot: {
            auto it = pool.demos.find(inst.task);
            std::vector<const TaskInstance*> pos, neg;
            if (it != pool.demos.end()) {
                for (const auto& d : it->second) {
                    if (d.source_pair_id == inst.source_pair_id) continue;
                    (d.label == Label::acceptable ? pos : neg).push_back(&d);
                }
            }
            if (pos.size() < kFewshotDemos / 2 || neg.size() < kFewshotDemos / 2)
                throw DataError("few-shot pool for task " + std::string(to_string(inst.task)) +
                                " needs at least " + std::to_string(kFewshotDemos / 2) +
                                " demonstrations per label");
            std::mt19937_64 rng(mix_seed(seed, inst.id));
            std::shuffle(pos.begin(), pos.end(), rng);
            std::shuffle(neg.begin(), neg.end(), rng);
            std::string demos;
            for (std::size_t k = 0; k < kFewshotDemos; ++k) {
                const TaskInstance* d = (k % 2 == 0) ? pos[k / 2] : neg[k / 2];
                if (k > 0) demos += sep;
                demos += d->text + sep +
                         answer_for(p.answer_vocabulary, d->label == Label::acceptable);
            }
            p.full_text = demos + sep + inst.text;
            p.fewshot = {0, demos.size()};
            p.sample = {demos.size() + sep.size(), p.full_text.size()};
            break;
        }
    }
    return p;
}

std::size_t count_letter_a(std::string_view text) {
    return static_cast<std::size_t>(
        std::count_if(text.begin(), text.end(), [](char c) { return c == 'a' || c == 'A'; }));
}

std::string unrelated_instruction_text(std::size_t count) {
    return "Does the given text contain the letter \"a\" exactly " + std::to_string(count) +
           " times? Answer only with \"yes\" or \"no\": choose \"yes\" if the count is correct "
           "or \"no\" if it is not.";
}

AnswerVocabulary random_word_vocabulary(std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, "random_word_labels"));
    std::uniform_int_distribution<std::size_t> pick(0, kRandomWords.size() - 1);
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    return {std::string(kRandomWords[a]), std::string(kRandomWords[b])};
}

RenderedPrompt apply_sanity_variant(const RenderedPrompt& p, Sanity variant, std::uint64_t seed) {
    if (variant == Sanity::none) throw ConfigError("apply_sanity_variant requires a variant");
    if (p.instruction.empty())
        throw ConfigError(std::string(to_string(variant)) +
                          " rewrites the instruction but the prompt has none");

    RenderedPrompt out = p;
    const bool positive = p.label == Label::acceptable;
    auto swap_vocab = [&](RenderedPrompt& q) {
        const AnswerVocabulary swapped{q.answer_vocabulary.negative, q.answer_vocabulary.positive};
        replace_instruction(q, relabel_instruction(q.slice(q.instruction), q.answer_vocabulary,
                                                   swapped));
        q.answer_vocabulary = swapped;
    };
    auto set_vocab = [&](RenderedPrompt& q, const AnswerVocabulary& v) {
        replace_instruction(q, relabel_instruction(q.slice(q.instruction), q.answer_vocabulary, v));
        q.answer_vocabulary = v;
    };

    switch (variant) {
        case Sanity::none: break;
        case Sanity::unrelated_instruction: {
            const std::size_t truth = count_letter_a(p.slice(p.sample));
            // Within a pair one sibling sees the true count and the other a
            // perturbed count, keeping yes/no exactly balanced.
            const bool acc_gets_truth = seeded_coin(seed, p.source_pair_id);
            const bool shows_truth = (p.label == Label::acceptable) == acc_gets_truth;
            std::size_t shown = truth;
            if (!shows_truth) {
                const bool up = truth == 0 || seeded_coin(seed ^ 0x5bd1e995ULL, p.instance_id);
                shown = up ? truth + 1 : truth - 1;
            }
            replace_instruction(out, unrelated_instruction_text(shown));
            out.answer_vocabulary = AnswerVocabulary{};
            out.expected_answer = answer_for(out.answer_vocabulary, shows_truth);
            out.sanity = variant;
            return out;
        }
        case Sanity::label_flip:
            swap_vocab(out);
            // A second flip restores the original prompt.
            out.sanity = p.sanity == Sanity::label_flip ? Sanity::none : Sanity::label_flip;
            break;
        case Sanity::random_label_flip:
            if (seeded_coin(seed, p.instance_id)) swap_vocab(out);
            out.sanity = variant;
            break;
        case Sanity::abstract_labels:
            set_vocab(out, {"apple", "banana"});
            out.sanity = variant;
            break;
        case Sanity::random_word_labels:
            set_vocab(out, random_word_vocabulary(seed));
            out.sanity = variant;
            break;
    }
    out.expected_answer = answer_for(out.answer_vocabulary, positive);
    return out;
}

nlohmann::ordered_json to_json(const RenderedPrompt& p) {
    nlohmann::ordered_json j;
    j["corpus_format_version"] = kCorpusFormatVersion;
    j["instance_id"] = p.instance_id;
    j["task"] = to_string(p.task);
    j["label"] = to_string(p.label);
    j["source_pair_id"] = p.source_pair_id;
    j["variation"] = to_string(p.variation);
    j["sanity"] = to_string(p.sanity);
    j["full_text"] = p.full_text;
    auto span = [](Span s) { return nlohmann::ordered_json::array({s.start, s.end}); };
    j["spans"] = {{"instruction", span(p.instruction)},
                  {"fewshot", span(p.fewshot)},
                  {"sample", span(p.sample)}};
    j["expected_answer"] = p.expected_answer;
    j["answer_vocabulary"] = {p.answer_vocabulary.positive, p.answer_vocabulary.negative};
    return j;
}

RenderedPrompt prompt_from_json(const nlohmann::json& j) {
    try {
        if (j.at("corpus_format_version").get<int>() != kCorpusFormatVersion)
            throw DataError("unsupported corpus_format_version " +
                            j.at("corpus_format_version").dump());
        auto enum_field = [&](const char* key, auto parse) {
            auto v = parse(j.at(key).get<std::string>());
            if (!v) throw DataError(std::string("bad value for '") + key + "'");
            return *v;
        };
        RenderedPrompt p;
        p.instance_id = j.at("instance_id").get<std::string>();
        p.task = enum_field("task", parse_task);
        p.label = enum_field("label", parse_label);
        p.source_pair_id = j.at("source_pair_id").get<std::string>();
        p.variation = enum_field("variation", parse_variation);
        p.sanity = enum_field("sanity", parse_sanity);
        p.full_text = j.at("full_text").get<std::string>();
        auto span = [&](const char* role) {
            const auto& a = j.at("spans").at(role);
            Span s{a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()};
            if (s.start > s.end || s.end > p.full_text.size())
                throw DataError(std::string("span '") + role + "' out of bounds");
            return s;
        };
        p.instruction = span("instruction");
        p.fewshot = span("fewshot");
        p.sample = span("sample");
        p.expected_answer = j.at("expected_answer").get<std::string>();
        p.answer_vocabulary = {j.at("answer_vocabulary").at(0).get<std::string>(),
                               j.at("answer_vocabulary").at(1).get<std::string>()};
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed corpus record: ") + e.what());
    }
}

void write_corpus(const std::filesystem::path& path, std::span<const RenderedPrompt> prompts,
                  std::string_view config_hash) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write corpus file " + path.string());
    for (const auto& p : prompts) {
        auto j = to_json(p);
        if (!config_hash.empty()) j["config_hash"] = std::string(config_hash);
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed for " + path.string());
}

std::vector<RenderedPrompt> read_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file " + path.string());
    std::vector<RenderedPrompt> prompts;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw DataError("corpus line is not valid JSON");
        prompts.push_back(prompt_from_json(j));
    }
    return prompts;
}

}  // namespace probelab::corpus
