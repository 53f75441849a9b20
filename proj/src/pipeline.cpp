#include "probelab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "probelab/actstore.hpp"
#include "probelab/analysis.hpp"
#include "probelab/corpus.hpp"
#include "probelab/report.hpp"

namespace probelab::pipeline {

namespace {

using nlohmann::json;
using oj = nlohmann::ordered_json;

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type: " + it->dump());
    }
}

template <class E>
E enum_or_throw(const json& v, std::optional<E> (*parse)(std::string_view), const std::string& what) {
    if (!v.is_string()) throw ConfigError(what + " must be a string, got " + v.dump());
    auto e = parse(v.get<std::string>());
    if (!e) throw ConfigError("unknown " + what + " '" + v.get<std::string>() + "'");
    return *e;
}

void check_name(const std::string& name, const std::string& what) {
    const bool ok = !name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
    if (!ok || name.front() == '.')
        throw ConfigError(what + " '" + name + "' must use letters, digits, '_', '-' or '.'");
}

fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() || base.empty() ? path : base / path;
}

CorpusSection parse_corpus(const json& j, const fs::path& base) {
    check_keys(j, {"inputs", "variations", "sanity", "limit", "fewshot_pairs", "seed"}, "corpus");
    CorpusSection c;
    if (auto it = j.find("inputs"); it != j.end()) {
        if (!it->is_object()) throw ConfigError("corpus.inputs must map task names to files");
        for (const auto& [task, path] : it->items()) {
            auto t = parse_task(task);
            if (!t) throw ConfigError("unknown task '" + task + "' in corpus.inputs");
            if (!path.is_string()) throw ConfigError("corpus.inputs." + task + " must be a path");
            c.inputs[*t] = resolve(base, path.get<std::string>());
        }
    }
    if (auto it = j.find("variations"); it != j.end()) {
        for (const auto& v : *it) c.variations.push_back(enum_or_throw(v, &parse_variation, "variation"));
    } else {
        c.variations = {Variation::instruction_first, Variation::sample_first,
                        Variation::no_instruction_fewshot};
    }
    if (c.variations.empty()) throw ConfigError("corpus.variations is empty");
    if (auto it = j.find("sanity"); it != j.end()) {
        for (const auto& v : *it) {
            const Sanity s = enum_or_throw(v, &parse_sanity, "sanity variant");
            if (s != Sanity::none) c.sanity.push_back(s);
        }
    }
    c.limit = get_or<std::size_t>(j, "limit", corpus::kDefaultInstanceLimit, "corpus");
    c.fewshot_pairs = get_or<std::size_t>(j, "fewshot_pairs", 4, "corpus");
    c.seed = get_or<std::uint64_t>(j, "seed", 0, "corpus");
    if (c.limit < 2) throw ConfigError("corpus.limit must be at least 2");
    const bool fewshot = std::count(c.variations.begin(), c.variations.end(),
                                    Variation::no_instruction_fewshot) > 0;
    if (fewshot && c.fewshot_pairs < 2)
        throw ConfigError("corpus.fewshot_pairs must be at least 2 for the few-shot variation");
    return c;
}

std::vector<SynthRun> parse_synth(const json& j) {
    check_keys(j, {"runs"}, "synth");
    std::vector<SynthRun> out;
    if (!j.contains("runs")) return out;
    if (!j.at("runs").is_array()) throw ConfigError("synth.runs must be an array");
    for (const auto& r : j.at("runs")) {
        check_keys(r, {"name", "profile", "seed", "intervention", "sanity"}, "synth.runs[]");
        SynthRun s;
        s.name = get_or<std::string>(r, "name", "", "synth.runs[]");
        check_name(s.name, "synth run name");
        if (!r.contains("profile")) throw ConfigError("synth run '" + s.name + "' has no profile");
        s.profile = synth::profile_from_json(r.at("profile"));
        s.seed = get_or<std::uint64_t>(r, "seed", 0, "synth.runs[]");
        if (r.contains("intervention"))
            s.intervention = enum_or_throw(r.at("intervention"), &parse_intervention, "intervention");
        if (r.contains("sanity")) s.sanity = enum_or_throw(r.at("sanity"), &parse_sanity, "sanity variant");
        out.push_back(std::move(s));
    }
    return out;
}

ProbeSection parse_probe(const json& j) {
    check_keys(j, {"kind", "hidden_width", "l2", "max_iterations", "tol", "standardize", "folds", "seeds",
                   "layers", "roles", "control", "control_seed", "mdl", "mdl_schedule", "mdl_seed",
                   "workers"},
               "probe");
    ProbeSection p;
    probes::ProbeKind kind = probes::ProbeKind::linear;
    if (j.contains("kind")) kind = enum_or_throw(j.at("kind"), &probes::parse_probe_kind, "probe kind");
    p.config = probes::ProbeConfig::defaults(kind);
    p.config.hidden_width = get_or<std::size_t>(j, "hidden_width", p.config.hidden_width, "probe");
    p.config.l2_strength = get_or<double>(j, "l2", p.config.l2_strength, "probe");
    p.config.max_iterations = get_or<std::size_t>(j, "max_iterations", p.config.max_iterations, "probe");
    p.config.convergence_tol = get_or<double>(j, "tol", p.config.convergence_tol, "probe");
    p.config.standardize = get_or<bool>(j, "standardize", p.config.standardize, "probe");
    p.config.validate();
    p.cv.folds = get_or<std::size_t>(j, "folds", p.cv.folds, "probe");
    p.cv.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", p.cv.seeds, "probe");
    if (p.cv.folds < 2) throw ConfigError("probe.folds must be at least 2");
    if (p.cv.seeds.empty()) throw ConfigError("probe.seeds must not be empty");
    if (auto it = j.find("layers"); it != j.end() && !(it->is_string() && *it == "all")) {
        p.layers = get_or<std::vector<std::size_t>>(j, "layers", {}, "probe");
        std::sort(p.layers->begin(), p.layers->end());
        p.layers->erase(std::unique(p.layers->begin(), p.layers->end()), p.layers->end());
        if (p.layers->empty()) throw ConfigError("probe.layers is empty");
    }
    if (auto it = j.find("roles"); it != j.end()) {
        std::vector<Role> roles;
        for (const auto& r : *it) roles.push_back(enum_or_throw(r, &parse_role, "role"));
        std::sort(roles.begin(), roles.end());
        roles.erase(std::unique(roles.begin(), roles.end()), roles.end());
        if (roles.empty()) throw ConfigError("probe.roles is empty");
        p.roles = roles;
    }
    p.control = get_or<bool>(j, "control", false, "probe");
    p.control_seed = get_or<std::uint64_t>(j, "control_seed", 0, "probe");
    p.mdl = get_or<bool>(j, "mdl", false, "probe");
    if (j.contains("mdl_schedule"))
        p.mdl_schedule = get_or<std::vector<double>>(j, "mdl_schedule", {}, "probe");
    p.mdl_seed = get_or<std::uint64_t>(j, "mdl_seed", 0, "probe");
    p.workers = get_or<std::size_t>(j, "workers", 1, "probe");
    if (p.workers < 1) throw ConfigError("probe.workers must be at least 1");
    return p;
}

AnalysisSection parse_analysis(const json& j) {
    check_keys(j, {"statistics", "variation_groups", "intervention_pairs", "tau_groups", "rescale_grid",
                   "layer_thirds"},
               "analysis");
    AnalysisSection a;
    if (auto it = j.find("statistics"); it != j.end()) {
        for (const auto& s : *it) {
            if (!s.is_string() ||
                std::find(kStatistics.begin(), kStatistics.end(), s.get<std::string>()) == kStatistics.end())
                throw ConfigError("unknown statistic " + s.dump());
            a.statistics.insert(s.get<std::string>());
        }
    } else {
        a.statistics.insert(kStatistics.begin(), kStatistics.end());
    }
    if (get_or<std::string>(j, "layer_thirds", "floor", "analysis") != "floor")
        throw ConfigError("analysis.layer_thirds supports only \"floor\"");
    for (const auto& g : j.value("variation_groups", json::array())) {
        check_keys(g, {"name", "runs"}, "analysis.variation_groups[]");
        VariationGroup vg;
        vg.name = get_or<std::string>(g, "name", "", "analysis.variation_groups[]");
        check_name(vg.name, "variation group name");
        vg.runs = get_or<std::map<std::string, std::string>>(g, "runs", {}, "analysis.variation_groups[]");
        if (vg.runs.size() < 2) throw ConfigError("variation group '" + vg.name + "' needs at least two runs");
        a.variation_groups.push_back(std::move(vg));
    }
    for (const auto& p : j.value("intervention_pairs", json::array())) {
        check_keys(p, {"name", "baseline", "intervened"}, "analysis.intervention_pairs[]");
        InterventionPair ip;
        ip.name = get_or<std::string>(p, "name", "", "analysis.intervention_pairs[]");
        check_name(ip.name, "intervention pair name");
        ip.baseline = get_or<std::string>(p, "baseline", "", "analysis.intervention_pairs[]");
        ip.intervened = get_or<std::string>(p, "intervened", "", "analysis.intervention_pairs[]");
        a.intervention_pairs.push_back(std::move(ip));
    }
    for (const auto& g : j.value("tau_groups", json::array())) {
        check_keys(g, {"name", "runs"}, "analysis.tau_groups[]");
        RunGroup rg;
        rg.name = get_or<std::string>(g, "name", "", "analysis.tau_groups[]");
        check_name(rg.name, "tau group name");
        rg.runs = get_or<std::vector<std::string>>(g, "runs", {}, "analysis.tau_groups[]");
        if (rg.runs.size() < 2) throw ConfigError("tau group '" + rg.name + "' needs at least two runs");
        a.tau_groups.push_back(std::move(rg));
    }
    a.rescale_grid = get_or<std::size_t>(j, "rescale_grid", 11, "analysis");
    if (a.rescale_grid < 2) throw ConfigError("analysis.rescale_grid must be at least 2");
    return a;
}

IoSection parse_io(const json& j, const fs::path& base) {
    check_keys(j, {"runs", "output_dir"}, "io");
    IoSection io;
    const json runs = j.value("runs", json::object());
    for (const auto& [name, path] : runs.items()) {
        check_name(name, "run name");
        if (!path.is_string()) throw ConfigError("io.runs." + name + " must be a path");
        io.runs[name] = resolve(base, path.get<std::string>());
    }
    if (j.contains("output_dir"))
        io.output_dir = resolve(base, get_or<std::string>(j, "output_dir", "", "io"));
    return io;
}

std::string hash_of(const json& canonical) { return hex64(fnv1a64(canonical.dump())); }

// ---------------------------------------------------------------------------

std::string stats_file_name(const std::string& run) { return run + ".jsonl"; }

using StatsByRole = std::map<Role, std::vector<probes::ProbeStats>>;

StatsByRole read_stats(const fs::path& path, const std::string& run) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("no probe stats for run '" + run + "' at " + path.string() + "; run `probe` first");
    StatsByRole out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw DataError("malformed line in " + path.string());
        auto s = probes::stats_from_json(j);
        out[s.role].push_back(std::move(s));
    }
    for (auto& [_, v] : out) {
        std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
    }
    return out;
}

bool covers_all_layers(const std::vector<probes::ProbeStats>& v, std::size_t L) {
    if (v.size() != L) return false;
    for (std::size_t l = 0; l < L; ++l) {
        if (v[l].layer != l) return false;
    }
    return true;
}

std::vector<std::vector<int>> predictions_of(const std::vector<probes::ProbeStats>& v) {
    std::vector<std::vector<int>> p;
    for (const auto& s : v) p.push_back(s.predictions);
    return p;
}

std::string acc(double v) { return report::fmt_fixed(v, 4); }

std::string tau_cell(const std::optional<double>& t) { return report::fmt_opt(t, 4); }

struct ReportContext {
    const PipelineConfig& cfg;
    fs::path dir;
    std::map<std::string, actstore::RunManifest> manifests;
    std::map<std::string, StatsByRole> stats;
    std::vector<fs::path> written;

    void table(const std::string& name, const report::Table& t) {
        const auto p = dir / (name + ".tsv");
        report::write_text(p, t.render(cfg.hash));
        written.push_back(p);
    }
    void svg(const std::string& name, const std::string& content) {
        const auto p = dir / (name + ".svg");
        report::write_text(p, content);
        written.push_back(p);
    }
    const std::vector<probes::ProbeStats>* role_stats(const std::string& run, Role r) const {
        auto it = stats.at(run).find(r);
        return it == stats.at(run).end() ? nullptr : &it->second;
    }
};

constexpr Role kRoles[] = {Role::sample, Role::output};

void report_behavior(ReportContext& ctx) {
    report::Table t{{"run", "model_id", "task", "variation", "sanity", "intervention", "instances", "em_accuracy"}, {}};
    for (const auto& [name, m] : ctx.manifests) {
        t.add({name, m.model_id, std::string(to_string(m.task)), std::string(to_string(m.variation)),
               std::string(to_string(m.sanity)), std::string(to_string(m.intervention)),
               std::to_string(m.num_instances()), acc(analysis::behavior_accuracy(m))});
    }
    ctx.table("behavior", t);
}

void report_curves(ReportContext& ctx) {
    for (Role r : kRoles) {
        report::Table t{{"run", "layer", "mean", "stddev", "pooled_accuracy", "control_mean", "selectivity",
                         "mdl_bits", "mdl_compression"},
                        {}};
        report::LinePlot plot{"probe accuracy (" + std::string(to_string(r)) + ")", "layer", "accuracy", {}};
        for (const auto& [name, _] : ctx.manifests) {
            const auto* v = ctx.role_stats(name, r);
            if (!v) continue;
            report::Series s{name, {}, {}};
            for (const auto& st : *v) {
                t.add({name, std::to_string(st.layer), acc(st.mean), acc(st.stddev), acc(st.pooled_accuracy),
                       report::fmt_opt(st.control_mean, 4), report::fmt_opt(st.selectivity(), 4),
                       report::fmt_opt(st.mdl_codelength_bits, 2), report::fmt_opt(st.mdl_compression, 4)});
                s.x.push_back(static_cast<double>(st.layer));
                s.y.push_back(st.mean);
            }
            plot.series.push_back(std::move(s));
        }
        if (plot.series.empty()) continue;
        const std::string base = "curves_" + std::string(to_string(r));
        ctx.table(base, t);
        ctx.svg(base, report::render_line_plot(plot, ctx.cfg.hash));
    }
}

// Predictions of `run` reordered to the instance order of `anchor`.
std::vector<int> aligned_predictions(const ReportContext& ctx, const std::string& anchor,
                                     const std::string& run, const std::vector<int>& preds) {
    const auto rep = actstore::validate_pair(ctx.manifests.at(anchor), ctx.manifests.at(run));
    if (!rep.compatible) {
        std::string why;
        for (const auto& p : rep.problems) why += (why.empty() ? "" : "; ") + p;
        throw DataError("runs '" + anchor + "' and '" + run + "' are not comparable: " + why);
    }
    std::vector<int> out(preds.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = preds.at(rep.permutation[i]);
    return out;
}

void report_spread(ReportContext& ctx, const VariationGroup& g) {
    report::Table t{{"role", "layer"}, {}};
    for (const auto& [var, _] : g.runs) t.columns.push_back(var);
    t.columns.push_back("mean");
    t.columns.push_back("spread_pp");
    report::LinePlot spread{"cross-variation spread (" + g.name + ")", "layer", "spread (pp)", {}};
    for (Role r : kRoles) {
        std::map<std::string, std::vector<probes::ProbeStats>> by_var;
        for (const auto& [var, run] : g.runs) {
            const auto* v = ctx.role_stats(run, r);
            if (!v) break;
            if (!covers_all_layers(*v, ctx.manifests.at(run).num_layers))
                throw DataError("spread for group '" + g.name + "' needs stats at every layer of run '" + run + "'");
            by_var[var] = *v;
        }
        if (by_var.size() != g.runs.size()) continue;
        const auto curve = analysis::layer_curves(by_var);
        report::LinePlot per_var{"probe accuracy by variation (" + g.name + ", " + std::string(to_string(r)) + ")",
                                 "layer", "accuracy", {}};
        for (const auto& [var, v] : by_var) {
            report::Series s{var, {}, analysis::curve_of(v)};
            for (std::size_t l = 0; l < s.y.size(); ++l) s.x.push_back(static_cast<double>(l));
            per_var.series.push_back(std::move(s));
        }
        report::Series s{std::string(to_string(r)), {}, curve.spread_pp};
        for (std::size_t l = 0; l < curve.mean.size(); ++l) {
            s.x.push_back(static_cast<double>(l));
            std::vector<std::string> row{std::string(to_string(r)), std::to_string(l)};
            for (const auto& [var, v] : by_var) row.push_back(acc(v[l].mean));
            row.push_back(acc(curve.mean[l]));
            row.push_back(report::fmt_pp(curve.spread_pp[l]));
            t.add(std::move(row));
        }
        spread.series.push_back(std::move(s));
        ctx.svg("variations_" + g.name + "_" + std::string(to_string(r)),
                report::render_line_plot(per_var, ctx.cfg.hash));
    }
    if (spread.series.empty()) return;
    ctx.table("spread_" + g.name, t);
    ctx.svg("spread_" + g.name, report::render_line_plot(spread, ctx.cfg.hash));
}

void report_agreement(ReportContext& ctx, const VariationGroup& g) {
    report::Table t{{"role", "layer"}, {}};
    std::vector<std::string> vars;
    for (const auto& [var, _] : g.runs) vars.push_back(var);
    for (std::size_t a = 0; a < vars.size(); ++a)
        for (std::size_t b = a + 1; b < vars.size(); ++b) t.columns.push_back(vars[a] + "|" + vars[b]);
    t.columns.push_back("all_agree");
    const std::string anchor = g.runs.begin()->second;
    for (Role r : kRoles) {
        std::map<std::string, const std::vector<probes::ProbeStats>*> by_var;
        for (const auto& [var, run] : g.runs) {
            if (const auto* v = ctx.role_stats(run, r)) by_var[var] = v;
        }
        if (by_var.size() != g.runs.size()) continue;
        for (const auto& anchor_stat : *by_var.begin()->second) {
            const std::size_t layer = anchor_stat.layer;
            std::map<std::string, std::vector<int>> preds;
            for (const auto& [var, v] : by_var) {
                auto it = std::find_if(v->begin(), v->end(), [&](const auto& s) { return s.layer == layer; });
                if (it == v->end())
                    throw DataError("agreement for group '" + g.name + "': run '" + g.runs.at(var) +
                                    "' has no stats at layer " + std::to_string(layer));
                preds[var] = aligned_predictions(ctx, anchor, g.runs.at(var), it->predictions);
            }
            const auto ag = analysis::variation_agreement(preds);
            std::vector<std::string> row{std::string(to_string(r)), std::to_string(layer)};
            for (std::size_t a = 0; a < vars.size(); ++a)
                for (std::size_t b = a + 1; b < vars.size(); ++b) row.push_back(acc(ag.pairwise.at({vars[a], vars[b]})));
            row.push_back(acc(ag.all_agree));
            t.add(std::move(row));
        }
    }
    if (!t.rows.empty()) ctx.table("agreement_" + g.name, t);
}

void report_alignment(ReportContext& ctx) {
    for (const auto& [name, m] : ctx.manifests) {
        if (m.behavior.size() != m.num_instances()) continue;
        std::vector<int> beh, labels;
        std::vector<std::optional<Label>> beh_labels;
        for (std::size_t i = 0; i < m.num_instances(); ++i) {
            beh.push_back(m.behavior[i].em_correct ? 1 : 0);
            labels.push_back(label_bit(m.labels[i]));
            beh_labels.push_back(m.behavior[i].predicted_label);
        }
        report::Table props{{"role", "layer"}, {}};
        for (std::size_t c = 0; c < analysis::kAlignmentCategories; ++c)
            props.columns.emplace_back(analysis::to_string(static_cast<analysis::AlignmentCategory>(c)));
        props.columns.push_back("probe_matches_answer");
        report::Table runs{{"role", "category", "run_length", "count"}, {}};
        for (Role r : kRoles) {
            const auto* v = ctx.role_stats(name, r);
            if (!v) continue;
            const auto preds = predictions_of(*v);
            const auto br = analysis::alignment(preds, beh, labels);
            const auto match = analysis::probe_behavior_alignment(preds, beh_labels);
            for (std::size_t k = 0; k < v->size(); ++k) {
                std::vector<std::string> row{std::string(to_string(r)), std::to_string((*v)[k].layer)};
                for (double p : br.proportions[k]) row.push_back(acc(p));
                row.push_back(acc(match[k]));
                props.add(std::move(row));
            }
            for (std::size_t c = 0; c < analysis::kAlignmentCategories; ++c) {
                for (std::size_t len = 1; len < br.run_lengths[c].size(); ++len) {
                    if (br.run_lengths[c][len] == 0) continue;
                    runs.add({std::string(to_string(r)),
                              std::string(analysis::to_string(static_cast<analysis::AlignmentCategory>(c))),
                              std::to_string(len), std::to_string(br.run_lengths[c][len])});
                }
            }
        }
        if (props.rows.empty()) continue;
        ctx.table("alignment_" + name, props);
        ctx.table("alignment_runs_" + name, runs);
    }
}

void report_cross_layer(ReportContext& ctx) {
    for (const auto& [name, _] : ctx.manifests) {
        for (Role r : kRoles) {
            const auto* v = ctx.role_stats(name, r);
            if (!v) continue;
            const auto m = analysis::cross_layer_agreement(predictions_of(*v));
            report::Table t{{"layer"}, {}};
            for (const auto& s : *v) t.columns.push_back(std::to_string(s.layer));
            for (std::size_t i = 0; i < m.size(); ++i) {
                std::vector<std::string> row{std::to_string((*v)[i].layer)};
                for (double x : m[i]) row.push_back(acc(x));
                t.add(std::move(row));
            }
            const std::string base = "cross_layer_" + name + "_" + std::string(to_string(r));
            ctx.table(base, t);
            ctx.svg(base, report::render_heatmap("cross-layer agreement (" + name + ", " +
                                                     std::string(to_string(r)) + ")",
                                                 m, ctx.cfg.hash));
        }
    }
}

void report_tau(ReportContext& ctx) {
    // Config level: across the runs of a group, probe accuracy vs EM accuracy.
    for (const auto& g : ctx.cfg.analysis.tau_groups) {
        report::Table t{{"role", "layer", "tau"}, {}};
        std::vector<double> beh;
        for (const auto& run : g.runs) beh.push_back(analysis::behavior_accuracy(ctx.manifests.at(run)));
        for (Role r : kRoles) {
            std::vector<const std::vector<probes::ProbeStats>*> per_run;
            for (const auto& run : g.runs) per_run.push_back(ctx.role_stats(run, r));
            if (std::count(per_run.begin(), per_run.end(), nullptr) > 0) continue;
            const auto& first = *per_run.front();
            std::vector<double> overall(g.runs.size(), 0.0);
            for (std::size_t k = 0; k < first.size(); ++k) {
                std::vector<double> accs;
                for (std::size_t i = 0; i < per_run.size(); ++i) {
                    const auto& v = *per_run[i];
                    if (v.size() != first.size() || v[k].layer != first[k].layer)
                        throw DataError("tau group '" + g.name + "': runs were probed at different layers");
                    accs.push_back(v[k].mean);
                    overall[i] += v[k].mean / static_cast<double>(first.size());
                }
                t.add({std::string(to_string(r)), std::to_string(first[k].layer),
                       tau_cell(analysis::kendall_tau(accs, beh))});
            }
            t.add({std::string(to_string(r)), "all", tau_cell(analysis::kendall_tau(overall, beh))});
        }
        if (!t.rows.empty()) ctx.table("tau_" + g.name, t);
    }
    // Instance level: probe correctness vs behavior correctness within a run.
    for (const auto& [name, m] : ctx.manifests) {
        if (m.behavior.size() != m.num_instances()) continue;
        std::vector<double> beh;
        for (const auto& b : m.behavior) beh.push_back(b.em_correct ? 1.0 : 0.0);
        report::Table t{{"role", "layer", "tau"}, {}};
        for (Role r : kRoles) {
            const auto* v = ctx.role_stats(name, r);
            if (!v) continue;
            for (const auto& s : *v) {
                std::vector<double> ok(m.num_instances());
                for (std::size_t i = 0; i < ok.size(); ++i)
                    ok[i] = s.predictions.at(i) == label_bit(m.labels[i]) ? 1.0 : 0.0;
                t.add({std::string(to_string(r)), std::to_string(s.layer), tau_cell(analysis::kendall_tau(ok, beh))});
            }
        }
        if (!t.rows.empty()) ctx.table("tau_instance_" + name, t);
    }
}

void report_intervention(ReportContext& ctx) {
    if (ctx.cfg.analysis.intervention_pairs.empty()) return;
    report::Table t{{"pair", "baseline", "intervened", "behavior_pp"}, {}};
    for (Role r : kRoles) {
        for (const char* third : {"lower", "middle", "upper"})
            t.columns.push_back(std::string(to_string(r)) + "_" + third + "_pp");
    }
    for (const auto& p : ctx.cfg.analysis.intervention_pairs) {
        analysis::RunWithStats base{&ctx.manifests.at(p.baseline), ctx.stats.at(p.baseline)};
        analysis::RunWithStats other{&ctx.manifests.at(p.intervened), ctx.stats.at(p.intervened)};
        const auto d = analysis::intervention_delta(base, other);
        std::vector<std::string> row{p.name, p.baseline, p.intervened, report::fmt_pp(analysis::round_pp(d.behavior_pp))};
        for (Role r : kRoles) {
            auto it = d.third_pp.find(r);
            for (std::size_t k = 0; k < 3; ++k)
                row.push_back(it == d.third_pp.end() ? "NA" : report::fmt_pp(analysis::round_pp(it->second[k])));
        }
        t.add(std::move(row));
    }
    ctx.table("intervention", t);
}

void report_rescale(ReportContext& ctx) {
    const std::size_t G = ctx.cfg.analysis.rescale_grid;
    for (Role r : kRoles) {
        report::Table t{{"run", "relative_depth", "mean"}, {}};
        report::LinePlot plot{"probe accuracy by relative depth (" + std::string(to_string(r)) + ")",
                              "relative depth", "accuracy", {}};
        for (const auto& [name, m] : ctx.manifests) {
            const auto* v = ctx.role_stats(name, r);
            if (!v || !covers_all_layers(*v, m.num_layers)) continue;
            const auto curve = analysis::curve_of(*v);
            const auto y = analysis::relative_rescale(curve, G);
            report::Series s{name, {}, y};
            for (std::size_t j = 0; j < G; ++j) {
                const double x = static_cast<double>(j) / static_cast<double>(G - 1);
                s.x.push_back(x);
                t.add({name, report::fmt_fixed(x, 4), acc(y[j])});
            }
            plot.series.push_back(std::move(s));
        }
        if (plot.series.empty()) continue;
        const std::string base = "rescale_" + std::string(to_string(r));
        ctx.table(base, t);
        ctx.svg(base, report::render_line_plot(plot, ctx.cfg.hash));
    }
}

void require_inputs_exist(const PipelineConfig& cfg) {
    for (const auto& [name, path] : cfg.io.runs) {
        if (!fs::exists(path)) throw ConfigError("io.runs." + name + ": no such file " + path.string());
    }
}

}  // namespace

// ---------------------------------------------------------------------------

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
    check_keys(j, {"corpus", "synth", "probe", "analysis", "io"}, "config");
    PipelineConfig c;
    c.corpus = parse_corpus(j.value("corpus", json::object()), base_dir);
    c.synth_runs = parse_synth(j.value("synth", json::object()));
    c.probe = parse_probe(j.value("probe", json::object()));
    c.analysis = parse_analysis(j.value("analysis", json::object()));
    c.io = parse_io(j.value("io", json::object()), base_dir);

    std::set<std::string> names;
    for (const auto& s : c.synth_runs) {
        if (!names.insert(s.name).second) throw ConfigError("duplicate run name '" + s.name + "'");
    }
    for (const auto& [name, _] : c.io.runs) {
        if (!names.insert(name).second) throw ConfigError("duplicate run name '" + name + "'");
    }
    auto known = [&](const std::string& run, const std::string& where) {
        if (!names.count(run)) throw ConfigError(where + " refers to unknown run '" + run + "'");
    };
    for (const auto& g : c.analysis.variation_groups)
        for (const auto& [_, run] : g.runs) known(run, "variation group '" + g.name + "'");
    for (const auto& p : c.analysis.intervention_pairs) {
        known(p.baseline, "intervention pair '" + p.name + "'");
        known(p.intervened, "intervention pair '" + p.name + "'");
    }
    for (const auto& g : c.analysis.tau_groups)
        for (const auto& run : g.runs) known(run, "tau group '" + g.name + "'");

    // The hash covers what determines artifact contents, so the output
    // location is left out.
    c.canonical = j;
    if (c.canonical.contains("io")) {
        c.canonical["io"].erase("output_dir");
        if (c.canonical["io"].empty()) c.canonical.erase("io");
    }
    c.hash = hash_of(c.canonical);
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j = json::parse(in, nullptr, false, true);
    if (j.is_discarded()) throw ConfigError("config " + path.string() + " is not valid JSON");
    PipelineConfig c = from_json(j, path.parent_path());
    c.source = path;
    return c;
}

void PipelineConfig::override_seeds(std::vector<std::uint64_t> seeds) {
    if (seeds.empty()) throw ConfigError("seed override must not be empty");
    probe.cv.seeds = seeds;
    canonical["probe"]["seeds"] = std::move(seeds);
    hash = hash_of(canonical);
}

std::map<std::string, fs::path> PipelineConfig::run_paths(const fs::path& out) const {
    std::map<std::string, fs::path> paths = io.runs;
    for (const auto& s : synth_runs) paths[s.name] = out / "runs" / (s.name + ".actrun");
    return paths;
}

fs::path resolve_output_dir(const PipelineConfig& cfg, const std::optional<fs::path>& flag) {
    if (flag) return *flag;
    if (cfg.io.output_dir) return *cfg.io.output_dir;
    const std::string stem = cfg.source.empty() ? "pipeline" : cfg.source.stem().string();
    if (const char* root = std::getenv(kOutputRootEnv); root && *root) return fs::path(root) / stem;
    return fs::path("probelab-out") / stem;
}

void run_jobs(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    if (count == 0) return;
    workers = std::max<std::size_t>(1, std::min(workers, count));
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

std::vector<fs::path> cmd_build_corpus(const PipelineConfig& cfg, const fs::path& out) {
    const auto& c = cfg.corpus;
    if (c.inputs.empty()) throw ConfigError("corpus.inputs lists no tasks");
    for (const auto& [task, path] : c.inputs) {
        if (!fs::exists(path))
            throw ConfigError("corpus input for " + std::string(to_string(task)) + " not found: " + path.string());
    }
    std::vector<fs::path> written;
    oj manifest;
    manifest["config_hash"] = cfg.hash;
    manifest["corpus_format_version"] = corpus::kCorpusFormatVersion;
    manifest["separator"] = std::string(corpus::kBlockSeparator);
    manifest["demo_format"] = std::string(corpus::kDemoFormat);
    manifest["fewshot_demos"] = corpus::kFewshotDemos;
    manifest["fewshot_pairs"] = c.fewshot_pairs;
    manifest["seed"] = c.seed;
    manifest["limit"] = c.limit;
    manifest["tasks"] = oj::object();

    const bool fewshot = std::count(c.variations.begin(), c.variations.end(),
                                    Variation::no_instruction_fewshot) > 0;
    for (const auto& [task, path] : c.inputs) {
        std::vector<corpus::Rejection> parse_errors;
        const auto records = corpus::read_raw_records(path, parse_errors);
        auto built = corpus::build_instances(records, task, c.limit);

        corpus::PoolSplit split;
        if (fewshot) {
            split = corpus::carve_fewshot_pool(std::move(built.instances), c.fewshot_pairs, c.seed);
        } else {
            split.evaluation = std::move(built.instances);
        }
        if (split.evaluation.empty())
            throw DataError("no usable " + std::string(to_string(task)) + " instances in " + path.string());

        std::vector<corpus::RenderedPrompt> prompts;
        const std::string instruction(corpus::task_instruction(task));
        for (Variation v : c.variations) {
            const bool has_instruction = v != Variation::no_instruction_fewshot;
            std::vector<corpus::RenderedPrompt> plain;
            for (const auto& inst : split.evaluation) {
                plain.push_back(corpus::render_prompt(
                    inst, v, has_instruction ? std::optional<std::string>(instruction) : std::nullopt,
                    split.pool, c.seed));
            }
            prompts.insert(prompts.end(), plain.begin(), plain.end());
            if (!has_instruction) continue;
            for (Sanity s : c.sanity) {
                for (const auto& p : plain) prompts.push_back(corpus::apply_sanity_variant(p, s, c.seed));
            }
        }

        const auto file = out / "corpus" / (std::string(to_string(task)) + ".jsonl");
        fs::create_directories(file.parent_path());
        const auto tmp = fs::path(file.string() + ".tmp");
        corpus::write_corpus(tmp, prompts, cfg.hash);
        fs::rename(tmp, file);
        written.push_back(file);

        oj t;
        t["source"] = path.filename().string();
        t["instances"] = split.evaluation.size();
        std::size_t pool_size = 0;
        if (auto it = split.pool.demos.find(task); it != split.pool.demos.end()) pool_size = it->second.size();
        t["fewshot_pool_instances"] = pool_size;
        t["prompts"] = prompts.size();
        oj rej = oj::array();
        for (const auto& r : built.rejections) rej.push_back({{"record", r.record_index}, {"reason", r.reason}});
        for (const auto& r : parse_errors) rej.push_back({{"record", r.record_index}, {"reason", r.reason}});
        t["rejections"] = rej;
        t["warnings"] = built.warnings;
        manifest["tasks"][std::string(to_string(task))] = t;
    }
    const auto mpath = out / "corpus" / "manifest.json";
    report::write_text(mpath, manifest.dump(2) + "\n");
    written.push_back(mpath);
    return written;
}

std::vector<fs::path> cmd_synth(const PipelineConfig& cfg, const fs::path& out) {
    if (cfg.synth_runs.empty()) throw ConfigError("synth.runs is empty");
    std::vector<fs::path> written;
    for (const auto& s : cfg.synth_runs) {
        auto run = synth::generate_planted_run(s.profile, s.seed);
        run.manifest.intervention = s.intervention;
        run.manifest.sanity = s.sanity;
        run.manifest.notes["config_hash"] = cfg.hash;
        run.manifest.notes["run_name"] = s.name;
        run.manifest.notes["profile"] = synth::to_json(s.profile);
        const auto path = out / "runs" / (s.name + ".actrun");
        fs::create_directories(path.parent_path());
        actstore::write_run(run, path);
        written.push_back(path);
    }
    return written;
}

std::vector<fs::path> cmd_probe(const PipelineConfig& cfg, const fs::path& out) {
    require_inputs_exist(cfg);
    const auto paths = cfg.run_paths(out);
    if (paths.empty()) throw ConfigError("no runs to probe: configure io.runs or synth.runs");

    struct Job {
        std::size_t run;
        Role role;
        std::size_t layer;
    };
    std::vector<std::string> names;
    std::vector<actstore::ActivationRun> runs;
    std::vector<Job> jobs;
    for (const auto& [name, path] : paths) {
        if (!fs::exists(path)) throw DataError("run '" + name + "' not found at " + path.string() + "; run `synth` first");
        runs.push_back(actstore::read_run(path));
        names.push_back(name);
        const auto& m = runs.back().manifest;
        std::vector<Role> roles = cfg.probe.roles.value_or(std::vector<Role>{});
        if (!cfg.probe.roles) {
            for (Role r : kRoles)
                if (m.has_role(r)) roles.push_back(r);
        }
        for (Role r : roles) {
            if (!m.has_role(r)) {
                std::string present;
                for (Role x : m.roles) present += (present.empty() ? "" : ", ") + std::string(to_string(x));
                throw DataError("run '" + name + "' has no '" + std::string(to_string(r)) +
                                "' role (stored roles: " + present + ")");
            }
        }
        std::vector<std::size_t> layers;
        if (cfg.probe.layers) {
            layers = *cfg.probe.layers;
            if (layers.back() >= m.num_layers)
                throw DataError("layer " + std::to_string(layers.back()) + " requested but run '" + name +
                                "' has " + std::to_string(m.num_layers) + " layers");
        } else {
            for (std::size_t l = 0; l < m.num_layers; ++l) layers.push_back(l);
        }
        for (Role r : roles)
            for (std::size_t l : layers) jobs.push_back({runs.size() - 1, r, l});
    }

    std::vector<probes::ProbeStats> results(jobs.size());
    const auto& p = cfg.probe;
    run_jobs(jobs.size(), p.workers, [&](std::size_t i) {
        const Job& job = jobs[i];
        const auto& run = runs[job.run];
        const Eigen::MatrixXd X = run.layer_features(job.role, job.layer);
        const std::vector<int> y = run.label_bits();
        const auto& ids = run.manifest.instance_ids;
        probes::ProbeStats st = probes::cross_validate(X, y, ids, p.config, p.cv);
        st.layer = job.layer;
        st.role = job.role;
        if (p.control) {
            const auto yc = probes::control_labels(ids, p.control_seed);
            st.control_mean = probes::cross_validate(X, yc, ids, p.config, p.cv).mean;
        }
        if (p.mdl) {
            const auto schedule = p.mdl_schedule.value_or(probes::default_mdl_schedule(y.size()));
            const auto res = probes::mdl_codelength(X, y, p.config, schedule, p.mdl_seed);
            st.mdl_codelength_bits = res.codelength_bits;
            st.mdl_compression = res.compression;
        }
        results[i] = std::move(st);
    });

    std::vector<fs::path> written;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        std::string body;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].run != r) continue;
            oj line;
            line["config_hash"] = cfg.hash;
            line["run"] = names[r];
            line["probe_kind"] = std::string(probes::to_string(p.config.kind));
            const auto fields = probes::to_json(results[i]);
            for (const auto& [k, v] : fields.items()) line[k] = v;
            body += line.dump() + "\n";
        }
        const auto path = out / "stats" / stats_file_name(names[r]);
        report::write_text(path, body);
        written.push_back(path);
    }
    return written;
}

std::vector<fs::path> cmd_report(const PipelineConfig& cfg, const fs::path& out) {
    require_inputs_exist(cfg);
    ReportContext ctx{cfg, out / "report", {}, {}, {}};
    for (const auto& [name, path] : cfg.run_paths(out)) {
        if (!fs::exists(path)) throw DataError("run '" + name + "' not found at " + path.string());
        ctx.manifests.emplace(name, actstore::read_manifest(path));
        ctx.stats.emplace(name, read_stats(out / "stats" / stats_file_name(name), name));
    }
    if (ctx.manifests.empty()) throw ConfigError("no runs to report on");
    const auto& want = cfg.analysis.statistics;
    auto on = [&](const char* s) { return want.count(s) > 0; };
    if (on("behavior")) report_behavior(ctx);
    if (on("curves")) report_curves(ctx);
    for (const auto& g : cfg.analysis.variation_groups) {
        if (on("spread")) report_spread(ctx, g);
        if (on("agreement")) report_agreement(ctx, g);
    }
    if (on("alignment")) report_alignment(ctx);
    if (on("cross_layer")) report_cross_layer(ctx);
    if (on("tau")) report_tau(ctx);
    if (on("intervention")) report_intervention(ctx);
    if (on("rescale")) report_rescale(ctx);
    return ctx.written;
}

std::vector<std::string> cmd_validate(const PipelineConfig* cfg, const std::vector<fs::path>& files,
                                      const fs::path& out) {
    std::vector<std::string> lines;
    auto check_run = [&](const std::string& label, const fs::path& path) {
        const auto run = actstore::read_run(path);
        const auto& m = run.manifest;
        lines.push_back(label + ": ok (" + std::to_string(m.num_layers) + " layers, " +
                        std::to_string(m.num_instances()) + " instances, d=" + std::to_string(m.hidden_dim) + ")");
        return m;
    };
    if (cfg) {
        lines.push_back("config: ok (hash " + cfg->hash + ")");
        for (const auto& [task, path] : cfg->corpus.inputs) {
            if (!fs::exists(path))
                throw ConfigError("corpus input for " + std::string(to_string(task)) + " not found: " + path.string());
            lines.push_back("corpus input " + std::string(to_string(task)) + ": present");
        }
        require_inputs_exist(*cfg);
        std::map<std::string, actstore::RunManifest> manifests;
        for (const auto& [name, path] : cfg->run_paths(out)) {
            if (!fs::exists(path)) {
                lines.push_back("run " + name + ": not yet generated");
                continue;
            }
            manifests.emplace(name, check_run("run " + name, path));
        }
        for (const auto& p : cfg->analysis.intervention_pairs) {
            auto a = manifests.find(p.baseline), b = manifests.find(p.intervened);
            if (a == manifests.end() || b == manifests.end()) continue;
            const auto rep = actstore::validate_pair(a->second, b->second);
            if (!rep.compatible) {
                std::string why;
                for (const auto& x : rep.problems) why += (why.empty() ? "" : "; ") + x;
                throw DataError("intervention pair '" + p.name + "' is incompatible: " + why);
            }
            lines.push_back("intervention pair " + p.name + ": compatible" +
                            (rep.needs_reorder ? " (instances reordered)" : ""));
        }
    }
    for (const auto& f : files) {
        if (f.extension() == ".actrun") {
            check_run(f.string(), f);
        } else if (f.extension() == ".jsonl") {
            const auto prompts = corpus::read_corpus(f);
            lines.push_back(f.string() + ": ok (" + std::to_string(prompts.size()) + " prompts)");
        } else {
            throw ConfigError("cannot validate " + f.string() + ": expected .actrun or .jsonl");
        }
    }
    return lines;
}

}  // namespace probelab::pipeline
