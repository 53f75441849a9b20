// Acceptance suite: one PASS/FAIL line per criterion. Exit status is
// non-zero when any criterion fails. INFO lines are context only.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "probelab/analysis.hpp"
#include "probelab/pipeline.hpp"
#include "probelab/probes.hpp"
#include "probelab/synth.hpp"

using namespace probelab;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void verdict(bool ok, const std::string& name, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void info(const std::string& name, const std::string& detail) {
    std::printf("INFO %s: %s\n", name.c_str(), detail.c_str());
    std::fflush(stdout);
}

std::string f4(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4f", v);
    return b;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

actstore::ActivationRun planted(std::size_t n, std::size_t d, double delta, std::uint64_t seed) {
    return synth::generate_planted_run(synth::PlantProfile::constant(2, d, n, delta, {Role::sample}), seed);
}

// Mean held-out accuracy over data seeds; each data seed gets its own fold seed.
double ladder_accuracy(std::size_t n, std::size_t d, double delta, const probes::ProbeConfig& cfg,
                       std::size_t data_seeds, std::uint64_t base = 0) {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < data_seeds; ++s) {
        const auto run = planted(n, d, delta, 1000 * (base + 1) + s);
        sum += probes::cross_validate(run, Role::sample, 1, cfg, {4, {s}}).mean;
    }
    return sum / static_cast<double>(data_seeds);
}

const std::vector<double> kDeltas{0.0, 0.5, 1.0, 2.0, 4.0, 6.0};

void calibration() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double delta : kDeltas) {
        const double acc = ladder_accuracy(2000, 64, delta, {}, 5);
        const double bayes = synth::bayes_accuracy(delta);
        ok = ok && std::abs(acc - bayes) <= 0.03;
        detail += "d=" + f4(delta).substr(0, 3) + " acc " + f4(acc) + " vs " + f4(bayes) + "; ";
    }
    const double secs = seconds_since(t0);
    verdict(ok, "planted-signal calibration (+-0.03 of Phi(delta/2), N=2000, d=64, 5 seeds)", detail);
    verdict(secs < 120.0, "calibration runtime < 2 min", f4(secs) + " s");
}

void selectivity() {
    auto sel = [](double delta) {
        const auto run = planted(2000, 64, delta, 77);
        const auto X = run.layer_features(Role::sample, 1);
        const auto y = run.label_bits();
        const auto& ids = run.manifest.instance_ids;
        const double real = probes::cross_validate(X, y, ids, {}, {}).mean;
        const double control = probes::cross_validate(X, probes::control_labels(ids, 0), ids, {}, {}).mean;
        return std::pair{real, control};
    };
    const auto [r4, c4] = sel(4.0);
    verdict(r4 - c4 >= 0.30, "selectivity at delta=4 >= 0.30",
            "accuracy " + f4(r4) + " - control " + f4(c4) + " = " + f4(r4 - c4));
    const auto [r0, c0] = sel(0.0);
    verdict(std::abs(r0 - c0) <= 0.05, "selectivity at delta=0 within +-0.05",
            "accuracy " + f4(r0) + " - control " + f4(c0) + " = " + f4(r0 - c0));
}

void mdl() {
    const std::size_t N = 2000;
    const auto schedule = probes::default_mdl_schedule(N);
    {
        const auto run = planted(N, 64, 4.0, 91);
        auto y = run.label_bits();
        std::mt19937_64 rng(91);
        std::shuffle(y.begin(), y.end(), rng);
        const auto r = probes::mdl_codelength(run.layer_features(Role::sample, 1), y, {}, schedule, 0);
        verdict(std::abs(r.compression - 1.0) <= 0.1, "MDL compression on shuffled labels 1.0 +- 0.1",
                "compression " + f4(r.compression) + " (" + f4(r.codelength_bits) + " bits for " +
                    std::to_string(N) + " labels)");
    }
    {
        const auto run = planted(N, 64, 6.0, 92);
        const auto r = probes::mdl_codelength(run, Role::sample, 1, {}, schedule, 0);
        verdict(r.compression >= 3.0, "MDL compression at delta=6 >= 3", "compression " + f4(r.compression));
        const double want = std::ceil(schedule.front() * static_cast<double>(N));
        verdict(r.block_bits.front() == want && r.block_ends.front() == static_cast<std::size_t>(want),
                "MDL first-block cost equals ceil(schedule[0] * N) bits",
                f4(r.block_bits.front()) + " bits, expected " + f4(want));
    }
}

void kendall() {
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    bool ok = true;
    std::size_t tied_cases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 299;
        const std::uint64_t levels = trial % 2 == 0 ? 1 + rng() % 6 : 1u << 30;
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = static_cast<double>(rng() % levels);
            y[i] = static_cast<double>(rng() % (levels + 1));
        }
        tied_cases += levels < n;
        const auto want = oracle::kendall_tau_b(x, y);
        const auto got = analysis::kendall_tau(x, y);
        if (want.has_value() != got.has_value()) {
            ok = false;
            continue;
        }
        if (want) worst = std::max(worst, std::abs(*want - *got));
    }
    ok = ok && worst <= 1e-12;
    verdict(ok, "Kendall tau-b equals the O(n^2) oracle to 1e-12 (100 pairs, n <= 300)",
            "max |diff| " + std::to_string(worst) + ", " + std::to_string(tied_cases) + " cases with ties");
}

void agreement_statistics() {
    std::mt19937_64 rng(7);
    auto bits = [&](std::size_t n) {
        std::vector<int> v(n);
        for (int& b : v) b = static_cast<int>(rng() & 1U);
        return v;
    };
    bool ok = true;
    int cases = 0;
    for (int trial = 0; trial < 200; ++trial, ++cases) {
        const std::size_t N = 1 + rng() % 25, L = 1 + rng() % 6;
        std::vector<std::vector<int>> preds;
        for (std::size_t l = 0; l < L; ++l) preds.push_back(bits(N));
        const auto beh = bits(N), lab = bits(N);

        const auto got = analysis::alignment(preds, beh, lab);
        const auto want = oracle::alignment(preds, beh, lab);
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t c = 0; c < 4; ++c) ok = ok && got.proportions[l][c] == want.proportions[l][c];
        for (std::size_t c = 0; c < 4; ++c) ok = ok && got.run_lengths[c] == want.run_lengths[c];

        const auto m = analysis::cross_layer_agreement(preds);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t j = 0; j < L; ++j) ok = ok && m[i][j] == oracle::fraction_equal(preds[i], preds[j]);

        std::map<std::string, std::vector<int>> vars{{"a", bits(N)}, {"b", bits(N)}, {"c", bits(N)}};
        const auto ag = analysis::variation_agreement(vars);
        for (const auto& [key, value] : ag.pairwise)
            ok = ok && value == oracle::fraction_equal(vars.at(key.first), vars.at(key.second));
        std::size_t all = 0;
        for (std::size_t i = 0; i < N; ++i) all += vars["a"][i] == vars["b"][i] && vars["b"][i] == vars["c"][i];
        ok = ok && ag.all_agree == static_cast<double>(all) / static_cast<double>(N);
    }
    verdict(ok, "agreement, alignment and heatmap statistics equal enumeration oracles (N <= 25, L <= 6)",
            std::to_string(cases) + " randomized cases, exact equality");
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
    return out;
}

void determinism() {
    const auto cfg_json = nlohmann::json::parse(R"({
      "synth": {"runs": [
        {"name": "inst_first", "seed": 11, "profile": {"num_layers": 6, "hidden_dim": 16, "num_instances": 400,
          "variation": "instruction_first", "behavior_coupling": 0.7,
          "separation": {"sample": [0, 0.5, 1, 2, 2, 2], "output": [0, 0.5, 1, 2, 3, 4]}}},
        {"name": "samp_first", "seed": 12, "profile": {"num_layers": 6, "hidden_dim": 16, "num_instances": 400,
          "variation": "sample_first", "behavior_coupling": 0.5,
          "separation": {"sample": [0, 0.5, 1, 2, 2, 2], "output": [0, 0.5, 1, 1.5, 2, 2]}}},
        {"name": "full", "seed": 13, "intervention": "full", "profile": {"num_layers": 6, "hidden_dim": 16,
          "num_instances": 400, "behavior_coupling": 0.2,
          "separation": {"sample": [0, 0.5, 1, 1, 1, 1], "output": [0, 0.5, 0.5, 0.5, 0.5, 0.5]}}}
      ]},
      "probe": {"folds": 4, "seeds": [0, 1, 2, 3, 4], "control": true, "mdl": true, "workers": 2},
      "analysis": {
        "variation_groups": [{"name": "prompting", "runs": {"instruction_first": "inst_first", "sample_first": "samp_first"}}],
        "intervention_pairs": [{"name": "full", "baseline": "inst_first", "intervened": "full"}],
        "tau_groups": [{"name": "all", "runs": ["inst_first", "samp_first", "full"]}],
        "rescale_grid": 11
      }
    })");
    const auto base = fs::temp_directory_path() / "probelab_acceptance_determinism";
    fs::remove_all(base);
    std::vector<std::map<std::string, std::string>> trees;
    std::string hash;
    for (const char* leg : {"a", "b"}) {
        const auto cfg = pipeline::PipelineConfig::from_json(cfg_json);
        hash = cfg.hash;
        const auto out = base / leg;
        pipeline::cmd_synth(cfg, out);
        pipeline::cmd_probe(cfg, out);
        pipeline::cmd_report(cfg, out);
        trees.push_back(read_tree(out));
    }
    std::size_t tables = 0;
    for (const auto& [name, _] : trees[0]) tables += name.size() > 4 && name.substr(name.size() - 4) == ".tsv";
    const bool ok = trees[0] == trees[1] && tables > 0;
    verdict(ok, "determinism: synth -> probe -> report twice gives byte-identical outputs",
            std::to_string(trees[0].size()) + " files (" + std::to_string(tables) + " tables), config " + hash);
    fs::remove_all(base);
}

void sample_size() {
    const probes::ProbeConfig cfg;
    auto protocol = [&](std::size_t n, std::size_t d) {
        double sum = 0.0;
        for (std::uint64_t s = 0; s < 5; ++s) {
            const auto run = planted(n, d, 2.0, 5000 + s);
            sum += probes::cross_validate(run, Role::sample, 1, cfg, {}).mean;
        }
        return sum / 5.0;
    };
    const double small16 = protocol(200, 16), large16 = protocol(2000, 16);
    verdict(std::abs(small16 - large16) <= 0.04, "sample size: N=200 within +-0.04 of N=2000 (delta=2, d=16)",
            "N=200 " + f4(small16) + ", N=2000 " + f4(large16) + ", diff " + f4(small16 - large16));
    const double small64 = protocol(200, 64), large64 = protocol(2000, 64);
    info("sample size at d=64", "N=200 " + f4(small64) + ", N=2000 " + f4(large64) + ", diff " +
                                    f4(small64 - large64) + " (about 3 training points per dimension at N=200)");
}

void nonlinearity() {
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = true;
    std::string detail;
    for (double delta : kDeltas) {
        const auto run = planted(4000, 16, delta, 3100 + static_cast<std::uint64_t>(delta * 10));
        const probes::CvOptions cv{4, {0}};
        const double lin = probes::cross_validate(run, Role::sample, 1, {}, cv).mean;
        const double m1 = probes::cross_validate(run, Role::sample, 1,
                                                 probes::ProbeConfig::defaults(probes::ProbeKind::mlp1), cv).mean;
        const double m2 = probes::cross_validate(run, Role::sample, 1,
                                                 probes::ProbeConfig::defaults(probes::ProbeKind::mlp2), cv).mean;
        ok = ok && std::abs(m1 - lin) <= 0.03 && std::abs(m2 - lin) <= 0.03;
        detail += "d=" + f4(delta).substr(0, 3) + " lin " + f4(lin) + " mlp1 " + f4(m1) + " mlp2 " + f4(m2) + "; ";
    }
    verdict(ok, "non-linearity: mlp1/mlp2 within +-0.03 of linear at every delta (N=4000, d=16)", detail);
    info("non-linearity runtime", f4(seconds_since(t0)) + " s");
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<void()>>> checks{
        {"calibration", calibration}, {"selectivity", selectivity}, {"mdl", mdl},
        {"kendall", kendall},         {"agreement", agreement_statistics}, {"determinism", determinism},
        {"sample size", sample_size}, {"non-linearity", nonlinearity}};
    for (const auto& [name, fn] : checks) {
        try {
            fn();
        } catch (const std::exception& e) {
            verdict(false, name, std::string("threw: ") + e.what());
        }
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
