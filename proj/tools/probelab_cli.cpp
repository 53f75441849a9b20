// probelab: config-driven front end for corpus building, synthetic runs,
// probing and reporting.
//
//   probelab build-corpus -c pipeline.json
//   probelab synth        -c pipeline.json [-o out]
//   probelab probe        -c pipeline.json [-o out] [--seeds 0,1,2]
//   probelab report       -c pipeline.json [-o out]
//   probelab validate    [-c pipeline.json] [files...]
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 internal error.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "probelab/pipeline.hpp"

namespace pl = probelab::pipeline;

namespace {

int fail(int code, const char* kind, const std::exception& e) {
    std::cerr << "probelab: " << kind << ": " << e.what() << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"probing and intervention analysis engine"};
    app.require_subcommand(1);

    std::string config_path;
    std::string output_dir;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> files;

    auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* opt = sub->add_option("-c,--config", config_path, "pipeline configuration (JSON)");
        if (config_required) opt->required();
        sub->add_option("-o,--output-dir", output_dir, "output directory (overrides the config)");
    };
    auto* build = app.add_subcommand("build-corpus", "render prompt corpora from raw task files");
    auto* synth = app.add_subcommand("synth", "write planted-signal activation runs");
    auto* probe = app.add_subcommand("probe", "cross-validate probes over every (layer, role)");
    auto* report = app.add_subcommand("report", "write analysis tables and plots");
    auto* validate = app.add_subcommand("validate", "check a config, run files or corpus files");
    for (auto* sub : {build, synth, probe, report}) add_common(sub, true);
    add_common(validate, false);
    probe->add_option("--seeds", seeds, "probe seeds (overrides the config)")->delimiter(',');
    validate->add_option("files", files, ".actrun or corpus .jsonl files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        std::optional<pl::PipelineConfig> cfg;
        if (!config_path.empty()) cfg = pl::PipelineConfig::load(config_path);
        if (cfg && !seeds.empty()) cfg->override_seeds(seeds);
        const std::optional<pl::fs::path> flag =
            output_dir.empty() ? std::nullopt : std::optional<pl::fs::path>(output_dir);

        if (validate->parsed()) {
            if (!cfg && files.empty()) throw probelab::ConfigError("validate needs --config or files");
            const auto out = cfg ? pl::resolve_output_dir(*cfg, flag) : pl::fs::path{};
            for (const auto& line : pl::cmd_validate(cfg ? &*cfg : nullptr,
                                                     {files.begin(), files.end()}, out))
                std::cout << line << "\n";
            return 0;
        }

        const auto out = pl::resolve_output_dir(*cfg, flag);
        std::vector<pl::fs::path> written;
        if (build->parsed()) written = pl::cmd_build_corpus(*cfg, out);
        if (synth->parsed()) written = pl::cmd_synth(*cfg, out);
        if (probe->parsed()) written = pl::cmd_probe(*cfg, out);
        if (report->parsed()) written = pl::cmd_report(*cfg, out);
        for (const auto& p : written) std::cout << p.string() << "\n";
        std::cerr << "config_hash=" << cfg->hash << "\n";
        return 0;
    } catch (const probelab::ConfigError& e) {
        return fail(2, "configuration error", e);
    } catch (const probelab::DataError& e) {
        return fail(3, "data error", e);
    } catch (const probelab::InvariantError& e) {
        return fail(4, "internal error", e);
    } catch (const std::filesystem::filesystem_error& e) {
        return fail(3, "data error", e);
    } catch (const std::exception& e) {
        return fail(4, "internal error", e);
    }
}
