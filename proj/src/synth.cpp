#include "probelab/synth.hpp"

#include <cmath>
#include <cstdio>
#include <random>

namespace probelab::synth {

namespace {

std::uint64_t role_tag(Role r) { return r == Role::sample ? 0x73616dULL : 0x6f7574ULL; }

}  // namespace

void PlantProfile::validate() const {
    if (num_layers < 2) throw ConfigError("synth profile: num_layers must be at least 2");
    if (hidden_dim < 1) throw ConfigError("synth profile: hidden_dim must be at least 1");
    if (num_instances < 2 || num_instances % 2 != 0)
        throw ConfigError("synth profile: num_instances must be even and at least 2");
    if (separation.empty()) throw ConfigError("synth profile: no roles");
    for (const auto& [role, seps] : separation) {
        if (seps.size() != num_layers)
            throw ConfigError("synth profile: separation for role '" + std::string(to_string(role)) +
                              "' must list one value per layer");
        for (double s : seps) {
            if (!(s >= 0.0) || !std::isfinite(s))
                throw ConfigError("synth profile: separations must be finite and non-negative");
        }
    }
    if (!(behavior_coupling >= 0.0 && behavior_coupling <= 1.0))
        throw ConfigError("synth profile: behavior_coupling must lie in [0, 1]");
}

PlantProfile PlantProfile::constant(std::size_t layers, std::size_t dim, std::size_t n, double delta,
                                    std::vector<Role> roles) {
    PlantProfile p;
    p.num_layers = layers;
    p.hidden_dim = dim;
    p.num_instances = n;
    for (Role r : roles) p.separation[r] = std::vector<double>(layers, delta);
    return p;
}

double bayes_accuracy(double delta) {
    if (delta < 0) throw ConfigError("bayes_accuracy: delta must be non-negative");
    // Phi(x) = erfc(-x / sqrt(2)) / 2
    return 0.5 * std::erfc(-(delta / 2.0) / std::sqrt(2.0));
}

actstore::ActivationRun generate_planted_run(const PlantProfile& profile, std::uint64_t seed) {
    profile.validate();
    const std::size_t L = profile.num_layers, N = profile.num_instances, d = profile.hidden_dim;

    actstore::ActivationRun run;
    auto& m = run.manifest;
    m.model_id = profile.model_id;
    m.task = profile.task;
    m.variation = profile.variation;
    m.num_layers = L;
    m.hidden_dim = d;
    for (const auto& [role, _] : profile.separation) m.roles.push_back(role);
    m.notes = {{"generator", "planted"}, {"seed", seed}};
    for (std::size_t i = 0; i < N; ++i) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "synth-%05zu/%s", i / 2, i % 2 == 0 ? "acc" : "unacc");
        m.instance_ids.emplace_back(buf);
        m.labels.push_back(i % 2 == 0 ? Label::acceptable : Label::unacceptable);
    }

    // Signed projection of each instance onto the top output direction,
    // oriented so that positive means "acceptable".
    std::vector<double> top_output_score;

    for (const auto& [role, seps] : profile.separation) {
        std::vector<float> t(L * N * d);
        for (std::size_t l = 0; l < L; ++l) {
            std::normal_distribution<double> gauss(0.0, 1.0);
            std::mt19937_64 dir_rng(mix_seed(seed, role_tag(role), 2 * l));
            std::vector<double> u(d);
            double norm = 0.0;
            while (norm == 0.0) {
                for (double& x : u) x = gauss(dir_rng);
                norm = 0.0;
                for (double x : u) norm += x * x;
                norm = std::sqrt(norm);
            }
            for (double& x : u) x /= norm;

            std::mt19937_64 rng(mix_seed(seed, role_tag(role), 2 * l + 1));
            gauss.reset();
            const double half = seps[l] / 2.0;
            const bool top_output = role == Role::output && l + 1 == L;
            if (top_output) top_output_score.assign(N, 0.0);
            for (std::size_t i = 0; i < N; ++i) {
                const double sign = m.labels[i] == Label::acceptable ? 1.0 : -1.0;
                float* row = t.data() + (l * N + i) * d;
                double proj = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    const double v = sign * half * u[k] + gauss(rng);
                    row[k] = static_cast<float>(v);
                    proj += static_cast<double>(row[k]) * u[k];
                }
                if (top_output) top_output_score[i] = proj;
            }
        }
        run.tensors.emplace(role, std::move(t));
    }

    std::mt19937_64 brng(mix_seed(seed, "behavior"));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t i = 0; i < N; ++i) {
        const bool truth = m.labels[i] == Label::acceptable;
        bool correct;
        const double follow = unif(brng);
        const double coin = unif(brng);
        if (!top_output_score.empty() && follow < profile.behavior_coupling) {
            const bool says_acceptable = top_output_score[i] >= 0.0;
            correct = says_acceptable == truth;
        } else {
            correct = coin < 0.5;
        }
        const bool answer = correct ? truth : !truth;
        actstore::BehaviorRecord b;
        b.generated_text = answer ? "yes" : "no";
        b.em_correct = correct;
        b.predicted_label = answer ? Label::acceptable : Label::unacceptable;
        m.behavior.push_back(std::move(b));
    }
    return run;
}

PlantProfile profile_from_json(const nlohmann::json& j) {
    try {
        PlantProfile p;
        p.num_layers = j.at("num_layers").get<std::size_t>();
        p.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        p.num_instances = j.at("num_instances").get<std::size_t>();
        p.behavior_coupling = j.value("behavior_coupling", 0.0);
        p.model_id = j.value("model_id", std::string("synthetic"));
        if (j.contains("task")) {
            auto t = parse_task(j.at("task").get<std::string>());
            if (!t) throw ConfigError("synth profile: unknown task " + j.at("task").dump());
            p.task = *t;
        }
        if (j.contains("variation")) {
            auto v = parse_variation(j.at("variation").get<std::string>());
            if (!v) throw ConfigError("synth profile: unknown variation " + j.at("variation").dump());
            p.variation = *v;
        }
        for (const auto& [name, value] : j.at("separation").items()) {
            auto role = parse_role(name);
            if (!role) throw ConfigError("synth profile: unknown role '" + name + "'");
            if (value.is_number()) {
                p.separation[*role] = std::vector<double>(p.num_layers, value.get<double>());
            } else {
                p.separation[*role] = value.get<std::vector<double>>();
            }
        }
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth profile: ") + e.what());
    }
}

nlohmann::ordered_json to_json(const PlantProfile& p) {
    nlohmann::ordered_json j;
    j["num_layers"] = p.num_layers;
    j["hidden_dim"] = p.hidden_dim;
    j["num_instances"] = p.num_instances;
    j["behavior_coupling"] = p.behavior_coupling;
    j["model_id"] = p.model_id;
    j["task"] = to_string(p.task);
    j["variation"] = to_string(p.variation);
    nlohmann::ordered_json sep;
    for (const auto& [role, s] : p.separation) sep[std::string(to_string(role))] = s;
    j["separation"] = sep;
    return j;
}

}  // namespace probelab::synth
