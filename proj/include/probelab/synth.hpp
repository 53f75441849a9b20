#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <vector>

#include <json.hpp>

#include "probelab/actstore.hpp"

namespace probelab::synth {

/// Generative profile for a planted run. `separation[role][layer]` is the
/// distance between the two class means in within-class standard deviations.
struct PlantProfile {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 8;
    std::size_t num_instances = 200;
    std::map<Role, std::vector<double>> separation;
    double behavior_coupling = 0.0;
    TaskKind task = TaskKind::blimp;
    Variation variation = Variation::instruction_first;
    std::string model_id = "synthetic";

    void validate() const;

    /// Same separation at every layer for every listed role.
    static PlantProfile constant(std::size_t layers, std::size_t dim, std::size_t n,
                                 double delta, std::vector<Role> roles = {Role::sample, Role::output});
};

/// Spherical unit-variance Gaussians with class means at -+delta/2 along a
/// seeded random unit direction per (layer, role). Labels alternate within
/// sibling pairs. Behavior: with probability `behavior_coupling` the
/// instance's em_correct equals the correctness of the Bayes decision on
/// the top-layer output features; otherwise a fair coin.
actstore::ActivationRun generate_planted_run(const PlantProfile& profile, std::uint64_t seed);

/// Phi(delta / 2): the optimal accuracy for the planted generative model.
double bayes_accuracy(double delta);

PlantProfile profile_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PlantProfile& p);

}  // namespace probelab::synth
