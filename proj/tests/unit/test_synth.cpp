#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "probelab/analysis.hpp"
#include "probelab/probes.hpp"
#include "probelab/synth.hpp"

using namespace probelab;
using namespace probelab::synth;

TEST_CASE("Bayes accuracy of the planted model") {
    CHECK(bayes_accuracy(0.0) == 0.5);
    CHECK(bayes_accuracy(60.0) == doctest::Approx(1.0));
    // Standard normal table: Phi(1) = 0.841345, Phi(0.25) = 0.598706.
    CHECK(bayes_accuracy(2.0) == doctest::Approx(0.8413447).epsilon(1e-6));
    CHECK(bayes_accuracy(0.5) == doctest::Approx(0.5987063).epsilon(1e-6));
    for (double d : {0.0, 0.5, 1.0, 2.0, 4.0, 6.0}) CHECK(bayes_accuracy(d) == oracle::bayes_phi_half(d));
    CHECK_THROWS_AS(bayes_accuracy(-1.0), ConfigError);
}

TEST_CASE("planted runs have the declared shape and are reproducible") {
    auto p = PlantProfile::constant(4, 8, 100, 2.0);
    p.behavior_coupling = 0.5;
    const auto a = generate_planted_run(p, 3);
    CHECK(a.manifest.num_layers == 4);
    CHECK(a.manifest.hidden_dim == 8);
    CHECK(a.manifest.num_instances() == 100);
    CHECK(a.manifest.behavior.size() == 100);
    CHECK(a.tensors.at(Role::output).size() == 4u * 100 * 8);
    CHECK(a == generate_planted_run(p, 3));
    CHECK_FALSE(a == generate_planted_run(p, 4));
    CHECK(std::count(a.manifest.labels.begin(), a.manifest.labels.end(), Label::acceptable) == 50);
}

TEST_CASE("empirical class separation matches the profile") {
    PlantProfile p;
    p.num_layers = 2;
    p.hidden_dim = 4;
    p.num_instances = 20000;
    p.separation[Role::sample] = {0.0, 3.0};
    const auto run = generate_planted_run(p, 1);
    for (std::size_t l = 0; l < 2; ++l) {
        const auto X = run.layer_features(Role::sample, l);
        Eigen::RowVectorXd mpos = Eigen::RowVectorXd::Zero(4), mneg = Eigen::RowVectorXd::Zero(4);
        for (Eigen::Index i = 0; i < X.rows(); ++i) (i % 2 == 0 ? mpos : mneg) += X.row(i);
        mpos /= 10000.0;
        mneg /= 10000.0;
        CHECK((mpos - mneg).norm() == doctest::Approx(p.separation[Role::sample][l]).epsilon(0.05).scale(1.0));
    }
}

TEST_CASE("probe accuracy tracks the Bayes rate") {
    for (double delta : {0.0, 1.0, 6.0}) {
        double sum = 0.0;
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto run = generate_planted_run(PlantProfile::constant(2, 16, 1000, delta, {Role::sample}), 50 + s);
            sum += probes::cross_validate(run, Role::sample, 1, {}, {4, {s}}).mean;
        }
        const double acc = sum / 10.0;
        if (delta == 0.0) CHECK(std::abs(acc - 0.5) <= 0.05);
        if (delta == 1.0) CHECK(std::abs(acc - bayes_accuracy(1.0)) <= 0.03);
        if (delta == 6.0) CHECK(acc >= 0.99);
    }
}

TEST_CASE("full behavior coupling follows the top output layer") {
    // Behavior follows the Bayes boundary, so the probe has to sit close to it:
    // enough instances per dimension that estimation error is small.
    auto p = PlantProfile::constant(3, 16, 20000, 4.0);
    p.behavior_coupling = 1.0;
    const auto run = generate_planted_run(p, 2);
    const auto st = probes::cross_validate(run, Role::output, 2, {}, {4, {0}});
    std::vector<double> probe_ok, beh_ok;
    for (std::size_t i = 0; i < 20000; ++i) {
        probe_ok.push_back(st.predictions[i] == label_bit(run.manifest.labels[i]) ? 1.0 : 0.0);
        beh_ok.push_back(run.manifest.behavior[i].em_correct ? 1.0 : 0.0);
    }
    CHECK(*analysis::kendall_tau(probe_ok, beh_ok) >= 0.9);
}

TEST_CASE("output probes track behavior across runs, sample probes do not") {
    std::vector<double> out_acc, sample_acc, beh_acc;
    std::uint64_t seed = 30;
    for (double delta : {0.5, 1.0, 1.5, 2.0, 3.0, 4.0}) {
        auto p = PlantProfile::constant(2, 8, 2000, 2.0);
        p.separation[Role::output] = {0.0, delta};
        p.behavior_coupling = 1.0;
        const auto run = generate_planted_run(p, seed++);
        out_acc.push_back(probes::cross_validate(run, Role::output, 1, {}, {4, {0}}).mean);
        sample_acc.push_back(probes::cross_validate(run, Role::sample, 1, {}, {4, {0}}).mean);
        beh_acc.push_back(analysis::behavior_accuracy(run.manifest));
    }
    const double tau_out = *analysis::kendall_tau(out_acc, beh_acc);
    const double tau_sample = *analysis::kendall_tau(sample_acc, beh_acc);
    CHECK(tau_out == 1.0);
    CHECK(tau_out > tau_sample);
}

TEST_CASE("profile JSON") {
    const auto j = nlohmann::json::parse(R"({"num_layers": 3, "hidden_dim": 4, "num_instances": 10,
        "separation": {"sample": 1.5, "output": [0, 1, 2]}, "behavior_coupling": 0.25})");
    const auto p = profile_from_json(j);
    CHECK(p.separation.at(Role::sample) == std::vector<double>{1.5, 1.5, 1.5});
    CHECK(p.separation.at(Role::output) == std::vector<double>{0, 1, 2});
    const auto q = profile_from_json(nlohmann::json::parse(to_json(p).dump()));
    CHECK(q.separation == p.separation);
    CHECK(q.behavior_coupling == 0.25);
    CHECK_THROWS_AS(profile_from_json(nlohmann::json::parse(R"({"num_layers": 3, "hidden_dim": 4,
        "num_instances": 11, "separation": {"sample": 1}})")), ConfigError);
    CHECK_THROWS_AS(profile_from_json(nlohmann::json::parse(R"({"num_layers": 3, "hidden_dim": 4,
        "num_instances": 10, "separation": {"middle": 1}})")), ConfigError);
}
