#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "probelab/analysis.hpp"

using namespace probelab;
using namespace probelab::analysis;

namespace {

probes::ProbeStats stat(std::size_t layer, double mean, Role role = Role::sample) {
    probes::ProbeStats s;
    s.layer = layer;
    s.role = role;
    s.mean = mean;
    return s;
}

std::vector<int> random_bits(std::mt19937_64& rng, std::size_t n) {
    std::vector<int> v(n);
    for (int& x : v) x = static_cast<int>(rng() & 1U);
    return v;
}

}  // namespace

TEST_CASE("exact match normalizes case, whitespace and trailing punctuation") {
    EmTally t;
    CHECK(behavior_em("Yes.", "yes", &t));
    CHECK(behavior_em("  YES!\n", "yes", &t));
    CHECK(behavior_em("yes, because", "yes", &t));
    CHECK_FALSE(behavior_em("no", "yes", &t));
    CHECK(t.malformed == 0);
    CHECK_FALSE(behavior_em("", "yes", &t));
    CHECK(t.malformed == 1);
    CHECK(t.scored == 5);
    CHECK(t.correct == 3);
}

TEST_CASE("layer curves: mean and max-deviation spread") {
    SUBCASE("identical variations have zero spread") {
        std::map<std::string, std::vector<probes::ProbeStats>> m{
            {"a", {stat(0, 0.7), stat(1, 0.8)}}, {"b", {stat(0, 0.7), stat(1, 0.8)}}};
        const auto c = layer_curves(m);
        CHECK(c.spread_pp == std::vector<double>{0.0, 0.0});
    }
    SUBCASE("two variations") {
        std::map<std::string, std::vector<probes::ProbeStats>> m{{"a", {stat(0, 0.60)}}, {"b", {stat(0, 0.64)}}};
        const auto c = layer_curves(m);
        CHECK(c.mean[0] == doctest::Approx(0.62));
        CHECK(round_pp(c.spread_pp[0]) == doctest::Approx(2.0));
    }
    SUBCASE("three variations use the maximum deviation, not half the range") {
        std::map<std::string, std::vector<probes::ProbeStats>> m{
            {"a", {stat(0, 0.60)}}, {"b", {stat(0, 0.62)}}, {"c", {stat(0, 0.67)}}};
        const auto c = layer_curves(m);
        CHECK(round_pp(c.spread_pp[0]) == doctest::Approx(4.0));
    }
    SUBCASE("mismatched layer counts are rejected") {
        std::map<std::string, std::vector<probes::ProbeStats>> m{{"a", {stat(0, 0.6)}},
                                                                 {"b", {stat(0, 0.6), stat(1, 0.6)}}};
        CHECK_THROWS_AS(layer_curves(m), DataError);
    }
}

TEST_CASE("kendall tau-b") {
    std::vector<double> a{1, 2, 3, 4, 5};
    std::vector<double> r{5, 4, 3, 2, 1};
    CHECK(*kendall_tau(a, a) == doctest::Approx(1.0));
    CHECK(*kendall_tau(a, r) == doctest::Approx(-1.0));
    std::vector<double> c{2, 2, 2, 2, 2};
    CHECK_FALSE(kendall_tau(a, c).has_value());
    std::vector<double> short_v{1, 2};
    CHECK_THROWS(kendall_tau(a, short_v));
    std::vector<double> with_nan{1, 2, std::nan(""), 4, 5};
    CHECK_THROWS(kendall_tau(a, with_nan));

    SUBCASE("hand-worked tie case") {
        // x = (1,1,2,3), y = (1,2,2,3): C=4, D=0, ties x=1, ties y=1, n0=6.
        std::vector<double> x{1, 1, 2, 3}, y{1, 2, 2, 3};
        CHECK(*kendall_tau(x, y) == doctest::Approx(4.0 / 5.0).epsilon(1e-15));
    }
    SUBCASE("matches the pairwise oracle on 200 random pairs") {
        std::mt19937_64 rng(11);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 2 + rng() % 299;
            const int levels = trial % 3 == 0 ? 4 : 1000000;
            std::vector<double> x(n), y(n);
            for (std::size_t i = 0; i < n; ++i) {
                x[i] = static_cast<double>(rng() % levels);
                y[i] = static_cast<double>(rng() % levels);
            }
            const auto want = oracle::kendall_tau_b(x, y);
            const auto got = kendall_tau(x, y);
            REQUIRE(want.has_value() == got.has_value());
            if (want) CHECK(std::abs(*want - *got) <= 1e-12);
        }
    }
}

TEST_CASE("variation agreement") {
    std::vector<int> p{1, 0, 1, 1, 0};
    std::vector<int> q{0, 1, 0, 0, 1};
    SUBCASE("identical predictions agree everywhere") {
        const auto ag = variation_agreement({{"a", p}, {"b", p}, {"c", p}});
        for (const auto& [_, v] : ag.pairwise) CHECK(v == 1.0);
        CHECK(ag.all_agree == 1.0);
    }
    SUBCASE("complementary predictions never agree") {
        const auto ag = variation_agreement({{"a", p}, {"b", q}});
        CHECK(ag.pairwise.at({"a", "b"}) == 0.0);
        CHECK(ag.all_agree == 0.0);
    }
    SUBCASE("random three-way case matches a direct recount") {
        std::mt19937_64 rng(5);
        const auto a = random_bits(rng, 300), b = random_bits(rng, 300), c = random_bits(rng, 300);
        const auto ag = variation_agreement({{"a", a}, {"b", b}, {"c", c}});
        CHECK(ag.pairwise.at({"a", "b"}) == oracle::fraction_equal(a, b));
        CHECK(ag.pairwise.at({"a", "c"}) == oracle::fraction_equal(a, c));
        CHECK(ag.pairwise.at({"b", "c"}) == oracle::fraction_equal(b, c));
        std::size_t all = 0;
        for (std::size_t i = 0; i < 300; ++i) all += a[i] == b[i] && b[i] == c[i];
        CHECK(ag.all_agree == static_cast<double>(all) / 300.0);
    }
}

TEST_CASE("alignment categories and run lengths") {
    const std::size_t L = 4, N = 3;
    std::vector<int> labels{1, 0, 1};
    SUBCASE("probe and behavior always correct") {
        std::vector<std::vector<int>> preds(L, labels);
        const auto a = alignment(preds, std::vector<int>(N, 1), labels);
        for (const auto& row : a.proportions) CHECK(row[0] == 1.0);
        CHECK(a.run_lengths[0][L] == N);
        for (std::size_t k = 1; k < L; ++k) CHECK(a.run_lengths[0][k] == 0);
    }
    SUBCASE("probe correct, behavior wrong") {
        std::vector<std::vector<int>> preds(L, labels);
        const auto a = alignment(preds, std::vector<int>(N, 0), labels);
        for (const auto& row : a.proportions)
            CHECK(row[static_cast<std::size_t>(AlignmentCategory::probe_correct_only)] == 1.0);
    }
    SUBCASE("randomized N=20, L=5 against enumeration") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<std::vector<int>> preds;
            for (int l = 0; l < 5; ++l) preds.push_back(random_bits(rng, 20));
            const auto beh = random_bits(rng, 20), lab = random_bits(rng, 20);
            const auto got = alignment(preds, beh, lab);
            const auto want = oracle::alignment(preds, beh, lab);
            for (std::size_t l = 0; l < 5; ++l)
                for (std::size_t c = 0; c < 4; ++c)
                    CHECK(got.proportions[l][c] == want.proportions[l][c]);
            for (std::size_t c = 0; c < 4; ++c) CHECK(got.run_lengths[c] == want.run_lengths[c]);
        }
    }
}

TEST_CASE("probe/behavior answer agreement counts unparsed answers as disagreement") {
    std::vector<std::vector<int>> preds{{1, 0, 1}};
    std::vector<std::optional<Label>> beh{Label::acceptable, std::nullopt, Label::unacceptable};
    CHECK(probe_behavior_alignment(preds, beh)[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("cross-layer agreement") {
    std::mt19937_64 rng(9);
    std::vector<std::vector<int>> preds;
    for (int l = 0; l < 5; ++l) preds.push_back(random_bits(rng, 25));
    preds.push_back(preds[1]);
    const auto m = cross_layer_agreement(preds);
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(m[i][i] == 1.0);
        for (std::size_t j = 0; j < m.size(); ++j) {
            CHECK(m[i][j] == m[j][i]);
            CHECK(m[i][j] == oracle::fraction_equal(preds[i], preds[j]));
        }
    }
    CHECK(m[1][5] == 1.0);
}

TEST_CASE("layer thirds") {
    const auto t = layer_thirds(9);
    CHECK(t.lower_end == 3);
    CHECK(t.middle_end == 6);
    const auto u = layer_thirds(10);
    CHECK(u.lower_end == 3);
    CHECK(u.middle_end == 6);  // remainder joins the upper third
}

TEST_CASE("intervention delta") {
    actstore::RunManifest base;
    base.task = TaskKind::blimp;
    base.num_layers = 3;
    base.hidden_dim = 4;
    for (int i = 0; i < 50; ++i) {
        base.instance_ids.push_back("p" + std::to_string(i) + "/acc");
        base.labels.push_back(Label::acceptable);
        base.behavior.push_back({"yes", i < 33, Label::acceptable});  // EM 0.66
    }
    std::vector<probes::ProbeStats> curve{stat(0, 0.6), stat(1, 0.7), stat(2, 0.8)};
    RunWithStats b{&base, {{Role::sample, curve}}};

    SUBCASE("identical runs give zero deltas") {
        const auto d = intervention_delta(b, b);
        CHECK(d.behavior_pp == 0.0);
        for (double x : d.third_pp.at(Role::sample)) CHECK(x == 0.0);
    }
    SUBCASE("EM 0.66 to 0.08 is -58.0 pp") {
        actstore::RunManifest other = base;
        for (int i = 0; i < 50; ++i) other.behavior[static_cast<std::size_t>(i)].em_correct = i < 4;
        std::vector<probes::ProbeStats> lower{stat(0, 0.5), stat(1, 0.7), stat(2, 0.9)};
        RunWithStats o{&other, {{Role::sample, lower}}};
        const auto d = intervention_delta(b, o);
        CHECK(round_pp(d.behavior_pp) == doctest::Approx(-58.0));
        CHECK(d.third_pp.at(Role::sample)[0] == doctest::Approx(-10.0));
        CHECK(d.third_pp.at(Role::sample)[1] == doctest::Approx(0.0));
        CHECK(d.third_pp.at(Role::sample)[2] == doctest::Approx(10.0));
    }
    SUBCASE("different hidden size is incompatible") {
        actstore::RunManifest other = base;
        other.hidden_dim = 8;
        RunWithStats o{&other, {{Role::sample, curve}}};
        CHECK_THROWS_AS(intervention_delta(b, o), DataError);
    }
}

TEST_CASE("relative depth rescaling") {
    std::vector<double> curve{0.5, 0.7, 0.6, 0.9};
    SUBCASE("four layers sit at 0, 1/3, 2/3, 1") {
        CHECK(sample_relative(curve, 0.0) == 0.5);
        CHECK(sample_relative(curve, 1.0 / 3.0) == doctest::Approx(0.7).epsilon(1e-14));
        CHECK(sample_relative(curve, 2.0 / 3.0) == doctest::Approx(0.6).epsilon(1e-14));
        CHECK(sample_relative(curve, 1.0) == 0.9);
    }
    SUBCASE("constant stays constant") {
        std::vector<double> flat(7, 0.42);
        for (double v : relative_rescale(flat, 13)) CHECK(v == doctest::Approx(0.42).epsilon(1e-15));
    }
    SUBCASE("grid through the knots reproduces native values") {
        const auto r = relative_rescale(curve, 4);
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r[i] - curve[i]) <= 1e-12);
        const auto fine = relative_rescale(curve, 10);  // knots at 0, 3, 6, 9
        for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(fine[3 * i] - curve[i]) <= 1e-12);
    }
    SUBCASE("out of range depth") {
        CHECK_THROWS_AS(sample_relative(curve, 1.5), DataError);
    }
}
