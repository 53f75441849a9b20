#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "probelab/actstore.hpp"

using namespace probelab;
using namespace probelab::actstore;
namespace fs = std::filesystem;

namespace {

ActivationRun small_run(std::size_t L = 3, std::size_t N = 4, std::size_t d = 2) {
    ActivationRun run;
    auto& m = run.manifest;
    m.model_id = "tiny";
    m.num_layers = L;
    m.hidden_dim = d;
    m.roles = {Role::sample, Role::output};
    for (std::size_t i = 0; i < N; ++i) {
        m.instance_ids.push_back("p" + std::to_string(i / 2) + (i % 2 ? "/unacc" : "/acc"));
        m.labels.push_back(i % 2 ? Label::unacceptable : Label::acceptable);
        m.behavior.push_back({i % 2 ? "no" : "Yes.", true, i % 2 ? Label::unacceptable : Label::acceptable});
    }
    m.behavior[1].predicted_label.reset();
    m.notes = {{"k", 1}};
    for (Role r : m.roles) {
        std::vector<float> t(L * N * d);
        for (std::size_t x = 0; x < t.size(); ++x) t[x] = static_cast<float>(x) * 0.25f - (r == Role::output ? 3.f : 0.f);
        run.tensors[r] = t;
    }
    return run;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / ("probelab_" + name); }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << s;
}

}  // namespace

TEST_CASE("write then read returns the same run") {
    const auto run = small_run();
    const auto p = tmp("rt.actrun");
    write_run(run, p);
    CHECK(read_run(p) == run);
    CHECK(read_manifest(p) == run.manifest);
    fs::remove(p);
}

TEST_CASE("tensor block size is L*N*d*4 per role") {
    const auto run = small_run(5, 6, 3);
    const auto p = tmp("size.actrun");
    write_run(run, p);
    const std::string bytes = slurp(p);
    std::uint64_t mlen = 0;
    for (int b = 0; b < 8; ++b) mlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + b])) << (8 * b);
    CHECK(bytes.size() - 24 - mlen == 2u * 5 * 6 * 3 * 4);
    fs::remove(p);
}

TEST_CASE("layer features and vector access") {
    const auto run = small_run();
    const auto X = run.layer_features(Role::output, 2);
    CHECK(X.rows() == 4);
    CHECK(X.cols() == 2);
    CHECK(X(1, 1) == doctest::Approx(((2 * 4 + 1) * 2 + 1) * 0.25 - 3.0));
    CHECK(run.vector_at(Role::sample, 1, 3)[0] == doctest::Approx((1 * 4 + 3) * 2 * 0.25));
    CHECK_THROWS_AS(run.layer_features(Role::output, 3), DataError);
    auto only_sample = small_run();
    only_sample.manifest.roles = {Role::sample};
    only_sample.tensors.erase(Role::output);
    CHECK_THROWS_AS(only_sample.layer_features(Role::output, 0), DataError);
}

TEST_CASE("non-finite values are rejected with coordinates") {
    auto run = small_run();
    run.tensors[Role::output][(1 * 4 + 2) * 2 + 1] = std::numeric_limits<float>::quiet_NaN();
    try {
        validate(run);
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("'output'") != std::string::npos);
        CHECK(msg.find("layer 1, instance 2, dim 1") != std::string::npos);
    }
    CHECK_THROWS_AS(write_run(run, tmp("nan.actrun")), DataError);
}

TEST_CASE("corrupt files") {
    const auto run = small_run();
    const auto p = tmp("bad.actrun");
    write_run(run, p);
    const std::string good = slurp(p);

    SUBCASE("truncated tensor block names both byte counts") {
        spit(p, good.substr(0, good.size() - 10));
        try {
            read_run(p);
            FAIL("expected a DataError");
        } catch (const DataError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("expected " + std::to_string(2 * 3 * 4 * 2 * 4)) != std::string::npos);
            CHECK(msg.find("found " + std::to_string(2 * 3 * 4 * 2 * 4 - 10)) != std::string::npos);
        }
    }
    SUBCASE("unknown version") {
        std::string b = good;
        b[4] = 9;
        spit(p, b);
        CHECK_THROWS_WITH_AS(read_run(p), doctest::Contains("unsupported format_version 9"), DataError);
    }
    SUBCASE("flipped tensor bit fails the checksum") {
        std::string b = good;
        b[b.size() - 3] ^= 0x01;
        spit(p, b);
        CHECK_THROWS_WITH_AS(read_run(p), doctest::Contains("checksum"), DataError);
    }
    SUBCASE("trailing garbage") {
        spit(p, good + "xx");
        CHECK_THROWS_WITH_AS(read_run(p), doctest::Contains("trailing"), DataError);
    }
    SUBCASE("bad magic and short header") {
        std::string b = good;
        b[0] = 'X';
        spit(p, b);
        CHECK_THROWS_AS(read_run(p), DataError);
        spit(p, good.substr(0, 10));
        CHECK_THROWS_AS(read_run(p), DataError);
    }
    fs::remove(p);
}

TEST_CASE("run pairing") {
    const auto a = small_run();
    CHECK(validate_pair(a, a).compatible);
    CHECK_FALSE(validate_pair(a, a).needs_reorder);

    SUBCASE("different instance order is compatible after reordering") {
        const std::vector<std::size_t> perm{2, 0, 3, 1};
        const auto b = reorder(a, perm);
        const auto rep = validate_pair(a, b);
        REQUIRE(rep.compatible);
        CHECK(rep.needs_reorder);
        const auto back = reorder(b, rep.permutation);
        CHECK(back == a);
    }
    SUBCASE("different hidden size is incompatible") {
        const auto b = small_run(3, 4, 3);
        const auto rep = validate_pair(a, b);
        CHECK_FALSE(rep.compatible);
        CHECK_FALSE(rep.problems.empty());
    }
}

TEST_CASE("reference file written by the extractor-side writer") {
    const fs::path p = fs::path(PROBELAB_FIXTURE_DIR) / "extractor_n200_l25_d64.actrun";
    const auto run = read_run(p);
    const auto& m = run.manifest;
    CHECK(m.num_layers == 25);
    CHECK(m.hidden_dim == 64);
    CHECK(m.num_instances() == 200);
    REQUIRE(m.roles == std::vector<Role>{Role::sample, Role::output});
    CHECK(m.instance_ids[3] == "blimp-00001/unacc");
    CHECK(m.labels[3] == Label::unacceptable);
    CHECK(m.behavior[3].generated_text == "no");
    CHECK(m.behavior[3].em_correct);
    CHECK(m.notes.at("output_states") == "reencode");

    std::size_t mismatches = 0;
    for (int r = 0; r < 2; ++r) {
        const Role role = m.roles[static_cast<std::size_t>(r)];
        for (std::size_t l = 0; l < 25; ++l)
            for (std::size_t n = 0; n < 200; ++n) {
                const auto v = run.vector_at(role, l, n);
                for (std::size_t k = 0; k < 64; ++k) {
                    const float want = static_cast<float>(((l * 31 + n * 17 + k * 7 + r * 13) % 1000) / 8.0 - 60.0);
                    mismatches += v[k] != want;
                }
            }
    }
    CHECK(mismatches == 0);

    // Our own writer reproduces an equal run.
    const auto copy = tmp("fixture_copy.actrun");
    write_run(run, copy);
    CHECK(read_run(copy) == run);
    fs::remove(copy);
}
