#include <doctest.h>

#include "probelab/common.hpp"

using namespace probelab;

TEST_CASE("enum names round-trip") {
    for (auto t : {TaskKind::blimp, TaskKind::stereoset, TaskKind::olmpics, TaskKind::ewok, TaskKind::tom})
        CHECK(parse_task(to_string(t)) == t);
    for (auto v : {Variation::instruction_first, Variation::sample_first, Variation::no_instruction_fewshot})
        CHECK(parse_variation(to_string(v)) == v);
    for (auto s : {Sanity::none, Sanity::unrelated_instruction, Sanity::label_flip, Sanity::random_label_flip,
                   Sanity::abstract_labels, Sanity::random_word_labels})
        CHECK(parse_sanity(to_string(s)) == s);
    for (auto i : {Intervention::none, Intervention::full, Intervention::prompt_only})
        CHECK(parse_intervention(to_string(i)) == i);
    CHECK(parse_role("sample") == Role::sample);
    CHECK(parse_role("output") == Role::output);
    CHECK_FALSE(parse_task("squad").has_value());
    CHECK_FALSE(parse_role("").has_value());
}

TEST_CASE("fnv1a64 matches published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("mix_seed separates tags and seeds") {
    CHECK(mix_seed(1, "a") == mix_seed(1, "a"));
    CHECK(mix_seed(1, "a") != mix_seed(1, "b"));
    CHECK(mix_seed(1, "a") != mix_seed(2, "a"));
    CHECK(mix_seed(3, 1, 2) != mix_seed(3, 2, 1));
}

TEST_CASE("sibling key strips the last path component") {
    CHECK(sibling_key("blimp-00001/acc") == "blimp-00001");
    CHECK(sibling_key("a/b/unacc") == "a/b");
    CHECK(sibling_key("loner") == "loner");
}

TEST_CASE("hex64 is fixed width") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
}
