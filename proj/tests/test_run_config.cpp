#include <doctest.h>

#include "d2prune/errors.hpp"
#include "d2prune/run.hpp"
#include "d2prune/run_config.hpp"

using namespace d2p;

TEST_CASE("defaults") {
    RunConfig c;
    CHECK(c.get_u64("seed") == 7);
    CHECK(c.get_count("calib.samples") == 128);
    CHECK(c.get("prune.method") == "d2prune");
    CHECK(c.get("prune.qkv") == "dynamic");
    CHECK(c.get_real("dual.s") == 1500.0);
    CHECK(c.get_real("prune.damping") == 0.01);
    CHECK(c.get_bool("search.reference_rows"));
    CHECK(c.get("output.dir") == "d2prune-out");
}

TEST_CASE("merge text with comments") {
    RunConfig c;
    c.merge_text("# a comment\n\nprune.method = wanda   # trailing\n  calib.samples=16\nprune.pattern = 2:4\n");
    CHECK(c.get("prune.method") == "wanda");
    CHECK(c.get_count("calib.samples") == 16);
    CHECK(c.get("prune.pattern") == "2:4");
}

TEST_CASE("unknown keys and malformed lines") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("prune.methd", "x"), ConfigError);
    CHECK_THROWS_AS(c.get("nope"), ConfigError);
    CHECK_THROWS_AS(c.merge_text("prune.method wanda\n"), ConfigError);
    CHECK_THROWS_AS(c.merge_text("bogus = 1\n"), ConfigError);
}

TEST_CASE("typed getters reject garbage") {
    RunConfig c;
    c.set("calib.samples", "12x");
    CHECK_THROWS_AS(c.get_count("calib.samples"), ConfigError);
    c.set("dual.s", "abc");
    CHECK_THROWS_AS(c.get_real("dual.s"), ConfigError);
    c.set("search.reference_rows", "maybe");
    CHECK_THROWS_AS(c.get_bool("search.reference_rows"), ConfigError);
    c.set("search.reference_rows", "false");
    CHECK_FALSE(c.get_bool("search.reference_rows"));
}

TEST_CASE("later settings override earlier ones") {
    RunConfig c;
    c.merge_text("prune.block = 8\n");
    c.set("prune.block", "32");
    CHECK(c.get_count("prune.block") == 32);
}

TEST_CASE("prune options from config") {
    RunConfig c;
    c.set("prune.pattern", "3:4");
    c.set("dual.preset", "task-shift");
    c.set("dual.lambda2", "-0.25");
    c.set("calib.mode", "oneshot");
    const auto o = prune_options(c);
    CHECK(o.pattern == SparsityPattern::nm(3, 4));
    CHECK(o.params.lambda1 == 0.5);
    CHECK(o.params.lambda2 == -0.25);
    CHECK(o.calib == CalibMode::oneshot);
    CHECK(o.params.scale.mode == ScaleMode::fixed);

    c.set("calib.seq_len", "1024");
    CHECK(prune_options(c).params.scale.mode == ScaleMode::seqlen);
    c.set("dual.scale_mode", "fixed");
    CHECK(prune_options(c).params.scale.mode == ScaleMode::fixed);
    c.set("calib.mode", "twice");
    CHECK_THROWS_AS(prune_options(c), ConfigError);
}

TEST_CASE("derived corpus seeds") {
    ModelConfig m;
    RunConfig a, b;
    b.set("seed", "8");
    CHECK(calibration_corpus(a, m).tokens == calibration_corpus(a, m).tokens);
    CHECK(calibration_corpus(a, m).tokens != calibration_corpus(b, m).tokens);
    const auto calib = calibration_corpus(a, m).tokens;
    const auto eval = eval_stream(a, m);
    CHECK(eval.size() == 4096);
    CHECK(std::vector<Token>(calib.begin(), calib.begin() + 64) != std::vector<Token>(eval.begin(), eval.begin() + 64));
    b.set("corpus.seed", "99");
    RunConfig c = b;
    c.set("seed", "1");
    CHECK(calibration_corpus(b, m).tokens == calibration_corpus(c, m).tokens);
    CHECK_THROWS_AS(run_prune(RunConfig{}), ConfigError);
}
