#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "d2prune/report.hpp"
#include "d2prune/run.hpp"

using namespace d2p;

namespace {

std::filesystem::path work_dir() {
    auto d = std::filesystem::temp_directory_path() / "d2prune_report_test";
    std::filesystem::create_directories(d);
    return d;
}

const PruneRun& small_run() {
    static const PruneRun run = [] {
        ModelConfig c;
        c.n_layers = 2;
        c.n_heads = 2;
        c.d_model = 16;
        c.d_ff = 32;
        c.vocab = 24;
        c.max_seq = 16;
        const auto model_path = work_dir() / "model.d2pw";
        save(generate_weights(c, 7), model_path);
        RunConfig cfg;
        cfg.set("model.path", model_path.string());
        cfg.set("calib.samples", "8");
        cfg.set("calib.seq_len", "16");
        cfg.set("eval.tokens", "256");
        cfg.set("eval.window", "16");
        cfg.set("prune.pattern", "0.6");
        cfg.set("search.reference_rows", "true");
        return run_prune(cfg);
    }();
    return run;
}

std::string slurp(const std::filesystem::path& p) {
    const auto bytes = read_file(p);
    return std::string(bytes.begin(), bytes.end());
}

}  // namespace

TEST_CASE("report contents") {
    const auto& r = small_run().report;
    CHECK(r.layers.size() == 12);
    CHECK(r.qkv_mode == "dynamic");
    CHECK(r.search.size() == 3);
    CHECK(r.search_reference.size() == 2);
    CHECK(r.outlier_ratios.size() == 2);
    CHECK(r.violations == 0);
    CHECK(r.pruned_eval.ppl >= 1.0);
    CHECK(r.dense_eval.ppl >= 1.0);
    REQUIRE(r.pruned_eval.logit_kl.has_value());
    CHECK(r.model_digest.size() == 64);
    CHECK(r.toolkit_version == kToolkitVersion);
    CHECK(r.config.at("prune.pattern") == "0.6");
}

TEST_CASE("emission is byte-identical") {
    const auto& r = small_run().report;
    const auto a = work_dir() / "a";
    const auto b = work_dir() / "b";
    emit_report(r, a);
    emit_report(r, b);
    CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
    CHECK(slurp(a / "layers.csv") == slurp(b / "layers.csv"));
}

TEST_CASE("report round-trips through its parser") {
    const auto& r = small_run().report;
    const std::string json = report_to_json(r);
    const RunReport back = parse_report(json);
    CHECK(report_to_json(back) == json);
    CHECK(back.qkv == r.qkv);
    CHECK(back.pruned_eval.ppl == r.pruned_eval.ppl);
    CHECK(json.find("\"schema\": \"d2prune-report/1\"") != std::string::npos);
}

TEST_CASE("digest tracks the numbers") {
    RunReport r = small_run().report;
    const std::string before = report_to_json(r);
    r.pruned_eval.ppl = std::nextafter(r.pruned_eval.ppl, 1e9);
    const std::string after = report_to_json(r);
    auto digest_of = [](const std::string& j) { return j.substr(j.find("\"digest\"")); };
    CHECK(digest_of(before) != digest_of(after));

    std::string tampered = before;
    const auto pos = tampered.find("\"mean_kl\": ");
    REQUIRE(pos != std::string::npos);
    tampered.insert(pos + 11, "1");
    CHECK_THROWS_AS(parse_report(tampered), FormatError);

    std::string schema = before;
    schema.replace(schema.find("d2prune-report/1"), 16, "d2prune-report/9");
    CHECK_THROWS_AS(parse_report(schema), FormatError);
}

TEST_CASE("layers CSV") {
    const auto& r = small_run().report;
    const std::string csv = layers_csv(r);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "# format: d2prune-layers-csv/1");
    std::getline(in, line);
    CHECK(line == "layer,sublayer,method,sparsity,recon_error,kl,rmse");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2 * 6);
}

TEST_CASE("write_prune_outputs") {
    const auto dir = work_dir() / "out";
    write_prune_outputs(small_run(), dir);
    CHECK(std::filesystem::exists(dir / "pruned.d2pw"));
    CHECK(load(dir / "pruned.d2pw") == small_run().pruned);
    CHECK(parse_report(slurp(dir / "report.json")).pruned_digest == small_run().report.pruned_digest);
}
