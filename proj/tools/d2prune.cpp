// Command-line front end. Every subcommand is a batch job: it reads its
// inputs, writes its outputs and exits 0, or prints "error: ..." and exits 1.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "d2prune/attention.hpp"
#include "d2prune/calibration.hpp"
#include "d2prune/errors.hpp"
#include "d2prune/evaluation.hpp"
#include "d2prune/model.hpp"
#include "d2prune/run.hpp"

namespace {

using namespace d2p;

std::string fmt_real(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<Token> stream_or_generated(const std::string& path, std::uint64_t seed, std::size_t length,
                                       const ModelConfig& model) {
    std::vector<Token> tokens =
        path.empty() ? gen_corpus(model.vocab, length, derive_seed(seed, "eval")).tokens : load_tokens(path);
    for (auto t : tokens)
        if (t >= model.vocab) throw InputError("token id " + std::to_string(t) + " outside vocabulary");
    return tokens;
}

struct GenModelArgs {
    ModelConfig config;
    std::optional<std::size_t> d_ff;
    std::uint64_t seed = 7;
    std::string structure = "random";
    std::string out = "model.d2pw";
};

int cmd_gen_model(GenModelArgs& a) {
    a.config.d_ff = a.d_ff.value_or(4 * a.config.d_model);
    if (a.structure != "random" && a.structure != "lowrank") {
        throw ConfigError("--structure must be random or lowrank");
    }
    const auto w = generate_weights(a.config, a.seed,
                                    a.structure == "lowrank" ? WeightStructure::lowrank_noise : WeightStructure::random);
    save(w, a.out);
    std::cout << sha256_hex(encode_d2pw(to_tensor_file(w))) << "  " << a.out << "\n";
    return 0;
}

struct GenCorpusArgs {
    std::size_t vocab = 64;
    std::size_t length = 8192;
    std::uint64_t seed = 7;
    std::string generator = "markov2";
    std::string out = "corpus.bin";
};

int cmd_gen_corpus(const GenCorpusArgs& a) {
    if (a.generator != "markov2" && a.generator != "uniform") throw ConfigError("--generator must be markov2 or uniform");
    const auto c = gen_corpus(a.vocab, a.length, a.seed,
                              a.generator == "markov2" ? CorpusGenerator::markov2 : CorpusGenerator::uniform);
    save_tokens(c.tokens, a.out);
    return 0;
}

struct PruneArgs {
    std::string config_file;
    std::map<std::string, std::string> flags;  // config key -> value
    std::vector<std::string> sets;
};

int cmd_prune(const PruneArgs& a) {
    RunConfig cfg;
    if (!a.config_file.empty()) cfg.merge_file(a.config_file);
    for (const auto& [k, v] : a.flags) cfg.set(k, v);
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    const auto run = run_prune(cfg);
    write_prune_outputs(run, cfg.get("output.dir"));
    const auto& r = run.report;
    std::cout << "sparsity " << fmt_real(r.global_sparsity) << "  ppl dense " << fmt_real(r.dense_eval.ppl)
              << "  pruned " << fmt_real(r.pruned_eval.ppl) << "\n";
    if (!r.search.empty()) {
        for (const auto& row : r.search) std::cout << "  w/o " << frozen_name(row.frozen) << "  " << fmt_real(row.ppl) << "\n";
        std::cout << "  selected w/o " << frozen_name(r.qkv.layers.front()) << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string model;
    std::string reference;
    std::string eval_path;
    std::uint64_t seed = 7;
    std::size_t tokens = 4096;
    std::size_t window = 64;
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const auto model = load(a.model);
    const auto stream = stream_or_generated(a.eval_path, a.seed, a.tokens, model.config);
    const EvalResult r =
        a.reference.empty() ? perplexity(model, stream, a.window) : evaluate(model, stream, a.window, load(a.reference));
    nlohmann::json j;
    j["ppl"] = r.ppl;
    j["logit_kl"] = r.logit_kl ? nlohmann::json(*r.logit_kl) : nlohmann::json(nullptr);
    j["n_tokens"] = r.n_tokens;
    j["windows"] = r.windows;
    const std::string text = j.dump(2) + "\n";
    if (a.out.empty()) {
        std::cout << text;
    } else {
        write_text(a.out, text);
    }
    return 0;
}

struct AttnArgs {
    std::string dense;
    std::vector<std::string> models;  // label=path
    std::string eval_path;
    std::uint64_t seed = 7;
    std::size_t window = 64;
    std::size_t samples = 4;
    std::string out = "attn.csv";
    std::string surfaces;
};

int cmd_attn_report(const AttnArgs& a) {
    const auto dense = load(a.dense);
    const auto stream = stream_or_generated(a.eval_path, a.seed, a.window * a.samples, dense.config);
    std::vector<std::vector<Token>> inputs;
    for (std::size_t i = 0; i < a.samples && (i + 1) * a.window <= stream.size(); ++i) {
        inputs.emplace_back(stream.begin() + i * a.window, stream.begin() + (i + 1) * a.window);
    }
    if (inputs.empty()) throw InputError("evaluation stream is shorter than one window");

    std::string csv = "# format: d2prune-attn-csv/1\nlabel,layer,head,kl,rmse\n";
    TensorFile surfaces;
    surfaces.metadata["kind"] = "attention";
    auto add_surfaces = [&](const std::string& label, const WeightContainer& w) {
        for (auto& t : attention_surfaces(forward(w, inputs.front(), Capture::full), label + ".").tensors) {
            surfaces.tensors.push_back(std::move(t));
        }
    };
    if (!a.surfaces.empty()) add_surfaces("dense", dense);

    for (const auto& spec : a.models) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--model expects label=path, got '" + spec + "'");
        const std::string label = spec.substr(0, eq);
        const auto model = load(spec.substr(eq + 1));
        const auto f = attn_fidelity(dense, model, inputs);
        for (std::size_t l = 0; l < f.kl.size(); ++l) {
            for (std::size_t h = 0; h < f.kl[l].size(); ++h) {
                csv += label + "," + std::to_string(l) + "," + std::to_string(h) + "," + fmt_real(f.kl[l][h]) + "," +
                       fmt_real(f.rmse[l]) + "\n";
            }
        }
        std::cout << label << "  kl " << fmt_real(f.mean_kl) << "  rmse " << fmt_real(f.mean_rmse) << "\n";
        if (!a.surfaces.empty()) add_surfaces(label, model);
    }
    write_text(a.out, csv);
    if (!a.surfaces.empty()) save_d2pw(surfaces, a.surfaces);
    return 0;
}

struct ShiftArgs {
    std::string model;
    std::uint64_t seed_a = 1;
    std::uint64_t seed_b = 2;
    std::size_t samples = 16;
    std::size_t seq_len = 64;
    std::string out = "shift.csv";
};

int cmd_shift_report(const ShiftArgs& a) {
    const auto model = load(a.model);
    const std::size_t length = a.samples * a.seq_len;
    const auto ca = gen_corpus(model.config.vocab, length, a.seed_a);
    const auto cb = gen_corpus(model.config.vocab, length, a.seed_b);
    std::string csv = "# format: d2prune-shift-csv/1\nlayer,lambda,r2,mean_x,mean_shift\n";
    auto opt = [](const std::optional<double>& x) { return x ? fmt_real(*x) : std::string("nan"); };
    for (const auto& f : activation_shift_report(model, ca, cb, a.samples, a.seq_len)) {
        csv += std::to_string(f.layer) + "," + opt(f.lambda) + "," + opt(f.r2) + "," + fmt_real(f.mean_x) + "," +
               fmt_real(f.mean_shift) + "\n";
    }
    write_text(a.out, csv);
    std::cout << csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"d2prune: dual-Taylor post-training pruning for toy decoder transformers"};
    app.require_subcommand(1);

    GenModelArgs gm;
    auto* gen_model = app.add_subcommand("gen-model", "Generate a seeded toy decoder");
    gen_model->add_option("--layers", gm.config.n_layers, "Decoder blocks")->capture_default_str();
    gen_model->add_option("--heads", gm.config.n_heads, "Attention heads")->capture_default_str();
    gen_model->add_option("--dmodel", gm.config.d_model, "Model width")->capture_default_str();
    gen_model->add_option("--dff", gm.d_ff, "MLP width (default 4 * dmodel)");
    gen_model->add_option("--vocab", gm.config.vocab, "Vocabulary size")->capture_default_str();
    gen_model->add_option("--max-seq", gm.config.max_seq, "Maximum sequence length")->capture_default_str();
    gen_model->add_option("--seed", gm.seed, "Seed")->capture_default_str();
    gen_model->add_option("--structure", gm.structure, "random or lowrank")->capture_default_str();
    gen_model->add_option("--out", gm.out, "Output D2PW file")->capture_default_str();

    GenCorpusArgs gc;
    auto* gen_corpus_cmd = app.add_subcommand("gen-corpus", "Generate a synthetic token stream (u32 LE)");
    gen_corpus_cmd->add_option("--vocab", gc.vocab)->capture_default_str();
    gen_corpus_cmd->add_option("--length", gc.length)->capture_default_str();
    gen_corpus_cmd->add_option("--seed", gc.seed)->capture_default_str();
    gen_corpus_cmd->add_option("--generator", gc.generator, "markov2 or uniform")->capture_default_str();
    gen_corpus_cmd->add_option("--out", gc.out)->capture_default_str();

    PruneArgs pa;
    auto* prune = app.add_subcommand("prune", "Calibrate, prune, search and report");
    prune->add_option("--config", pa.config_file, "key=value configuration file");
    prune->add_option("--set", pa.sets, "Override any configuration key (key=value)");
    const std::vector<std::pair<std::string, std::string>> prune_flags = {
        {"--model", "model.path"},          {"--corpus", "corpus.path"},
        {"--corpus-seed", "corpus.seed"},   {"--generator", "corpus.generator"},
        {"--samples", "calib.samples"},     {"--seq-len", "calib.seq_len"},
        {"--calib", "calib.mode"},          {"--method", "prune.method"},
        {"--sparsity", "prune.pattern"},    {"--pattern", "prune.pattern"},
        {"--qkv", "prune.qkv"},             {"--block", "prune.block"},
        {"--damping", "prune.damping"},     {"--grouping", "prune.grouping"},
        {"--preset", "dual.preset"},        {"--lambda1", "dual.lambda1"},
        {"--lambda2", "dual.lambda2"},      {"--scale-mode", "dual.scale_mode"},
        {"--s", "dual.s"},                  {"--eval", "eval.path"},
        {"--eval-tokens", "eval.tokens"},   {"--window", "eval.window"},
        {"--search-windows", "search.windows"}, {"--reference-rows", "search.reference_rows"},
        {"--attn-samples", "attn.samples"}, {"--out", "output.dir"},
        {"--seed", "seed"},
    };
    for (const auto& [flag, key] : prune_flags) {
        const std::string k = key;
        prune->add_option_function<std::string>(flag, [&pa, k](const std::string& v) { pa.flags[k] = v; },
                                                "Sets " + k);
    }

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Perplexity (and logit KL against a reference)");
    eval->add_option("--model", ea.model)->required();
    eval->add_option("--reference", ea.reference, "Dense model for logit KL");
    eval->add_option("--eval", ea.eval_path, "Token stream (u32 LE); generated from --seed if absent");
    eval->add_option("--seed", ea.seed)->capture_default_str();
    eval->add_option("--tokens", ea.tokens, "Generated stream length")->capture_default_str();
    eval->add_option("--window", ea.window)->capture_default_str();
    eval->add_option("--out", ea.out, "Write JSON here instead of stdout");

    AttnArgs aa;
    auto* attn = app.add_subcommand("attn-report", "Attention KL and RMSE against a dense model");
    attn->add_option("--dense", aa.dense)->required();
    attn->add_option("--model", aa.models, "label=path, repeatable")->required();
    attn->add_option("--eval", aa.eval_path, "Token stream (u32 LE); generated from --seed if absent");
    attn->add_option("--seed", aa.seed)->capture_default_str();
    attn->add_option("--window", aa.window)->capture_default_str();
    attn->add_option("--samples", aa.samples, "Windows to average over")->capture_default_str();
    attn->add_option("--out", aa.out, "CSV output")->capture_default_str();
    attn->add_option("--surfaces", aa.surfaces, "Also export attention maps of the first window (D2PW)");

    ShiftArgs sa;
    auto* shift = app.add_subcommand("shift-report", "Per-layer activation-shift fit between two corpora");
    shift->add_option("--model", sa.model)->required();
    shift->add_option("--seed-a", sa.seed_a)->capture_default_str();
    shift->add_option("--seed-b", sa.seed_b)->capture_default_str();
    shift->add_option("--samples", sa.samples)->capture_default_str();
    shift->add_option("--seq-len", sa.seq_len)->capture_default_str();
    shift->add_option("--out", sa.out)->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen_model) return cmd_gen_model(gm);
        if (*gen_corpus_cmd) return cmd_gen_corpus(gc);
        if (*prune) return cmd_prune(pa);
        if (*eval) return cmd_eval(ea);
        if (*attn) return cmd_attn_report(aa);
        if (*shift) return cmd_shift_report(sa);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
