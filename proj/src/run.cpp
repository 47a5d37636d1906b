#include "d2prune/run.hpp"

#include "d2prune/attention.hpp"
#include "d2prune/errors.hpp"
#include "d2prune/evaluation.hpp"

namespace d2p {

namespace {

CorpusGenerator parse_generator(const std::string& g) {
    if (g == "markov2") return CorpusGenerator::markov2;
    if (g == "uniform") return CorpusGenerator::uniform;
    throw ConfigError("unknown corpus generator '" + g + "' (markov2, uniform)");
}

std::vector<Token> checked_tokens(std::vector<Token> tokens, const ModelConfig& model, const std::string& what) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= model.vocab) {
            throw InputError(what + " token " + std::to_string(i) + " is " + std::to_string(tokens[i]) +
                             ", vocabulary is " + std::to_string(model.vocab));
        }
    }
    return tokens;
}

std::string digest_of(const WeightContainer& w) { return sha256_hex(encode_d2pw(to_tensor_file(w))); }

}  // namespace

PruneOptions prune_options(const RunConfig& cfg) {
    PruneOptions o;
    o.method = parse_method(cfg.get("prune.method"));
    o.pattern = SparsityPattern::parse(cfg.get("prune.pattern"));

    o.params = DualParams::preset(cfg.get("dual.preset"));
    if (!cfg.get("dual.lambda1").empty()) o.params.lambda1 = cfg.get_real("dual.lambda1");
    if (!cfg.get("dual.lambda2").empty()) o.params.lambda2 = cfg.get_real("dual.lambda2");
    o.params.scale.s = cfg.get_real("dual.s");
    if (!(o.params.scale.s > 0.0)) throw ConfigError("dual.s must be positive");
    const auto& mode = cfg.get("dual.scale_mode");
    if (mode == "fixed") {
        o.params.scale.mode = ScaleMode::fixed;
    } else if (mode == "seqlen") {
        o.params.scale.mode = ScaleMode::seqlen;
    } else if (mode == "auto") {
        o.params.scale.mode = cfg.get_count("calib.seq_len") >= 1024 ? ScaleMode::seqlen : ScaleMode::fixed;
    } else {
        throw ConfigError("dual.scale_mode must be auto, fixed or seqlen");
    }

    const auto& calib = cfg.get("calib.mode");
    if (calib == "sequential") {
        o.calib = CalibMode::sequential;
    } else if (calib == "oneshot") {
        o.calib = CalibMode::oneshot;
    } else {
        throw ConfigError("calib.mode must be sequential or oneshot");
    }

    o.block = cfg.get_count("prune.block");
    if (o.block == 0) throw ConfigError("prune.block must be >= 1");
    o.damping = cfg.get_real("prune.damping");
    const auto& grouping = cfg.get("prune.grouping");
    if (grouping == "row") {
        o.grouping = Grouping::row;
    } else if (grouping == "layer") {
        o.grouping = Grouping::layer;
    } else {
        throw ConfigError("prune.grouping must be row or layer");
    }
    return o;
}

Corpus calibration_corpus(const RunConfig& cfg, const ModelConfig& model) {
    if (!cfg.get("corpus.path").empty()) {
        Corpus c;
        c.vocab = model.vocab;
        c.tokens = checked_tokens(load_tokens(cfg.get("corpus.path")), model, "calibration corpus");
        return c;
    }
    const std::uint64_t seed = cfg.get("corpus.seed").empty() ? derive_seed(cfg.get_u64("seed"), "corpus")
                                                               : cfg.get_u64("corpus.seed");
    const std::size_t length = cfg.get_count("calib.samples") * cfg.get_count("calib.seq_len") +
                               cfg.get_count("search.windows") * cfg.get_count("eval.window");
    return gen_corpus(model.vocab, length, seed, parse_generator(cfg.get("corpus.generator")));
}

std::vector<Token> eval_stream(const RunConfig& cfg, const ModelConfig& model) {
    if (!cfg.get("eval.path").empty()) return checked_tokens(load_tokens(cfg.get("eval.path")), model, "evaluation stream");
    return gen_corpus(model.vocab, cfg.get_count("eval.tokens"), derive_seed(cfg.get_u64("seed"), "eval"),
                      parse_generator(cfg.get("corpus.generator")))
        .tokens;
}

PruneRun run_prune(const RunConfig& cfg) {
    if (cfg.get("model.path").empty()) throw ConfigError("model.path is required");
    const WeightContainer dense = load(cfg.get("model.path"));
    const PruneOptions options = prune_options(cfg);
    const std::size_t n_samples = cfg.get_count("calib.samples");
    const std::size_t seq_len = cfg.get_count("calib.seq_len");
    const std::size_t window = cfg.get_count("eval.window");
    if (seq_len > dense.config.max_seq) {
        throw ConfigError("calib.seq_len " + std::to_string(seq_len) + " exceeds the model's max_seq " +
                          std::to_string(dense.config.max_seq));
    }

    const Corpus corpus = calibration_corpus(cfg, dense.config);
    const auto samples = calibration_samples(corpus, n_samples, seq_len);
    const std::vector<Token> eval_tokens = eval_stream(cfg, dense.config);

    RunReport report;
    report.config = cfg.values();
    report.model_digest = digest_of(dense);
    report.outlier_ratios = qkv_outlier_ratios(dense);

    const std::string mode = cfg.get("prune.qkv");
    const std::size_t n_layers = dense.config.n_layers;
    QkvUpdateConfig qkv = QkvUpdateConfig::uniform(n_layers, Frozen::none);
    PruneOutcome outcome;
    bool searched = false;
    if (options.method == Method::d2prune) {
        report.qkv_mode = mode;
        if (mode == "all") {
            qkv = QkvUpdateConfig::uniform(n_layers, Frozen::none);
        } else if (mode == "none") {
            qkv = QkvUpdateConfig::uniform(n_layers, Frozen::all);
        } else if (mode == "no-q") {
            qkv = QkvUpdateConfig::uniform(n_layers, Frozen::q);
        } else if (mode == "no-k") {
            qkv = QkvUpdateConfig::uniform(n_layers, Frozen::k);
        } else if (mode == "no-v") {
            qkv = QkvUpdateConfig::uniform(n_layers, Frozen::v);
        } else if (mode == "nonuniform") {
            qkv = search_nonuniform(dense);
        } else if (mode == "dynamic") {
            const std::size_t held_start = n_samples * seq_len;
            const std::size_t held_len = cfg.get_count("search.windows") * window;
            if (held_len == 0) throw ConfigError("search.windows must be >= 1 for the dynamic search");
            if (corpus.tokens.size() < held_start + held_len) {
                throw InputError("calibration corpus has " + std::to_string(corpus.tokens.size()) +
                                 " tokens; the held-out search slice needs " + std::to_string(held_start + held_len));
            }
            const std::span<const Token> held(corpus.tokens.data() + held_start, held_len);
            auto s = search_uniform(dense, samples, held, window, options, cfg.get_bool("search.reference_rows"));
            report.search = s.candidates;
            report.search_reference = s.reference;
            qkv = s.config;
            outcome = std::move(s.outcome);
            searched = true;
        } else {
            throw ConfigError("prune.qkv must be one of all, none, no-q, no-k, no-v, dynamic, nonuniform");
        }
        report.qkv = qkv;
    } else {
        report.qkv_mode = "n/a";
    }
    if (!searched) outcome = prune_model(dense, samples, qkv, options);

    report.layers = outcome.records;
    std::size_t kept = 0, total = 0;
    for (const auto& [name, mask] : outcome.masks) {
        for (Eigen::Index j = 0; j < mask.keep.cols(); ++j)
            for (Eigen::Index i = 0; i < mask.keep.rows(); ++i) kept += mask.keep(i, j);
        total += static_cast<std::size_t>(mask.keep.size());
    }
    report.global_sparsity = total ? 1.0 - double(kept) / double(total) : 0.0;
    for (const auto& r : outcome.records) report.violations += r.violations;

    report.dense_eval = perplexity(dense, eval_tokens, window);
    report.pruned_eval = evaluate(outcome.model, eval_tokens, window, dense);

    const std::size_t attn_samples = cfg.get_count("attn.samples");
    if (attn_samples > 0) {
        std::vector<std::vector<Token>> inputs;
        for (std::size_t i = 0; i < attn_samples && (i + 1) * window <= eval_tokens.size(); ++i) {
            inputs.emplace_back(eval_tokens.begin() + i * window, eval_tokens.begin() + (i + 1) * window);
        }
        if (!inputs.empty()) report.attention = attn_fidelity(dense, outcome.model, inputs);
    }

    report.pruned_digest = digest_of(outcome.model);
    return PruneRun{std::move(report), std::move(outcome.model)};
}

void write_prune_outputs(const PruneRun& run, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    // The report goes last: its presence means the run completed.
    save(run.pruned, dir / "pruned.d2pw");
    emit_report(run.report, dir);
}

}  // namespace d2p
