#include "d2prune/pipeline.hpp"

#include "d2prune/errors.hpp"

namespace d2p {

std::string_view method_name(Method m) {
    switch (m) {
        case Method::magnitude: return "magnitude";
        case Method::wanda: return "wanda";
        case Method::sparsegpt: return "sparsegpt";
        case Method::d2prune: return "d2prune";
    }
    return "?";
}

Method parse_method(std::string_view text) {
    if (text == "magnitude") return Method::magnitude;
    if (text == "wanda") return Method::wanda;
    if (text == "sparsegpt") return Method::sparsegpt;
    if (text == "d2prune") return Method::d2prune;
    throw ConfigError("unknown method '" + std::string(text) + "' (magnitude, wanda, sparsegpt, d2prune)");
}

std::string_view frozen_name(Frozen f) {
    switch (f) {
        case Frozen::none: return "none";
        case Frozen::q: return "q";
        case Frozen::k: return "k";
        case Frozen::v: return "v";
        case Frozen::all: return "all";
    }
    return "?";
}

Frozen parse_frozen(std::string_view text) {
    if (text == "none") return Frozen::none;
    if (text == "q") return Frozen::q;
    if (text == "k") return Frozen::k;
    if (text == "v") return Frozen::v;
    if (text == "all") return Frozen::all;
    throw ConfigError("unknown frozen projection '" + std::string(text) + "'");
}

QkvUpdateConfig QkvUpdateConfig::uniform(std::size_t n_layers, Frozen f) {
    return QkvUpdateConfig{std::vector<Frozen>(n_layers, f)};
}

bool QkvUpdateConfig::is_uniform() const {
    for (auto f : layers)
        if (f != layers.front()) return false;
    return true;
}

bool QkvUpdateConfig::frozen(std::size_t layer, Sublayer s) const {
    if (layer >= layers.size()) throw ConfigError("q/k/v configuration has no entry for layer " + std::to_string(layer));
    switch (layers[layer]) {
        case Frozen::none: return false;
        case Frozen::q: return s == Sublayer::q;
        case Frozen::k: return s == Sublayer::k;
        case Frozen::v: return s == Sublayer::v;
        case Frozen::all: return s == Sublayer::q || s == Sublayer::k || s == Sublayer::v;
    }
    return false;
}

std::pair<ScoreMethod, bool> sublayer_plan(Method method, const QkvUpdateConfig& qkv, std::size_t layer, Sublayer s) {
    switch (method) {
        case Method::magnitude: return {ScoreMethod::magnitude, false};
        case Method::wanda: return {ScoreMethod::wanda, false};
        case Method::sparsegpt: return {ScoreMethod::sparsegpt, true};
        case Method::d2prune:
            if (qkv.frozen(layer, s)) return {ScoreMethod::d2_noupdate, false};
            return {ScoreMethod::d2_update, true};
    }
    throw ConfigError("unknown method");
}

PruneOutcome prune_model(const WeightContainer& dense, const std::vector<std::vector<Token>>& samples,
                         const QkvUpdateConfig& qkv, const PruneOptions& options) {
    dense.validate();
    options.pattern.validate();
    const auto& cfg = dense.config;
    if (options.method == Method::d2prune && qkv.layers.size() != cfg.n_layers) {
        throw ConfigError("q/k/v configuration covers " + std::to_string(qkv.layers.size()) + " layers, model has " +
                          std::to_string(cfg.n_layers));
    }
    if (samples.empty()) throw ConfigError("no calibration samples");

    const CalibStats dense_stats = accumulate_samples(dense, samples);

    PruneOutcome out;
    out.model = dense;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        CalibStats layer_stats;
        if (options.calib == CalibMode::sequential && l > 0) {
            layer_stats = accumulate_samples(out.model, samples, l);
            for (auto& [name, st] : layer_stats.layers) st.out_norms = dense_stats.find(name)->out_norms;
        }
        const CalibStats& src = options.calib == CalibMode::sequential && l > 0 ? layer_stats : dense_stats;

        for (auto s : kSublayers) {
            const std::string name = weight_name(l, s);
            const LayerStats* st = src.find(name);
            if (!st) throw ConfigError("missing calibration statistics for '" + name + "'");
            const auto [score_method, do_update] = sublayer_plan(options.method, qkv, l, s);

            SolverOptions so;
            so.block = options.block;
            so.damping = options.damping;
            so.grouping = options.grouping;
            so.layer_name = name;
            auto res = prune_layer(dense.weight(l, s), *st, score_method, options.pattern, options.params, do_update, so);

            const auto report = verify(res.mask);
            out.records.push_back(
                {l, s, score_method, do_update, report.global, res.recon_error, report.violations.size()});
            out.model.set_weight(l, s, res.updated_weight);
            out.masks.emplace(name, std::move(res.mask));
            out.stats.layers.emplace(name, *st);
        }
    }
    return out;
}

}  // namespace d2p
