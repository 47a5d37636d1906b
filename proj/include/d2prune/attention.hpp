#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2prune/model.hpp"
#include "d2prune/pipeline.hpp"

namespace d2p {

struct AttnFidelity {
    std::vector<std::vector<double>> kl;  ///< [layer][head], mean row KL in nats
    std::vector<double> rmse;             ///< [layer], attention-block output RMSE
    double mean_kl = 0.0;
    double mean_rmse = 0.0;
};

/// Row-wise attention KL (dense || pruned) over each causal prefix, and RMSE
/// of the attention-block outputs. Both traces need Capture::full.
AttnFidelity attn_kl(const ForwardTrace& dense, const ForwardTrace& pruned);

/// attn_kl averaged over several input sequences (equal weight per sequence).
AttnFidelity attn_fidelity(const WeightContainer& dense, const WeightContainer& pruned,
                           const std::vector<std::vector<Token>>& inputs);

/// Fraction of entries with |w| strictly above mean |w|. The comparison is
/// exact, so a constant matrix gives 0.
double outlier_ratio(const Matrix& w);

/// (r_q, r_k, r_v) per layer of the dense weights.
std::vector<std::array<double, 3>> qkv_outlier_ratios(const WeightContainer& model);

/// Index of the smallest value; ties go to the earliest (q, k, v order).
std::size_t select_min_ppl(std::span<const double> ppl);

/// Index of the largest value; ties go to the earliest.
std::size_t select_max_ratio(std::span<const double> ratio);

struct SearchRow {
    Frozen frozen = Frozen::q;
    double ppl = 0.0;
};

struct UniformSearch {
    std::vector<SearchRow> candidates;  ///< frozen q, k, v in that order
    std::vector<SearchRow> reference;   ///< frozen all / none, when requested
    Frozen chosen = Frozen::q;
    QkvUpdateConfig config;
    PruneOutcome outcome;  ///< pruned model of the chosen candidate
};

/// Prunes the model once per uniform candidate (freeze q, k or v in every
/// layer) and keeps the one with the lowest perplexity on `eval_stream`.
UniformSearch search_uniform(const WeightContainer& dense, const std::vector<std::vector<Token>>& samples,
                             std::span<const Token> eval_stream, std::size_t window, const PruneOptions& options,
                             bool reference_rows = false);

/// Freezes, per layer, the projection with the highest outlier ratio.
QkvUpdateConfig search_nonuniform(const WeightContainer& model);

/// Attention maps of a full trace as D2PW tensors "<prefix>layers.L.head.H".
TensorFile attention_surfaces(const ForwardTrace& trace, const std::string& prefix = "");

}  // namespace d2p
