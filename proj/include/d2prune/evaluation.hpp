#pragma once

#include <optional>
#include <span>

#include "d2prune/model.hpp"

namespace d2p {

struct EvalResult {
    double ppl = 1.0;
    /// Mean KL of dense vs evaluated next-token distributions; only set when a
    /// reference model was supplied.
    std::optional<double> logit_kl;
    std::size_t n_tokens = 0;  ///< predicted positions
    std::size_t windows = 0;
};

struct WindowNll {
    double sum = 0.0;
    std::size_t count = 0;
};

/// NLL of tokens[t+1] under column t of `logits` (vocab x T), with
/// probabilities floored at 1e-12.
WindowNll window_nll(const Matrix& logits, std::span<const Token> tokens);

/// exp(mean NLL) over non-overlapping windows of `window` tokens; a trailing
/// partial window is dropped.
EvalResult perplexity(const WeightContainer& model, std::span<const Token> stream, std::size_t window);

/// perplexity() plus mean logit KL against `reference` on the same windows.
EvalResult evaluate(const WeightContainer& model, std::span<const Token> stream, std::size_t window,
                    const WeightContainer& reference);

/// Mean over positions of KL(softmax(dense) || softmax(pruned)).
double logit_divergence(const ForwardTrace& dense, const ForwardTrace& pruned);

}  // namespace d2p
