#include "d2prune/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

std::vector<double> column_softmax(const Matrix& logits, Eigen::Index t) {
    const double mx = logits.col(t).maxCoeff();
    std::vector<double> p(static_cast<std::size_t>(logits.rows()));
    double total = 0.0;
    for (Eigen::Index v = 0; v < logits.rows(); ++v) {
        p[v] = std::exp(logits(v, t) - mx);
        total += p[v];
    }
    for (auto& x : p) x /= total;
    return p;
}

void check_window(const WeightContainer& model, std::span<const Token> stream, std::size_t window) {
    if (window < 2) throw InputError("evaluation window must be at least 2 tokens");
    if (window > model.config.max_seq) {
        throw InputError("evaluation window " + std::to_string(window) + " exceeds max_seq " +
                         std::to_string(model.config.max_seq));
    }
    if (stream.size() < window) {
        throw InputError("evaluation stream has " + std::to_string(stream.size()) + " tokens, shorter than one window of " +
                         std::to_string(window));
    }
}

}  // namespace

WindowNll window_nll(const Matrix& logits, std::span<const Token> tokens) {
    if (logits.cols() != static_cast<Eigen::Index>(tokens.size())) {
        throw ShapeError("window_nll: " + std::to_string(logits.cols()) + " logit columns for " +
                         std::to_string(tokens.size()) + " tokens");
    }
    WindowNll out;
    for (std::size_t t = 0; t + 1 < tokens.size(); ++t) {
        const auto col = static_cast<Eigen::Index>(t);
        const double mx = logits.col(col).maxCoeff();
        const double lse = mx + std::log((logits.col(col).array() - mx).exp().sum());
        const double p = std::exp(logits(static_cast<Eigen::Index>(tokens[t + 1]), col) - lse);
        out.sum -= std::log(std::max(p, kProbFloor));
        ++out.count;
    }
    return out;
}

EvalResult perplexity(const WeightContainer& model, std::span<const Token> stream, std::size_t window) {
    check_window(model, stream, window);
    EvalResult r;
    double total = 0.0;
    for (std::size_t start = 0; start + window <= stream.size(); start += window) {
        const auto tokens = stream.subspan(start, window);
        const auto nll = window_nll(forward(model, tokens).logits, tokens);
        total += nll.sum;
        r.n_tokens += nll.count;
        ++r.windows;
    }
    r.ppl = std::exp(total / double(r.n_tokens));
    return r;
}

EvalResult evaluate(const WeightContainer& model, std::span<const Token> stream, std::size_t window,
                    const WeightContainer& reference) {
    check_window(model, stream, window);
    if (!(model.config == reference.config)) throw InputError("reference model has a different configuration");
    EvalResult r;
    double total = 0.0;
    double kl = 0.0;
    std::size_t positions = 0;
    for (std::size_t start = 0; start + window <= stream.size(); start += window) {
        const auto tokens = stream.subspan(start, window);
        const ForwardTrace trace = forward(model, tokens);
        const auto nll = window_nll(trace.logits, tokens);
        total += nll.sum;
        r.n_tokens += nll.count;
        ++r.windows;
        const ForwardTrace ref = forward(reference, tokens);
        kl += logit_divergence(ref, trace) * double(window);
        positions += window;
    }
    r.ppl = std::exp(total / double(r.n_tokens));
    r.logit_kl = kl / double(positions);
    return r;
}

double logit_divergence(const ForwardTrace& dense, const ForwardTrace& pruned) {
    if (dense.logits.rows() != pruned.logits.rows() || dense.logits.cols() != pruned.logits.cols()) {
        throw InputError("logit_divergence: logits are " + shape_str(dense.logits.rows(), dense.logits.cols()) +
                         " and " + shape_str(pruned.logits.rows(), pruned.logits.cols()));
    }
    if (dense.logits.cols() == 0) return 0.0;
    double total = 0.0;
    for (Eigen::Index t = 0; t < dense.logits.cols(); ++t) {
        total += floored_kl(column_softmax(dense.logits, t), column_softmax(pruned.logits, t));
    }
    return total / double(dense.logits.cols());
}

}  // namespace d2p
