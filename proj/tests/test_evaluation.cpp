#include <doctest.h>

#include <cmath>

#include "d2prune/calibration.hpp"
#include "d2prune/evaluation.hpp"

using namespace d2p;

namespace {

ModelConfig lookup_config() {
    ModelConfig c;
    c.n_layers = 1;
    c.n_heads = 1;
    c.d_model = 16;
    c.d_ff = 16;
    c.vocab = 16;
    c.max_seq = 32;
    return c;
}

// Residual stream carries the one-hot current token untouched; the head
// scores token j from coordinate j - 1.
WeightContainer next_token_model(double head_scale) {
    auto w = generate_weights(lookup_config(), 1);
    for (Sublayer s : kSublayers) w.set_weight(0, s, Matrix::Zero(w.weight(0, s).rows(), w.weight(0, s).cols()));
    w.at("tok_embed") = Tensor::Identity(16, 16);
    w.at("pos_embed").setZero();
    w.at("ln_f.gain").setOnes();
    w.at("ln_f.bias").setZero();
    Tensor head = Tensor::Zero(16, 16);
    for (int j = 0; j < 16; ++j) head(j, (j + 15) % 16) = static_cast<float>(head_scale);
    w.at("lm_head") = head;
    return w;
}

std::vector<Token> cycle(std::size_t n) {
    std::vector<Token> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<Token>(i % 16);
    return t;
}

}  // namespace

TEST_CASE("uniform logits give perplexity equal to the vocabulary") {
    auto w = generate_weights(lookup_config(), 2);
    w.at("lm_head").setZero();
    const auto r = perplexity(w, gen_corpus(16, 100, 3).tokens, 20);
    CHECK(r.ppl == doctest::Approx(16.0).epsilon(1e-12));
    CHECK(r.windows == 5);
    CHECK(r.n_tokens == 5 * 19);
}

TEST_CASE("a perfect predictor approaches perplexity one") {
    const auto r = perplexity(next_token_model(100.0), cycle(64), 32);
    CHECK(r.ppl >= 1.0);
    CHECK(r.ppl < 1.0 + 1e-9);
}

TEST_CASE("window NLL by hand") {
    Matrix logits(4, 3);
    logits.col(0) << std::log(0.5), std::log(1.0 / 6), std::log(1.0 / 6), std::log(1.0 / 6);
    logits.col(1).setZero();
    logits.col(2).setZero();
    const std::vector<Token> toks{2, 0, 3};
    const auto nll = window_nll(logits, toks);
    CHECK(nll.count == 2);
    CHECK(std::exp(nll.sum / double(nll.count)) == doctest::Approx(2.8284271247).epsilon(1e-9));
}

TEST_CASE("probabilities are floored") {
    Matrix logits(2, 2);
    logits.col(0) << 0.0, -1e6;
    logits.col(1).setZero();
    const std::vector<Token> toks{0, 1};
    const auto nll = window_nll(logits, toks);
    CHECK(nll.sum == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("stream and window preconditions") {
    const auto w = generate_weights(lookup_config(), 4);
    const auto toks = cycle(10);
    CHECK_THROWS_AS(perplexity(w, toks, 16), InputError);
    CHECK_THROWS_AS(perplexity(w, cycle(100), 33), InputError);
    CHECK_THROWS_AS(perplexity(w, toks, 1), InputError);
    // trailing partial window is dropped
    CHECK(perplexity(w, cycle(45), 16).windows == 2);
}

TEST_CASE("logit divergence") {
    ForwardTrace a, b;
    a.logits = Matrix(2, 1);
    b.logits = Matrix(2, 1);
    a.logits << 0.0, 0.0;
    b.logits << std::log(0.9), std::log(0.1);
    CHECK(logit_divergence(a, b) == doctest::Approx(0.5108256).epsilon(1e-6));
    CHECK(logit_divergence(a, a) == 0.0);
    CHECK(logit_divergence(b, a) >= 0.0);
    ForwardTrace c;
    c.logits = Matrix::Zero(3, 1);
    CHECK_THROWS_AS(logit_divergence(a, c), InputError);
}

TEST_CASE("evaluate against a reference") {
    const auto w = generate_weights(lookup_config(), 5);
    const auto stream = gen_corpus(16, 64, 6).tokens;
    const auto self = evaluate(w, stream, 16, w);
    REQUIRE(self.logit_kl.has_value());
    CHECK(*self.logit_kl == 0.0);
    CHECK(self.ppl == perplexity(w, stream, 16).ppl);

    auto other = w;
    other.set_weight(0, Sublayer::up, Matrix(w.weight(0, Sublayer::up) * 0.5));
    CHECK(*evaluate(other, stream, 16, w).logit_kl > 0.0);
    CHECK_FALSE(perplexity(w, stream, 16).logit_kl.has_value());
}
