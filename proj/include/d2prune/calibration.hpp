#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "d2prune/model.hpp"
#include "d2prune/numerics.hpp"

namespace d2p {

enum class CorpusGenerator { markov2, uniform };

/// Seed of the order-2 transition table shared by every markov2 corpus, so
/// streams drawn with different seeds come from the same "language".
inline constexpr std::uint64_t kDefaultTableSeed = 0x5eed7ab1eull;

struct Corpus {
    std::size_t vocab = 0;
    std::vector<Token> tokens;
    std::uint64_t seed = 0;
    CorpusGenerator generator = CorpusGenerator::markov2;
};

Corpus gen_corpus(std::size_t vocab, std::size_t length, std::uint64_t seed,
                  CorpusGenerator generator = CorpusGenerator::markov2, std::uint64_t table_seed = kDefaultTableSeed);

/// Calibration statistics of one linear sublayer.
struct LayerStats {
    Matrix hessian;    ///< sum over tokens of x x^T, d_in x d_in
    Vector in_norms;   ///< per input dimension L2 norm over all tokens
    Vector out_norms;  ///< per output dimension L2 norm, dense model
    std::size_t n_tokens = 0;
};

struct CalibStats {
    std::map<std::string, LayerStats> layers;  ///< keyed by weight_name()

    const LayerStats& at(std::size_t layer, Sublayer s) const;
    const LayerStats* find(const std::string& name) const;
};

/// Running sum of x x^T and squared column norms over token columns.
class HessianAccumulator {
public:
    explicit HessianAccumulator(Eigen::Index dim);

    /// `x` is dim x tokens.
    void add(const Matrix& x);

    const Matrix& hessian() const { return hessian_; }
    Vector norms() const { return sq_norms_.cwiseSqrt(); }
    std::size_t n_tokens() const { return n_tokens_; }

private:
    Matrix hessian_;
    Vector sq_norms_;
    std::size_t n_tokens_ = 0;
};

/// Consecutive non-overlapping windows from the start of the corpus.
std::vector<std::vector<Token>> calibration_samples(const Corpus& corpus, std::size_t n_samples, std::size_t seq_len);

/// Dense-model statistics for every linear sublayer.
CalibStats accumulate(const WeightContainer& model, const Corpus& corpus, std::size_t n_samples, std::size_t seq_len);

/// Accumulates over explicit samples. Samples are reduced in lexicographic
/// token order, so the result does not depend on how they were supplied.
/// With `only_layer` set, statistics are collected for that block only.
CalibStats accumulate_samples(const WeightContainer& model, std::vector<std::vector<Token>> samples,
                              std::optional<std::size_t> only_layer = std::nullopt);

enum class ScaleMode { fixed, seqlen };

struct ScaleSpec {
    double s = 1500.0;
    ScaleMode mode = ScaleMode::fixed;
};

/// (norm^2 / s)^(1/2); seqlen mode uses s = n_tokens.
double scaled_norm(double norm, const ScaleSpec& spec, std::size_t n_tokens);

/// Linear fit of activation shift against activation magnitude for one layer.
struct ShiftFit {
    std::size_t layer = 0;
    std::optional<double> lambda;  ///< slope; undefined when x has no variance
    std::optional<double> r2;      ///< undefined when x or the shift has no variance
    double mean_x = 0.0;
    double mean_shift = 0.0;
};

/// Least-squares fit of (b - a) against a over paired magnitudes.
ShiftFit fit_activation_shift(std::span<const double> a, std::span<const double> b);

/// Per-layer mean |x| at the block's attention input under each corpus, and
/// the fitted shift coefficient.
std::vector<ShiftFit> activation_shift_report(const WeightContainer& model, const Corpus& corpus_a,
                                              const Corpus& corpus_b, std::size_t n_samples, std::size_t seq_len);

TensorFile calib_stats_to_file(const CalibStats& stats);
CalibStats calib_stats_from_file(const TensorFile& file);

}  // namespace d2p
