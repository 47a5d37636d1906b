#include "d2prune/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

// Transition rows of the order-2 chain, generated on first use.
class Markov2Table {
public:
    Markov2Table(std::size_t vocab, std::uint64_t seed) : vocab_(vocab), seed_(seed) {}

    const std::vector<double>& cdf(Token a, Token b) {
        const std::uint64_t key = std::uint64_t(a) * vocab_ + b;
        auto it = rows_.find(key);
        if (it != rows_.end()) return it->second;
        std::mt19937_64 rng(derive_seed(seed_, "markov2-row-" + std::to_string(key)));
        std::normal_distribution<double> logit(0.0, 3.0);
        std::vector<double> row(vocab_);
        double total = 0.0;
        for (auto& p : row) {
            p = std::exp(logit(rng));
            total += p;
        }
        double acc = 0.0;
        for (auto& p : row) {
            acc += p / total;
            p = acc;
        }
        row.back() = 1.0;
        return rows_.emplace(key, std::move(row)).first->second;
    }

private:
    std::size_t vocab_;
    std::uint64_t seed_;
    std::unordered_map<std::uint64_t, std::vector<double>> rows_;
};

constexpr const char* kCalibPrefix = "calib.";

}  // namespace

Corpus gen_corpus(std::size_t vocab, std::size_t length, std::uint64_t seed, CorpusGenerator generator,
                  std::uint64_t table_seed) {
    if (vocab < 2) throw InputError("gen_corpus: vocab must be >= 2");
    Corpus corpus{vocab, {}, seed, generator};
    corpus.tokens.reserve(length);
    std::mt19937_64 rng(derive_seed(seed, "corpus-stream"));
    std::uniform_int_distribution<Token> any(0, static_cast<Token>(vocab - 1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Markov2Table table(vocab, table_seed);
    for (std::size_t i = 0; i < length; ++i) {
        if (generator == CorpusGenerator::uniform || i < 2) {
            corpus.tokens.push_back(any(rng));
            continue;
        }
        const auto& cdf = table.cdf(corpus.tokens[i - 2], corpus.tokens[i - 1]);
        const double u = unit(rng);
        const auto pos = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
        corpus.tokens.push_back(static_cast<Token>(std::min<std::ptrdiff_t>(pos, std::ptrdiff_t(vocab) - 1)));
    }
    return corpus;
}

const LayerStats& CalibStats::at(std::size_t layer, Sublayer s) const {
    const auto* found = find(weight_name(layer, s));
    if (!found) throw ConfigError("no calibration statistics for '" + weight_name(layer, s) + "'");
    return *found;
}

const LayerStats* CalibStats::find(const std::string& name) const {
    auto it = layers.find(name);
    return it == layers.end() ? nullptr : &it->second;
}

HessianAccumulator::HessianAccumulator(Eigen::Index dim)
    : hessian_(Matrix::Zero(dim, dim)), sq_norms_(Vector::Zero(dim)) {}

void HessianAccumulator::add(const Matrix& x) {
    if (x.rows() != hessian_.rows()) {
        throw ShapeError("HessianAccumulator: expected " + std::to_string(hessian_.rows()) + " rows, got " +
                         std::to_string(x.rows()));
    }
    hessian_.noalias() += x * x.transpose();
    sq_norms_ += x.rowwise().squaredNorm();
    n_tokens_ += static_cast<std::size_t>(x.cols());
}

std::vector<std::vector<Token>> calibration_samples(const Corpus& corpus, std::size_t n_samples, std::size_t seq_len) {
    if (seq_len == 0 || n_samples == 0) throw InputError("calibration needs n_samples >= 1 and seq_len >= 1");
    if (n_samples * seq_len > corpus.tokens.size()) {
        throw InputError("corpus too short: " + std::to_string(n_samples) + " x " + std::to_string(seq_len) +
                         " tokens requested, " + std::to_string(corpus.tokens.size()) + " available");
    }
    std::vector<std::vector<Token>> out;
    out.reserve(n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        auto first = corpus.tokens.begin() + static_cast<std::ptrdiff_t>(i * seq_len);
        out.emplace_back(first, first + static_cast<std::ptrdiff_t>(seq_len));
    }
    return out;
}

CalibStats accumulate(const WeightContainer& model, const Corpus& corpus, std::size_t n_samples, std::size_t seq_len) {
    if (seq_len > model.config.max_seq) {
        throw InputError("seq_len " + std::to_string(seq_len) + " exceeds max_seq " +
                         std::to_string(model.config.max_seq));
    }
    return accumulate_samples(model, calibration_samples(corpus, n_samples, seq_len));
}

CalibStats accumulate_samples(const WeightContainer& model, std::vector<std::vector<Token>> samples,
                              std::optional<std::size_t> only_layer) {
    if (samples.empty()) throw InputError("accumulate: no calibration samples");
    std::sort(samples.begin(), samples.end());
    const ModelConfig& c = model.config;

    struct Acc {
        HessianAccumulator in;
        Vector out_sq;
    };
    std::map<std::string, Acc> accs;
    auto wants = [&](std::size_t l) { return !only_layer || *only_layer == l; };
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        if (!wants(l)) continue;
        for (Sublayer s : kSublayers) {
            const Tensor& w = model.at(weight_name(l, s));
            accs.emplace(weight_name(l, s), Acc{HessianAccumulator(w.cols()), Vector::Zero(w.rows())});
        }
    }
    for (const auto& sample : samples) {
        ForwardTrace trace = forward(model, sample, Capture::full);
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            if (!wants(l)) continue;
            for (Sublayer s : kSublayers) {
                Acc& acc = accs.at(weight_name(l, s));
                const auto& act = trace.layers[l].at(s);
                acc.in.add(act.input);
                acc.out_sq += act.output.rowwise().squaredNorm();
            }
        }
    }
    CalibStats stats;
    for (auto& [name, acc] : accs) {
        stats.layers.emplace(name, LayerStats{acc.in.hessian(), acc.in.norms(), acc.out_sq.cwiseSqrt(), acc.in.n_tokens()});
    }
    return stats;
}

double scaled_norm(double norm, const ScaleSpec& spec, std::size_t n_tokens) {
    if (norm < 0.0) throw InputError("scaled_norm: norm must be >= 0");
    double s = spec.s;
    if (spec.mode == ScaleMode::seqlen) {
        if (n_tokens == 0) throw ConfigError("scaled_norm: seqlen mode needs n_tokens > 0");
        s = static_cast<double>(n_tokens);
    }
    if (!(s > 0.0)) throw ConfigError("scaled_norm: s must be > 0");
    return std::sqrt(norm * norm / s);
}

ShiftFit fit_activation_shift(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("fit_activation_shift: need equal, nonempty inputs");
    const double n = static_cast<double>(a.size());
    ShiftFit fit;
    for (std::size_t i = 0; i < a.size(); ++i) {
        fit.mean_x += a[i];
        fit.mean_shift += b[i] - a[i];
    }
    fit.mean_x /= n;
    fit.mean_shift /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double dx = a[i] - fit.mean_x;
        const double dy = (b[i] - a[i]) - fit.mean_shift;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx > 0.0) {
        fit.lambda = sxy / sxx;
        if (syy > 0.0) fit.r2 = (sxy * sxy) / (sxx * syy);
    }
    return fit;
}

std::vector<ShiftFit> activation_shift_report(const WeightContainer& model, const Corpus& corpus_a,
                                              const Corpus& corpus_b, std::size_t n_samples, std::size_t seq_len) {
    auto magnitudes = [&](const Corpus& corpus) {
        std::vector<Vector> per_layer(model.config.n_layers, Vector::Zero(model.config.d_model));
        std::size_t count = 0;
        auto samples = calibration_samples(corpus, n_samples, seq_len);
        std::sort(samples.begin(), samples.end());
        for (const auto& sample : samples) {
            ForwardTrace trace = forward(model, sample, Capture::full);
            for (std::size_t l = 0; l < model.config.n_layers; ++l) {
                per_layer[l] += trace.layers[l].at(Sublayer::q).input.cwiseAbs().rowwise().sum();
            }
            count += sample.size();
        }
        for (auto& v : per_layer) v /= static_cast<double>(count);
        return per_layer;
    };
    const auto mag_a = magnitudes(corpus_a);
    const auto mag_b = magnitudes(corpus_b);
    std::vector<ShiftFit> out;
    for (std::size_t l = 0; l < model.config.n_layers; ++l) {
        ShiftFit fit = fit_activation_shift(std::span<const double>(mag_a[l].data(), mag_a[l].size()),
                                            std::span<const double>(mag_b[l].data(), mag_b[l].size()));
        fit.layer = l;
        out.push_back(fit);
    }
    return out;
}

TensorFile calib_stats_to_file(const CalibStats& stats) {
    TensorFile f;
    f.metadata["kind"] = "calib_stats";
    for (const auto& [name, s] : stats.layers) {
        const std::string p = kCalibPrefix + name;
        f.metadata["n_tokens." + name] = std::to_string(s.n_tokens);
        f.tensors.push_back({p + ".hessian", s.hessian.cast<float>(), 2});
        f.tensors.push_back({p + ".in_norms", s.in_norms.cast<float>(), 1});
        f.tensors.push_back({p + ".out_norms", s.out_norms.cast<float>(), 1});
    }
    return f;
}

CalibStats calib_stats_from_file(const TensorFile& f) {
    auto kind = f.metadata.find("kind");
    if (kind == f.metadata.end() || kind->second != "calib_stats") {
        throw FormatError(FormatError::Kind::Inconsistent, "file is not a calibration-statistics cache");
    }
    CalibStats stats;
    for (const auto& [key, value] : f.metadata) {
        if (!key.starts_with("n_tokens.")) continue;
        const std::string name = key.substr(9);
        const std::string p = kCalibPrefix + name;
        const auto* h = f.find(p + ".hessian");
        const auto* in = f.find(p + ".in_norms");
        const auto* out = f.find(p + ".out_norms");
        if (!h || !in || !out) throw FormatError(FormatError::Kind::Inconsistent, "incomplete statistics for " + name);
        LayerStats s;
        s.hessian = h->value.cast<double>();
        s.in_norms = in->value.col(0).cast<double>();
        s.out_norms = out->value.col(0).cast<double>();
        s.n_tokens = std::stoull(value);
        if (s.hessian.rows() != s.hessian.cols() || s.hessian.rows() != s.in_norms.size()) {
            throw FormatError(FormatError::Kind::Inconsistent, "statistics for " + name + " have mismatched shapes");
        }
        stats.layers.emplace(name, std::move(s));
    }
    return stats;
}

}  // namespace d2p
