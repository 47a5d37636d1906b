#include "d2prune/attention.hpp"

#include <cmath>

#include "d2prune/errors.hpp"
#include "d2prune/evaluation.hpp"

namespace d2p {

AttnFidelity attn_kl(const ForwardTrace& dense, const ForwardTrace& pruned) {
    if (dense.layers.size() != pruned.layers.size()) {
        throw InputError("attn_kl: traces have " + std::to_string(dense.layers.size()) + " and " +
                         std::to_string(pruned.layers.size()) + " layers");
    }
    if (dense.layers.empty()) throw InputError("attn_kl: traces carry no attention (capture the full trace)");
    AttnFidelity f;
    double kl_total = 0.0, rmse_total = 0.0;
    std::size_t heads_total = 0;
    for (std::size_t l = 0; l < dense.layers.size(); ++l) {
        const auto& a = dense.layers[l];
        const auto& b = pruned.layers[l];
        if (a.attention.size() != b.attention.size()) throw InputError("attn_kl: head count differs in layer " + std::to_string(l));
        std::vector<double> per_head;
        for (std::size_t h = 0; h < a.attention.size(); ++h) {
            const Matrix& p = a.attention[h];
            const Matrix& q = b.attention[h];
            if (p.rows() != q.rows() || p.cols() != q.cols() || p.rows() != p.cols()) {
                throw InputError("attn_kl: attention maps are " + shape_str(p.rows(), p.cols()) + " and " +
                                 shape_str(q.rows(), q.cols()));
            }
            double sum = 0.0;
            std::vector<double> pr, qr;
            for (Eigen::Index i = 0; i < p.rows(); ++i) {
                pr.resize(static_cast<std::size_t>(i + 1));
                qr.resize(static_cast<std::size_t>(i + 1));
                for (Eigen::Index j = 0; j <= i; ++j) {
                    pr[j] = p(i, j);
                    qr[j] = q(i, j);
                }
                sum += floored_kl(pr, qr);
            }
            per_head.push_back(p.rows() ? sum / double(p.rows()) : 0.0);
            kl_total += per_head.back();
            ++heads_total;
        }
        f.kl.push_back(std::move(per_head));

        if (a.attn_out.rows() != b.attn_out.rows() || a.attn_out.cols() != b.attn_out.cols()) {
            throw InputError("attn_kl: attention outputs differ in shape in layer " + std::to_string(l));
        }
        const double n = double(a.attn_out.size());
        f.rmse.push_back(n > 0 ? std::sqrt((a.attn_out - b.attn_out).squaredNorm() / n) : 0.0);
        rmse_total += f.rmse.back();
    }
    f.mean_kl = heads_total ? kl_total / double(heads_total) : 0.0;
    f.mean_rmse = rmse_total / double(f.rmse.size());
    return f;
}

AttnFidelity attn_fidelity(const WeightContainer& dense, const WeightContainer& pruned,
                           const std::vector<std::vector<Token>>& inputs) {
    if (inputs.empty()) throw InputError("attn_fidelity: no input sequences");
    AttnFidelity acc;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto f = attn_kl(forward(dense, inputs[i], Capture::full), forward(pruned, inputs[i], Capture::full));
        if (i == 0) {
            acc = f;
            continue;
        }
        for (std::size_t l = 0; l < f.kl.size(); ++l) {
            for (std::size_t h = 0; h < f.kl[l].size(); ++h) acc.kl[l][h] += f.kl[l][h];
            acc.rmse[l] += f.rmse[l];
        }
        acc.mean_kl += f.mean_kl;
        acc.mean_rmse += f.mean_rmse;
    }
    const double n = double(inputs.size());
    for (auto& row : acc.kl)
        for (auto& x : row) x /= n;
    for (auto& x : acc.rmse) x /= n;
    acc.mean_kl /= n;
    acc.mean_rmse /= n;
    return acc;
}

double outlier_ratio(const Matrix& w) {
    if (w.size() == 0) throw InputError("outlier_ratio: empty matrix");
    // |w| > mean  <=>  N |w| > sum |w|, evaluated in binary128 where both
    // sides are exact for any realistic exponent spread. A rounded double mean
    // can land just below a constant matrix's value and count every entry.
    using Wide = __float128;
    Wide total = 0;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) total += Wide(std::abs(w(i, j)));
    const Wide n = Wide(static_cast<double>(w.size()));
    std::size_t count = 0;
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) count += n * Wide(std::abs(w(i, j))) > total ? 1 : 0;
    return double(count) / double(w.size());
}

std::vector<std::array<double, 3>> qkv_outlier_ratios(const WeightContainer& model) {
    std::vector<std::array<double, 3>> out;
    for (std::size_t l = 0; l < model.config.n_layers; ++l) {
        out.push_back({outlier_ratio(model.weight(l, Sublayer::q)), outlier_ratio(model.weight(l, Sublayer::k)),
                       outlier_ratio(model.weight(l, Sublayer::v))});
    }
    return out;
}

std::size_t select_min_ppl(std::span<const double> ppl) {
    if (ppl.empty()) throw InputError("select_min_ppl: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < ppl.size(); ++i)
        if (ppl[i] < ppl[best]) best = i;
    return best;
}

std::size_t select_max_ratio(std::span<const double> ratio) {
    if (ratio.empty()) throw InputError("select_max_ratio: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < ratio.size(); ++i)
        if (ratio[i] > ratio[best]) best = i;
    return best;
}

UniformSearch search_uniform(const WeightContainer& dense, const std::vector<std::vector<Token>>& samples,
                             std::span<const Token> eval_stream, std::size_t window, const PruneOptions& options,
                             bool reference_rows) {
    if (options.method != Method::d2prune) throw ConfigError("the q/k/v search applies to the d2prune method only");
    const std::size_t n_layers = dense.config.n_layers;
    UniformSearch s;
    std::vector<double> ppl;
    std::vector<PruneOutcome> outcomes;
    for (Frozen f : {Frozen::q, Frozen::k, Frozen::v}) {
        auto outcome = prune_model(dense, samples, QkvUpdateConfig::uniform(n_layers, f), options);
        const double p = perplexity(outcome.model, eval_stream, window).ppl;
        s.candidates.push_back({f, p});
        ppl.push_back(p);
        outcomes.push_back(std::move(outcome));
    }
    const std::size_t best = select_min_ppl(ppl);
    s.chosen = s.candidates[best].frozen;
    s.config = QkvUpdateConfig::uniform(n_layers, s.chosen);
    s.outcome = std::move(outcomes[best]);

    if (reference_rows) {
        for (Frozen f : {Frozen::all, Frozen::none}) {
            auto outcome = prune_model(dense, samples, QkvUpdateConfig::uniform(n_layers, f), options);
            s.reference.push_back({f, perplexity(outcome.model, eval_stream, window).ppl});
        }
    }
    return s;
}

QkvUpdateConfig search_nonuniform(const WeightContainer& model) {
    QkvUpdateConfig cfg;
    for (const auto& r : qkv_outlier_ratios(model)) {
        static constexpr std::array<Frozen, 3> order{Frozen::q, Frozen::k, Frozen::v};
        cfg.layers.push_back(order[select_max_ratio(r)]);
    }
    return cfg;
}

TensorFile attention_surfaces(const ForwardTrace& trace, const std::string& prefix) {
    TensorFile f;
    f.metadata["kind"] = "attention";
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
        for (std::size_t h = 0; h < trace.layers[l].attention.size(); ++h) {
            f.tensors.push_back({prefix + "layers." + std::to_string(l) + ".head." + std::to_string(h),
                                 trace.layers[l].attention[h].cast<float>(), 2});
        }
    }
    return f;
}

}  // namespace d2p
