#include "d2prune/scoring.hpp"

#include <cmath>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

void check_norms(const Matrix& w, const LayerStats& stats) {
    if (stats.in_norms.size() != w.cols()) {
        throw ConfigError("statistics cover " + std::to_string(stats.in_norms.size()) + " inputs, weight has " +
                          std::to_string(w.cols()));
    }
}

void check_hinv(const Matrix& w, const Matrix* hinv) {
    if (!hinv) throw ConfigError("Hessian-based score requires an inverse Hessian");
    if (hinv->rows() != w.cols() || hinv->cols() != w.cols()) {
        throw ShapeError("inverse Hessian is " + shape_str(hinv->rows(), hinv->cols()) + ", weight has " +
                         std::to_string(w.cols()) + " columns");
    }
    for (Eigen::Index j = 0; j < hinv->rows(); ++j) {
        if (!((*hinv)(j, j) > 0.0)) {
            throw NumericalError("inverse Hessian diagonal at column " + std::to_string(j) + " is not positive");
        }
    }
}

}  // namespace

DualParams DualParams::from_shift(double lambda, ScaleSpec scale) {
    return DualParams{lambda, 0.5 * lambda * lambda - lambda, scale};
}

DualParams DualParams::preset(std::string_view name) {
    if (name == "default" || name == "paper-13b-80") return DualParams{1.0, 0.0, {}};
    if (name == "task-shift") return DualParams{0.5, -0.5, {}};
    throw ConfigError("unknown lambda preset '" + std::string(name) + "'");
}

std::string_view score_method_name(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::magnitude: return "magnitude";
        case ScoreMethod::wanda: return "wanda";
        case ScoreMethod::sparsegpt: return "sparsegpt";
        case ScoreMethod::d2_update: return "d2-update";
        case ScoreMethod::d2_noupdate: return "d2-noupdate";
    }
    return "?";
}

SaliencyMatrix score_magnitude(const Matrix& w) { return {w.cwiseAbs(), ScoreMethod::magnitude, std::nullopt}; }

SaliencyMatrix score_wanda(const Matrix& w, const LayerStats& stats) {
    check_norms(w, stats);
    Matrix s = w.cwiseAbs();
    for (Eigen::Index j = 0; j < w.cols(); ++j) s.col(j) *= stats.in_norms(j);
    return {std::move(s), ScoreMethod::wanda, std::nullopt};
}

SaliencyMatrix score_sparsegpt(const Matrix& w, const Matrix& hinv) {
    check_hinv(w, &hinv);
    Matrix s(w.rows(), w.cols());
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double d = hinv(j, j);
        for (Eigen::Index i = 0; i < w.rows(); ++i) s(i, j) = 0.5 * (w(i, j) * w(i, j)) / d;
    }
    return {std::move(s), ScoreMethod::sparsegpt, std::nullopt};
}

SaliencyMatrix score_d2(const Matrix& w, const LayerStats& stats, const DualParams& params, D2Variant variant,
                        const Matrix* hinv) {
    check_norms(w, stats);
    if (stats.out_norms.size() != w.rows()) {
        throw ConfigError("statistics cover " + std::to_string(stats.out_norms.size()) + " outputs, weight has " +
                          std::to_string(w.rows()));
    }
    if (variant == D2Variant::update) check_hinv(w, hinv);

    Vector sx(w.cols()), sy(w.rows());
    for (Eigen::Index j = 0; j < w.cols(); ++j) sx(j) = scaled_norm(stats.in_norms(j), params.scale, stats.n_tokens);
    for (Eigen::Index i = 0; i < w.rows(); ++i) sy(i) = scaled_norm(stats.out_norms(i), params.scale, stats.n_tokens);

    Matrix s(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        // Relative magnitude: |w| over the row's mean |w|.
        const double row_mean = w.row(i).cwiseAbs().sum() / double(w.cols());
        const double inv_mean = row_mean > 0.0 ? 1.0 / row_mean : 0.0;
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
            const double a = std::abs(w(i, j));
            const double sq = w(i, j) * w(i, j);
            const double s_x = params.lambda1 * sy(i) * (a * inv_mean) * sx(j) + params.lambda2 * sq * sx(j) * sx(j);
            const double s_w = variant == D2Variant::update ? 0.5 * sq / (*hinv)(j, j) : sq * sx(j) * sx(j);
            s(i, j) = s_x + s_w;
        }
    }
    return {std::move(s), variant == D2Variant::update ? ScoreMethod::d2_update : ScoreMethod::d2_noupdate, params};
}

SaliencyMatrix score(ScoreMethod method, const Matrix& w, const LayerStats& stats, const DualParams& params,
                     const Matrix* hinv) {
    switch (method) {
        case ScoreMethod::magnitude: return score_magnitude(w);
        case ScoreMethod::wanda: return score_wanda(w, stats);
        case ScoreMethod::sparsegpt:
            if (!hinv) throw ConfigError("sparsegpt score requires an inverse Hessian");
            return score_sparsegpt(w, *hinv);
        case ScoreMethod::d2_update: return score_d2(w, stats, params, D2Variant::update, hinv);
        case ScoreMethod::d2_noupdate: return score_d2(w, stats, params, D2Variant::noupdate, hinv);
    }
    throw ConfigError("unknown score method");
}

TensorFile saliency_to_file(const SaliencyMatrix& s, const std::string& name) {
    TensorFile f;
    f.metadata["kind"] = "saliency";
    f.metadata["method"] = std::string(score_method_name(s.method));
    if (s.params) {
        f.metadata["lambda1"] = std::to_string(s.params->lambda1);
        f.metadata["lambda2"] = std::to_string(s.params->lambda2);
        f.metadata["scale_s"] = std::to_string(s.params->scale.s);
        f.metadata["scale_mode"] = s.params->scale.mode == ScaleMode::fixed ? "fixed" : "seqlen";
    }
    f.tensors.push_back({name, s.scores.cast<float>(), 2});
    return f;
}

}  // namespace d2p
