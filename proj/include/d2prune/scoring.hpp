#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "d2prune/calibration.hpp"
#include "d2prune/numerics.hpp"

namespace d2p {

/// Coefficients of the activation terms of the dual saliency. Both are signed
/// and used verbatim, so presets carry their own signs.
struct DualParams {
    double lambda1 = 1.0;
    double lambda2 = 0.0;
    ScaleSpec scale;

    /// Coupled coefficients from a single activation-shift factor:
    /// lambda1 = lambda, lambda2 = lambda^2 / 2 - lambda.
    static DualParams from_shift(double lambda, ScaleSpec scale = {});

    /// Named presets: "default" (1, 0) and "paper-13b-80" (1, 0, best grid
    /// point of the LLaMA-2-13B 80% search), "task-shift" (0.5, -0.5).
    static DualParams preset(std::string_view name);

    bool operator==(const DualParams& o) const {
        return lambda1 == o.lambda1 && lambda2 == o.lambda2 && scale.s == o.scale.s && scale.mode == o.scale.mode;
    }
};

enum class ScoreMethod { magnitude, wanda, sparsegpt, d2_update, d2_noupdate };

std::string_view score_method_name(ScoreMethod m);

struct SaliencyMatrix {
    Matrix scores;
    ScoreMethod method = ScoreMethod::magnitude;
    std::optional<DualParams> params;
};

SaliencyMatrix score_magnitude(const Matrix& w);

/// |w_ij| * ||x_j||, unscaled norms.
SaliencyMatrix score_wanda(const Matrix& w, const LayerStats& stats);

/// w_ij^2 / (2 hinv_jj).
SaliencyMatrix score_sparsegpt(const Matrix& w, const Matrix& hinv);

enum class D2Variant { update, noupdate };

/// S = S_X + S_W with
///   S_X = l1 * s(y_i) * (|w_ij| / mean_k |w_ik|) * s(x_j) + l2 * w_ij^2 * s(x_j)^2
///   S_W = w_ij^2 / (2 hinv_jj)        (update)
///   S_W = w_ij^2 * s(x_j)^2           (noupdate)
/// where s() is scaled_norm under params.scale.
SaliencyMatrix score_d2(const Matrix& w, const LayerStats& stats, const DualParams& params, D2Variant variant,
                        const Matrix* hinv = nullptr);

/// Dispatches to the scorer for `method`; `hinv` is required by the
/// Hessian-based methods.
SaliencyMatrix score(ScoreMethod method, const Matrix& w, const LayerStats& stats, const DualParams& params,
                     const Matrix* hinv);

TensorFile saliency_to_file(const SaliencyMatrix& s, const std::string& name);

}  // namespace d2p
