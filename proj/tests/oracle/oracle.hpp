#pragma once

// Brute-force references for the test suite. Nothing here includes toolkit
// headers: the only shared vocabulary is Eigen's dense matrix.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace oracle {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// Gauss-Jordan inverse with partial pivoting. Throws on a zero pivot.
Mat small_inverse(const Mat& a);

/// Textbook Cholesky, A = L L^T. Throws if A is not positive-definite.
Mat cholesky_lower(const Mat& a);

/// argmin (w - w0)^T H (w - w0) subject to w_i = 0 for i in zero_set, by a
/// direct solve on the free coordinates.
Vec constrained_ls(const Vec& w0, const Mat& h, const std::vector<int>& zero_set);

/// 1/2 (w - w0)^T H (w - w0).
double quad_error(const Vec& w, const Vec& w0, const Mat& h);

struct BestMask {
    std::vector<bool> keep;
    double error = 0.0;
};

/// Enumerates every mask keeping `keep` of n <= 12 coordinates and returns
/// the one with the lowest compensated error (ties: first in lexicographic
/// enumeration order).
BestMask exhaustive_best_mask(const Vec& w_row, const Mat& h, int keep);

/// Dual saliency written out term by term with norms scaled as
/// sqrt(norm^2 / s). `hinv` is only read for the update variant.
Mat reference_score(const Mat& w, const Vec& in_norms, const Vec& out_norms, double lambda1, double lambda2, double s,
                    bool update, const Mat& hinv);

/// |{w_ij : |w_ij| > mean |w|}| / size, with the mean taken in binary128.
double outlier_ratio(const Mat& w);

struct RefLayer {
    Vec ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Mat wq, wk, wv, wo, wup, wdown;
};

struct RefModel {
    int n_heads = 1;
    Mat tok_embed, pos_embed;  ///< vocab x d, max_seq x d
    std::vector<RefLayer> layers;
    Vec lnf_gain, lnf_bias;
    Mat lm_head;  ///< vocab x d
};

/// Pre-norm causal decoder written one scalar at a time: LayerNorm (eps
/// 1e-5), per-head causal softmax attention, residual, LayerNorm, erf-GELU
/// MLP, residual, final LayerNorm and head. Returns vocab x T logits.
Mat reference_logits(const RefModel& m, const std::vector<int>& tokens);

struct SweepResult {
    Mat weight;
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> keep;
};

/// Column sweep with eager (unbatched) error propagation. At the start of
/// each block of `block` columns, every row ranks its unprocessed columns by
/// w^2 / (2 hinv_jj) on the current weights and keeps its remaining quota;
/// decisions are committed for the block's columns only.
SweepResult reference_sparsegpt(const Mat& w, const Mat& h, double p, int block, double damping);

}  // namespace oracle
