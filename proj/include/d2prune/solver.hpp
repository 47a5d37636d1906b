#pragma once

#include <optional>
#include <string>

#include "d2prune/calibration.hpp"
#include "d2prune/scoring.hpp"
#include "d2prune/sparsity.hpp"

namespace d2p {

struct LayerPruneResult {
    Matrix updated_weight;
    PruneMask mask;
    /// ||(W - W') X||_F / ||W X||_F over the calibration activations.
    double recon_error = 0.0;
    bool updated = false;
};

struct SolverOptions {
    /// Columns per lazy-update batch. For n:m patterns it is rounded up to a
    /// multiple of m so no group straddles two batches.
    std::size_t block = 16;
    double damping = kDefaultDamping;
    Grouping grouping = Grouping::row;
    /// Prune exactly these positions instead of selecting from scores.
    std::optional<PruneMask> mask_override;
    std::string layer_name = "<unnamed>";
};

/// Zeroes coordinate q of one weight row and applies the optimal
/// compensation -(w_q / hinv_qq) * hinv[:, q] to the rest.
Vector compensate_column(const Vector& w_row, Eigen::Index q, const Matrix& hinv);

/// Normalized reconstruction error from the (undamped) Hessian:
/// sqrt(tr(D H D^T) / tr(W H W^T)) with D = dense - pruned.
double recon_error(const Matrix& dense, const Matrix& pruned, const Matrix& hessian);

/// Prunes one linear layer.
///
/// With `do_update` the layer is swept left to right in batches of
/// `options.block` columns. At the start of each batch the per-group masks
/// for that batch are chosen from scores of the current, already compensated
/// weights (unstructured: each row keeps its exact quota, ranked over all of
/// its not-yet-processed columns; n:m: chosen at the start of each group). Each
/// pruned weight is zeroed and its error propagated to the remaining columns
/// through the upper Cholesky factor of the damped inverse Hessian.
///
/// Without `do_update` the mask is chosen once and survivors are untouched.
LayerPruneResult prune_layer(const Matrix& w, const LayerStats& stats, ScoreMethod method,
                             const SparsityPattern& pattern, const DualParams& params, bool do_update,
                             const SolverOptions& options = {});

}  // namespace d2p
