#include "d2prune/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

bool needs_hinv(ScoreMethod m) { return m == ScoreMethod::sparsegpt || m == ScoreMethod::d2_update; }

void check_override(const PruneMask& mask, const Matrix& w) {
    if (mask.keep.rows() != w.rows() || mask.keep.cols() != w.cols()) {
        throw ShapeError("mask override is " + shape_str(mask.keep.rows(), mask.keep.cols()) + ", weight is " +
                         shape_str(w.rows(), w.cols()));
    }
}

// Running per-group keep quotas for unstructured selection inside the sweep.
class QuotaTracker {
public:
    QuotaTracker(const Matrix& w, const SparsityPattern& pattern, Grouping grouping)
        : grouping_(grouping), cols_(w.cols()) {
        if (grouping == Grouping::row) {
            quota_.assign(static_cast<std::size_t>(w.rows()), keep_count(static_cast<std::size_t>(w.cols()), pattern.p));
        } else {
            quota_.assign(1, keep_count(static_cast<std::size_t>(w.size()), pattern.p));
        }
        kept_.assign(quota_.size(), 0);
    }

    // Decides keep/drop for columns [c0, c1) given current scores, ranking
    // each group over every column >= c0.
    void decide(const Matrix& scores, Eigen::Index c0, Eigen::Index c1, MaskMatrix& keep) {
        const Eigen::Index rows = scores.rows();
        if (grouping_ == Grouping::row) {
            std::vector<double> row(static_cast<std::size_t>(cols_));
            std::vector<Eigen::Index> remaining(static_cast<std::size_t>(cols_ - c0));
            std::iota(remaining.begin(), remaining.end(), c0);
            for (Eigen::Index r = 0; r < rows; ++r) {
                for (Eigen::Index c = c0; c < cols_; ++c) row[c] = scores(r, c);
                const std::size_t need = quota_[r] - kept_[r];
                for (auto c : top_indices(row, remaining, need)) {
                    if (c < c1) {
                        keep(r, c) = 1;
                        ++kept_[r];
                    }
                }
            }
            return;
        }
        std::vector<double> flat(static_cast<std::size_t>(rows * cols_), 0.0);
        std::vector<Eigen::Index> remaining;
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = c0; c < cols_; ++c) {
                flat[r * cols_ + c] = scores(r, c);
                remaining.push_back(r * cols_ + c);
            }
        }
        for (auto f : top_indices(flat, remaining, quota_[0] - kept_[0])) {
            if (f % cols_ < c1) {
                keep(f / cols_, f % cols_) = 1;
                ++kept_[0];
            }
        }
    }

private:
    Grouping grouping_;
    Eigen::Index cols_;
    std::vector<std::size_t> quota_;
    std::vector<std::size_t> kept_;
};

}  // namespace

Vector compensate_column(const Vector& w_row, Eigen::Index q, const Matrix& hinv) {
    if (hinv.rows() != w_row.size() || hinv.cols() != w_row.size()) {
        throw ShapeError("compensate_column: inverse Hessian is " + shape_str(hinv.rows(), hinv.cols()) +
                         " for a row of " + std::to_string(w_row.size()));
    }
    if (q < 0 || q >= w_row.size()) throw InputError("compensate_column: index out of range");
    const double pivot = hinv(q, q);
    if (!(pivot > 0.0)) throw NumericalError("compensate_column: nonpositive pivot at column " + std::to_string(q));
    Vector out = w_row - (w_row(q) / pivot) * hinv.col(q);
    out(q) = 0.0;
    return out;
}

double recon_error(const Matrix& dense, const Matrix& pruned, const Matrix& hessian) {
    if (dense.rows() != pruned.rows() || dense.cols() != pruned.cols() || hessian.rows() != dense.cols() ||
        hessian.cols() != dense.cols()) {
        throw ShapeError("recon_error: inconsistent shapes");
    }
    const Matrix delta = dense - pruned;
    const double num = std::max(0.0, (delta * hessian).cwiseProduct(delta).sum());
    const double den = (dense * hessian).cwiseProduct(dense).sum();
    if (!(den > 0.0)) return std::sqrt(num);
    return std::sqrt(num / den);
}

LayerPruneResult prune_layer(const Matrix& w, const LayerStats& stats, ScoreMethod method,
                             const SparsityPattern& pattern, const DualParams& params, bool do_update,
                             const SolverOptions& options) {
    if (stats.n_tokens == 0) throw ConfigError("layer '" + options.layer_name + "' has no calibration tokens");
    if (stats.hessian.rows() != w.cols() || stats.hessian.cols() != w.cols()) {
        throw ConfigError("layer '" + options.layer_name + "': Hessian is " +
                          shape_str(stats.hessian.rows(), stats.hessian.cols()) + " for weight " +
                          shape_str(w.rows(), w.cols()));
    }
    if (options.block < 1) throw ConfigError("solver block must be >= 1");
    pattern.validate_for(w.cols());
    if (options.mask_override) check_override(*options.mask_override, w);

    const Eigen::Index cols = w.cols();
    LayerPruneResult result;
    result.updated = do_update;

    std::optional<Matrix> hinv;
    if (do_update || needs_hinv(method)) hinv = damped_inverse(stats.hessian, options.damping, options.layer_name);

    if (!do_update) {
        result.mask = options.mask_override
                          ? *options.mask_override
                          : select_mask(score(method, w, stats, params, hinv ? &*hinv : nullptr), pattern,
                                        options.grouping);
        result.updated_weight = w.cwiseProduct(result.mask.as_matrix());
        result.recon_error = recon_error(w, result.updated_weight, stats.hessian);
        return result;
    }

    // hinv = U^T U; row j of U (scaled by U_jj) is the inverse of the Hessian
    // restricted to columns >= j.
    auto factor = cholesky(*hinv);
    if (!factor) throw SingularHessianError(options.layer_name, "inverse Hessian is not positive-definite");
    const Matrix upper = factor->lower.transpose();

    Eigen::Index block = static_cast<Eigen::Index>(options.block);
    if (pattern.kind == PatternKind::nm) {
        const auto m = static_cast<Eigen::Index>(pattern.m);
        block = (block + m - 1) / m * m;
    }

    Matrix W = w;
    PruneMask mask{MaskMatrix::Zero(w.rows(), cols), pattern, options.grouping};
    if (options.mask_override) mask.keep = options.mask_override->keep;
    QuotaTracker quota(w, pattern, options.grouping);

    for (Eigen::Index i1 = 0; i1 < cols; i1 += block) {
        const Eigen::Index i2 = std::min(i1 + block, cols);
        const Eigen::Index width = i2 - i1;
        Matrix W1 = W.middleCols(i1, width);
        Matrix err1 = Matrix::Zero(w.rows(), width);

        // Weights as they stand after processing columns < j, including the
        // batch-pending corrections of the columns beyond this batch.
        auto current = [&](Eigen::Index j) {
            Matrix cur = W;
            cur.middleCols(i1, width) = W1;
            if (j > i1 && i2 < cols) {
                cur.rightCols(cols - i2) -=
                    err1.leftCols(j - i1) * upper.block(i1, i2, j - i1, cols - i2);
            }
            return cur;
        };

        if (!options.mask_override && pattern.kind == PatternKind::unstructured) {
            const Matrix scores = score(method, W, stats, params, &*hinv).scores;
            quota.decide(scores, i1, i2, mask.keep);
        }

        for (Eigen::Index j = i1; j < i2; ++j) {
            if (!options.mask_override && pattern.kind == PatternKind::nm && j % static_cast<Eigen::Index>(pattern.m) == 0) {
                const Matrix scores = score(method, current(j), stats, params, &*hinv).scores;
                const auto m = static_cast<Eigen::Index>(pattern.m);
                std::vector<double> group(pattern.m);
                std::vector<Eigen::Index> idx(pattern.m);
                std::iota(idx.begin(), idx.end(), Eigen::Index(0));
                for (Eigen::Index r = 0; r < w.rows(); ++r) {
                    for (Eigen::Index k = 0; k < m; ++k) group[k] = scores(r, j + k);
                    for (auto k : top_indices(group, idx, pattern.m - pattern.n)) mask.keep(r, j + k) = 1;
                }
            }

            const double d = upper(j, j);
            const Eigen::Index jj = j - i1;
            Vector err = Vector::Zero(w.rows());
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                if (!mask.keep(r, j)) err(r) = W1(r, jj) / d;
            }
            W1.rightCols(width - jj).noalias() -= err * upper.block(j, j, 1, i2 - j);
            for (Eigen::Index r = 0; r < w.rows(); ++r) {
                if (!mask.keep(r, j)) W1(r, jj) = 0.0;
            }
            err1.col(jj) = err;
        }

        W.middleCols(i1, width) = W1;
        if (i2 < cols) W.rightCols(cols - i2).noalias() -= err1 * upper.block(i1, i2, width, cols - i2);
    }

    result.mask = std::move(mask);
    result.updated_weight = std::move(W);
    result.recon_error = recon_error(w, result.updated_weight, stats.hessian);
    return result;
}

}  // namespace d2p
