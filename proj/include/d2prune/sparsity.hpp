#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "d2prune/numerics.hpp"
#include "d2prune/scoring.hpp"
#include "d2prune/tensor_io.hpp"

namespace d2p {

enum class PatternKind { unstructured, nm };

struct SparsityPattern {
    PatternKind kind = PatternKind::unstructured;
    double p = 0.5;     ///< pruned fraction (unstructured)
    std::size_t n = 2;  ///< pruned per group (nm)
    std::size_t m = 4;  ///< group width along the input dimension (nm)

    static SparsityPattern unstructured(double p);
    static SparsityPattern nm(std::size_t n, std::size_t m);
    /// "0.7" or "2:4".
    static SparsityPattern parse(const std::string& text);

    void validate() const;
    void validate_for(Eigen::Index cols) const;
    std::string str() const;
    /// Fraction of weights this pattern removes (nominal).
    double target() const;

    bool operator==(const SparsityPattern&) const = default;
};

/// Comparison group for unstructured selection.
enum class Grouping { row, layer };

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct PruneMask {
    MaskMatrix keep;  ///< 1 = keep
    SparsityPattern pattern;
    Grouping grouping = Grouping::row;

    Matrix as_matrix() const { return keep.cast<double>(); }
};

/// ceil((1 - p) * n), guarded against representation error in p.
std::size_t keep_count(std::size_t n, double p);

/// Indices of the `count` highest scores among `candidates`; ties go to the
/// lower index.
std::vector<Eigen::Index> top_indices(std::span<const double> scores, std::span<const Eigen::Index> candidates,
                                      std::size_t count);

PruneMask select_mask(const Matrix& scores, const SparsityPattern& pattern, Grouping grouping = Grouping::row);
PruneMask select_mask(const SaliencyMatrix& s, const SparsityPattern& pattern, Grouping grouping = Grouping::row);

struct MaskViolation {
    Eigen::Index row = 0;
    Eigen::Index group = 0;  ///< m-block index for nm; 0 for unstructured
    std::size_t kept = 0;
    std::size_t expected = 0;
};

struct SparsityReport {
    double global = 0.0;
    std::vector<double> per_row;
    std::vector<MaskViolation> violations;

    bool ok() const { return violations.empty(); }
};

SparsityReport verify(const PruneMask& mask);

TensorFile mask_to_file(const PruneMask& mask, const std::string& name);

}  // namespace d2p
