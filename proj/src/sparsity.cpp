#include "d2prune/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "d2prune/errors.hpp"

namespace d2p {

SparsityPattern SparsityPattern::unstructured(double p) {
    SparsityPattern s;
    s.kind = PatternKind::unstructured;
    s.p = p;
    s.validate();
    return s;
}

SparsityPattern SparsityPattern::nm(std::size_t n, std::size_t m) {
    SparsityPattern s;
    s.kind = PatternKind::nm;
    s.n = n;
    s.m = m;
    s.validate();
    return s;
}

SparsityPattern SparsityPattern::parse(const std::string& text) {
    auto colon = text.find(':');
    try {
        if (colon != std::string::npos) {
            return nm(std::stoul(text.substr(0, colon)), std::stoul(text.substr(colon + 1)));
        }
        std::size_t used = 0;
        double p = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return unstructured(p);
    } catch (const std::invalid_argument&) {
        throw ConfigError("cannot parse sparsity pattern '" + text + "' (expected e.g. 0.5 or 2:4)");
    } catch (const std::out_of_range&) {
        throw ConfigError("sparsity pattern out of range: '" + text + "'");
    }
}

void SparsityPattern::validate() const {
    if (kind == PatternKind::unstructured) {
        if (!(p >= 0.0 && p < 1.0)) throw ConfigError("unstructured sparsity must satisfy 0 <= p < 1");
    } else if (!(n >= 1 && n < m)) {
        throw ConfigError("n:m pattern must satisfy 1 <= n < m");
    }
}

void SparsityPattern::validate_for(Eigen::Index cols) const {
    validate();
    if (kind == PatternKind::nm && cols % static_cast<Eigen::Index>(m) != 0) {
        throw InputError("input dimension " + std::to_string(cols) + " is not divisible by m=" + std::to_string(m));
    }
}

std::string SparsityPattern::str() const {
    if (kind == PatternKind::nm) return std::to_string(n) + ":" + std::to_string(m);
    std::string s = std::to_string(p);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s;
}

double SparsityPattern::target() const { return kind == PatternKind::nm ? double(n) / double(m) : p; }

std::size_t keep_count(std::size_t n, double p) {
    const double raw = (1.0 - p) * static_cast<double>(n);
    const auto k = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max<double>(1.0, double(n))));
    return std::min(k, n);
}

std::vector<Eigen::Index> top_indices(std::span<const double> scores, std::span<const Eigen::Index> candidates,
                                      std::size_t count) {
    std::vector<Eigen::Index> order(candidates.begin(), candidates.end());
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    order.resize(std::min(count, order.size()));
    return order;
}

PruneMask select_mask(const Matrix& scores, const SparsityPattern& pattern, Grouping grouping) {
    pattern.validate_for(scores.cols());
    PruneMask mask{MaskMatrix::Zero(scores.rows(), scores.cols()), pattern, grouping};
    const Eigen::Index cols = scores.cols();

    if (pattern.kind == PatternKind::nm) {
        const auto m = static_cast<Eigen::Index>(pattern.m);
        std::vector<double> group(pattern.m);
        std::vector<Eigen::Index> idx(pattern.m);
        std::iota(idx.begin(), idx.end(), Eigen::Index(0));
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            for (Eigen::Index g = 0; g < cols; g += m) {
                for (Eigen::Index j = 0; j < m; ++j) group[j] = scores(r, g + j);
                for (auto j : top_indices(group, idx, pattern.m - pattern.n)) mask.keep(r, g + j) = 1;
            }
        }
        return mask;
    }

    if (grouping == Grouping::layer) {
        // Row-major flattening so ties resolve by (row, col).
        std::vector<double> flat(static_cast<std::size_t>(scores.size()));
        for (Eigen::Index r = 0; r < scores.rows(); ++r)
            for (Eigen::Index c = 0; c < cols; ++c) flat[r * cols + c] = scores(r, c);
        std::vector<Eigen::Index> idx(flat.size());
        std::iota(idx.begin(), idx.end(), Eigen::Index(0));
        for (auto f : top_indices(flat, idx, keep_count(flat.size(), pattern.p))) mask.keep(f / cols, f % cols) = 1;
        return mask;
    }

    const std::size_t keep = keep_count(static_cast<std::size_t>(cols), pattern.p);
    std::vector<double> row(static_cast<std::size_t>(cols));
    std::vector<Eigen::Index> idx(row.size());
    std::iota(idx.begin(), idx.end(), Eigen::Index(0));
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) row[c] = scores(r, c);
        for (auto c : top_indices(row, idx, keep)) mask.keep(r, c) = 1;
    }
    return mask;
}

PruneMask select_mask(const SaliencyMatrix& s, const SparsityPattern& pattern, Grouping grouping) {
    return select_mask(s.scores, pattern, grouping);
}

SparsityReport verify(const PruneMask& mask) {
    SparsityReport report;
    const auto rows = mask.keep.rows();
    const auto cols = mask.keep.cols();
    const auto total = static_cast<double>(mask.keep.size());
    std::size_t kept_total = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
        std::size_t kept = 0;
        for (Eigen::Index c = 0; c < cols; ++c) kept += mask.keep(r, c) ? 1 : 0;
        kept_total += kept;
        report.per_row.push_back(cols ? 1.0 - double(kept) / double(cols) : 0.0);

        if (mask.pattern.kind == PatternKind::nm) {
            const auto m = static_cast<Eigen::Index>(mask.pattern.m);
            const std::size_t expected = mask.pattern.m - mask.pattern.n;
            if (cols % m != 0) {
                report.violations.push_back({r, 0, kept, 0});
                continue;
            }
            for (Eigen::Index g = 0; g < cols; g += m) {
                std::size_t in_group = 0;
                for (Eigen::Index j = 0; j < m; ++j) in_group += mask.keep(r, g + j) ? 1 : 0;
                if (in_group != expected) report.violations.push_back({r, g / m, in_group, expected});
            }
        } else if (mask.grouping == Grouping::row) {
            const std::size_t expected = keep_count(static_cast<std::size_t>(cols), mask.pattern.p);
            if (kept != expected) report.violations.push_back({r, 0, kept, expected});
        }
    }
    if (mask.pattern.kind == PatternKind::unstructured && mask.grouping == Grouping::layer) {
        const std::size_t expected = keep_count(static_cast<std::size_t>(mask.keep.size()), mask.pattern.p);
        if (kept_total != expected) report.violations.push_back({-1, 0, kept_total, expected});
    }
    report.global = total > 0 ? 1.0 - double(kept_total) / total : 0.0;
    return report;
}

TensorFile mask_to_file(const PruneMask& mask, const std::string& name) {
    TensorFile f;
    f.metadata["kind"] = "mask";
    f.metadata["pattern"] = mask.pattern.str();
    f.metadata["grouping"] = mask.grouping == Grouping::row ? "row" : "layer";
    f.tensors.push_back({name, mask.keep.cast<float>(), 2});
    return f;
}

}  // namespace d2p
