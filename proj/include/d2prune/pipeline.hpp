#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "d2prune/calibration.hpp"
#include "d2prune/model.hpp"
#include "d2prune/scoring.hpp"
#include "d2prune/solver.hpp"
#include "d2prune/sparsity.hpp"

namespace d2p {

enum class Method { magnitude, wanda, sparsegpt, d2prune };

std::string_view method_name(Method m);
Method parse_method(std::string_view text);

/// Which of q/k/v a layer prunes without weight update.
enum class Frozen { none, q, k, v, all };

std::string_view frozen_name(Frozen f);
Frozen parse_frozen(std::string_view text);

struct QkvUpdateConfig {
    std::vector<Frozen> layers;

    static QkvUpdateConfig uniform(std::size_t n_layers, Frozen f);
    bool is_uniform() const;
    /// True if sublayer `s` of `layer` takes the no-update path.
    bool frozen(std::size_t layer, Sublayer s) const;

    bool operator==(const QkvUpdateConfig&) const = default;
};

enum class CalibMode { oneshot, sequential };

struct PruneOptions {
    Method method = Method::d2prune;
    SparsityPattern pattern = SparsityPattern::unstructured(0.5);
    DualParams params;
    CalibMode calib = CalibMode::sequential;
    std::size_t block = 16;
    double damping = kDefaultDamping;
    Grouping grouping = Grouping::row;
};

struct SublayerRecord {
    std::size_t layer = 0;
    Sublayer sublayer = Sublayer::q;
    ScoreMethod score = ScoreMethod::magnitude;
    bool updated = false;
    double sparsity = 0.0;
    double recon_error = 0.0;
    std::size_t violations = 0;
};

struct PruneOutcome {
    WeightContainer model;
    std::vector<SublayerRecord> records;  ///< layer-major, sublayers in sweep order
    std::map<std::string, PruneMask> masks;
    /// Statistics each sublayer was actually pruned with.
    CalibStats stats;
};

/// Score method and update flag used for one sublayer.
std::pair<ScoreMethod, bool> sublayer_plan(Method method, const QkvUpdateConfig& qkv, std::size_t layer, Sublayer s);

/// Prunes every linear sublayer of `dense`. In sequential mode each block's
/// statistics are re-collected on the model whose earlier blocks are already
/// pruned; output norms always come from the dense model. The q/k/v
/// configuration only affects the d2prune method.
PruneOutcome prune_model(const WeightContainer& dense, const std::vector<std::vector<Token>>& samples,
                         const QkvUpdateConfig& qkv, const PruneOptions& options);

}  // namespace d2p
