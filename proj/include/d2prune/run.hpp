#pragma once

#include <filesystem>
#include <vector>

#include "d2prune/calibration.hpp"
#include "d2prune/pipeline.hpp"
#include "d2prune/report.hpp"
#include "d2prune/run_config.hpp"

namespace d2p {

/// Typed pruning options from the config (method, pattern, lambdas, scale,
/// calibration mode, block, damping, grouping).
PruneOptions prune_options(const RunConfig& cfg);

/// Calibration corpus: corpus.path if set, else markov2/uniform tokens from
/// corpus.seed (default derived from `seed`), long enough for the calibration
/// samples plus the held-out search slice.
Corpus calibration_corpus(const RunConfig& cfg, const ModelConfig& model);

/// Evaluation stream: eval.path if set, else eval.tokens tokens from a seed
/// derived from `seed`.
std::vector<Token> eval_stream(const RunConfig& cfg, const ModelConfig& model);

struct PruneRun {
    RunReport report;
    WeightContainer pruned;
};

/// Calibrate, score, mask, solve and (per prune.qkv) search; then evaluate
/// dense and pruned models. Writes nothing.
PruneRun run_prune(const RunConfig& cfg);

/// <dir>/pruned.d2pw, <dir>/report.json, <dir>/layers.csv.
void write_prune_outputs(const PruneRun& run, const std::filesystem::path& dir);

}  // namespace d2p
