#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "d2prune/attention.hpp"
#include "d2prune/evaluation.hpp"
#include "d2prune/pipeline.hpp"

namespace d2p {

inline constexpr std::string_view kToolkitVersion = "0.1.0";
inline constexpr std::string_view kReportSchema = "d2prune-report/1";
inline constexpr std::string_view kLayersCsvFormat = "d2prune-layers-csv/1";

struct RunReport {
    std::map<std::string, std::string> config;  ///< every resolved RunConfig key
    std::vector<SublayerRecord> layers;
    double global_sparsity = 0.0;
    std::size_t violations = 0;
    AttnFidelity attention;
    EvalResult dense_eval;
    EvalResult pruned_eval;
    std::string qkv_mode;
    QkvUpdateConfig qkv;
    std::vector<SearchRow> search;            ///< uniform candidates (dynamic mode)
    std::vector<SearchRow> search_reference;  ///< "all" / "none" reference rows
    std::vector<std::array<double, 3>> outlier_ratios;
    std::string model_digest;   ///< SHA-256 of the dense D2PW bytes
    std::string pruned_digest;  ///< SHA-256 of the pruned D2PW bytes
    std::string toolkit_version = std::string(kToolkitVersion);
};

/// Deterministic JSON (sorted keys, 2-space indent) with a trailing "digest"
/// holding the SHA-256 of the same document without it.
std::string report_to_json(const RunReport& report);

/// Parses report_to_json output. Throws FormatError on schema mismatch or a
/// digest that does not match the content.
RunReport parse_report(std::string_view json);

/// One row per (layer, sublayer); kl is the layer's mean head KL and rmse its
/// attention-block RMSE.
std::string layers_csv(const RunReport& report);

/// Writes <dir>/layers.csv, then <dir>/report.json.
void emit_report(const RunReport& report, const std::filesystem::path& dir);

}  // namespace d2p
