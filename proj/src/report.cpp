#include "d2prune/report.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "d2prune/errors.hpp"
#include "d2prune/tensor_io.hpp"

namespace d2p {

using nlohmann::json;

namespace {

json eval_json(const EvalResult& e) {
    json j;
    j["ppl"] = e.ppl;
    j["logit_kl"] = e.logit_kl ? json(*e.logit_kl) : json(nullptr);
    j["n_tokens"] = e.n_tokens;
    j["windows"] = e.windows;
    return j;
}

EvalResult eval_from(const json& j) {
    EvalResult e;
    e.ppl = j.at("ppl").get<double>();
    if (!j.at("logit_kl").is_null()) e.logit_kl = j.at("logit_kl").get<double>();
    e.n_tokens = j.at("n_tokens").get<std::size_t>();
    e.windows = j.at("windows").get<std::size_t>();
    return e;
}

json rows_json(const std::vector<SearchRow>& rows) {
    json a = json::array();
    for (const auto& r : rows) a.push_back({{"frozen", std::string(frozen_name(r.frozen))}, {"ppl", r.ppl}});
    return a;
}

std::vector<SearchRow> rows_from(const json& a) {
    std::vector<SearchRow> out;
    for (const auto& r : a) out.push_back({parse_frozen(r.at("frozen").get<std::string>()), r.at("ppl").get<double>()});
    return out;
}

Sublayer parse_sublayer(const std::string& name) {
    for (auto s : kSublayers)
        if (sublayer_name(s) == name) return s;
    throw FormatError(FormatError::Kind::Inconsistent, "unknown sublayer '" + name + "'");
}

ScoreMethod parse_score(const std::string& name) {
    for (auto m : {ScoreMethod::magnitude, ScoreMethod::wanda, ScoreMethod::sparsegpt, ScoreMethod::d2_update,
                   ScoreMethod::d2_noupdate})
        if (score_method_name(m) == name) return m;
    throw FormatError(FormatError::Kind::Inconsistent, "unknown score method '" + name + "'");
}

json body_json(const RunReport& r) {
    json j;
    j["schema"] = std::string(kReportSchema);
    j["toolkit_version"] = r.toolkit_version;
    j["config"] = r.config;

    json layers = json::array();
    for (const auto& rec : r.layers) {
        layers.push_back({{"layer", rec.layer},
                          {"sublayer", std::string(sublayer_name(rec.sublayer))},
                          {"score", std::string(score_method_name(rec.score))},
                          {"updated", rec.updated},
                          {"sparsity", rec.sparsity},
                          {"recon_error", rec.recon_error},
                          {"violations", rec.violations}});
    }
    j["layers"] = layers;
    j["sparsity"] = {{"global", r.global_sparsity}, {"violations", r.violations}};

    json attn;
    attn["kl"] = r.attention.kl;
    attn["rmse"] = r.attention.rmse;
    attn["mean_kl"] = r.attention.mean_kl;
    attn["mean_rmse"] = r.attention.mean_rmse;
    j["attention"] = attn;

    j["eval"] = {{"dense", eval_json(r.dense_eval)}, {"pruned", eval_json(r.pruned_eval)}};

    json qkv;
    qkv["mode"] = r.qkv_mode;
    json frozen = json::array();
    for (auto f : r.qkv.layers) frozen.push_back(std::string(frozen_name(f)));
    qkv["frozen"] = frozen;
    qkv["search"] = rows_json(r.search);
    qkv["search_reference"] = rows_json(r.search_reference);
    qkv["outlier_ratios"] = r.outlier_ratios;
    j["qkv"] = qkv;

    j["model_digest"] = r.model_digest;
    j["pruned_digest"] = r.pruned_digest;
    return j;
}

std::string csv_real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

std::string report_to_json(const RunReport& report) {
    json j = body_json(report);
    j["digest"] = sha256_hex(j.dump());
    return j.dump(2) + "\n";
}

RunReport parse_report(std::string_view text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(FormatError::Kind::Inconsistent, std::string("report is not valid JSON: ") + e.what());
    }
    if (!j.is_object() || j.value("schema", "") != kReportSchema) {
        throw FormatError(FormatError::Kind::VersionMismatch, "report schema is not " + std::string(kReportSchema));
    }
    const std::string digest = j.value("digest", "");
    j.erase("digest");
    if (sha256_hex(j.dump()) != digest) throw FormatError(FormatError::Kind::Inconsistent, "report digest mismatch");

    try {
        RunReport r;
        r.toolkit_version = j.at("toolkit_version").get<std::string>();
        r.config = j.at("config").get<std::map<std::string, std::string>>();
        for (const auto& l : j.at("layers")) {
            r.layers.push_back({l.at("layer").get<std::size_t>(), parse_sublayer(l.at("sublayer").get<std::string>()),
                                parse_score(l.at("score").get<std::string>()), l.at("updated").get<bool>(),
                                l.at("sparsity").get<double>(), l.at("recon_error").get<double>(),
                                l.at("violations").get<std::size_t>()});
        }
        r.global_sparsity = j.at("sparsity").at("global").get<double>();
        r.violations = j.at("sparsity").at("violations").get<std::size_t>();
        const auto& a = j.at("attention");
        r.attention.kl = a.at("kl").get<std::vector<std::vector<double>>>();
        r.attention.rmse = a.at("rmse").get<std::vector<double>>();
        r.attention.mean_kl = a.at("mean_kl").get<double>();
        r.attention.mean_rmse = a.at("mean_rmse").get<double>();
        r.dense_eval = eval_from(j.at("eval").at("dense"));
        r.pruned_eval = eval_from(j.at("eval").at("pruned"));
        const auto& q = j.at("qkv");
        r.qkv_mode = q.at("mode").get<std::string>();
        for (const auto& f : q.at("frozen")) r.qkv.layers.push_back(parse_frozen(f.get<std::string>()));
        r.search = rows_from(q.at("search"));
        r.search_reference = rows_from(q.at("search_reference"));
        r.outlier_ratios = q.at("outlier_ratios").get<std::vector<std::array<double, 3>>>();
        r.model_digest = j.at("model_digest").get<std::string>();
        r.pruned_digest = j.at("pruned_digest").get<std::string>();
        return r;
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::Inconsistent, std::string("malformed report: ") + e.what());
    }
}

std::string layers_csv(const RunReport& report) {
    std::string out = "# format: " + std::string(kLayersCsvFormat) + "\n";
    out += "layer,sublayer,method,sparsity,recon_error,kl,rmse\n";
    for (const auto& rec : report.layers) {
        double kl = std::nan(""), rmse = std::nan("");
        if (rec.layer < report.attention.kl.size() && !report.attention.kl[rec.layer].empty()) {
            const auto& heads = report.attention.kl[rec.layer];
            kl = 0.0;
            for (double x : heads) kl += x;
            kl /= double(heads.size());
        }
        if (rec.layer < report.attention.rmse.size()) rmse = report.attention.rmse[rec.layer];
        out += std::to_string(rec.layer) + "," + std::string(sublayer_name(rec.sublayer)) + "," +
               std::string(score_method_name(rec.score)) + "," + csv_real(rec.sparsity) + "," +
               csv_real(rec.recon_error) + "," + csv_real(kl) + "," + csv_real(rmse) + "\n";
    }
    return out;
}

void emit_report(const RunReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
    const std::string json_text = report_to_json(report);
    const std::string csv_text = layers_csv(report);
    write_file(dir / "layers.csv", std::vector<std::uint8_t>(csv_text.begin(), csv_text.end()));
    write_file(dir / "report.json", std::vector<std::uint8_t>(json_text.begin(), json_text.end()));
}

}  // namespace d2p
