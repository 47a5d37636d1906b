#include "d2prune/run_config.hpp"

#include <charconv>

#include "d2prune/errors.hpp"
#include "d2prune/tensor_io.hpp"

namespace d2p {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace

RunConfig::RunConfig() {
    values_ = {
        {"seed", "7"},
        {"model.path", ""},
        {"corpus.path", ""},
        {"corpus.seed", ""},
        {"corpus.generator", "markov2"},
        {"calib.samples", "128"},
        {"calib.seq_len", "64"},
        {"calib.mode", "sequential"},
        {"prune.method", "d2prune"},
        {"prune.pattern", "0.5"},
        {"prune.qkv", "dynamic"},
        {"prune.block", "16"},
        {"prune.damping", "0.01"},
        {"prune.grouping", "row"},
        {"dual.preset", "default"},
        {"dual.lambda1", ""},
        {"dual.lambda2", ""},
        {"dual.scale_mode", "auto"},
        {"dual.s", "1500"},
        {"eval.path", ""},
        {"eval.tokens", "4096"},
        {"eval.window", "64"},
        {"search.windows", "4"},
        {"search.reference_rows", "true"},
        {"attn.samples", "4"},
        {"output.dir", "d2prune-out"},
    };
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown configuration key '" + key + "'");
    return it->second;
}

std::size_t RunConfig::get_count(const std::string& key) const {
    const auto& v = get(key);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError("'" + key + "' must be a nonnegative integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
    const auto& v = get(key);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError("'" + key + "' must be an unsigned integer, got '" + v + "'");
    }
    return out;
}

double RunConfig::get_real(const std::string& key) const {
    const auto& v = get(key);
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        throw ConfigError("'" + key + "' must be a number, got '" + v + "'");
    }
    return out;
}

bool RunConfig::get_bool(const std::string& key) const {
    const auto& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("'" + key + "' must be true or false, got '" + v + "'");
}

void RunConfig::merge_text(std::string_view text) {
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
    }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    merge_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace d2p
