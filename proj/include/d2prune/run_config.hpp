#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace d2p {

/// Every pipeline parameter as dot-scoped key=value pairs. All keys exist
/// from construction with their documented defaults; an empty value means
/// "derive it" (see README).
class RunConfig {
public:
    RunConfig();

    /// Throws ConfigError for an unknown key.
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }

    std::size_t get_count(const std::string& key) const;
    double get_real(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    /// Applies "key = value" lines; '#' starts a comment, blank lines are
    /// skipped.
    void merge_text(std::string_view text);
    void merge_file(const std::filesystem::path& path);

private:
    std::map<std::string, std::string> values_;
};

}  // namespace d2p
