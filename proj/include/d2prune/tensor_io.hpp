#pragma once

// D2PW container: the on-disk format for weights, masks, saliency exports,
// cached calibration statistics and attention surfaces.
//
//   magic        "D2PW" (4 bytes)
//   version      u32 LE
//   metadata     u32 LE byte length, then UTF-8 "key=value\n" lines
//   tensors      repeated until EOF:
//                  name   u32 LE byte length, UTF-8 bytes
//                  rank   u32 LE
//                  dims   u64 LE each
//                  data   row-major f32 LE
//
// The metadata always carries `tensor_count`, so a file cut exactly at a
// tensor boundary is still detected.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace d2p {

/// Stored tensor: single precision, row-major, matching the file layout.
using Tensor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::uint32_t kD2pwVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor value;
    /// Rank written to disk; 1 means `value` is a single column.
    std::uint32_t rank = 2;

    /// Bitwise comparison (distinguishes -0.0 from 0.0).
    bool operator==(const NamedTensor& other) const {
        return name == other.name && rank == other.rank && value.rows() == other.value.rows() &&
               value.cols() == other.value.cols() &&
               std::memcmp(value.data(), other.value.data(), sizeof(float) * value.size()) == 0;
    }
};

struct TensorFile {
    std::map<std::string, std::string> metadata;
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const;
    bool operator==(const TensorFile& other) const = default;
};

std::vector<std::uint8_t> encode_d2pw(const TensorFile& file);
TensorFile decode_d2pw(const std::vector<std::uint8_t>& bytes);

void save_d2pw(const TensorFile& file, const std::filesystem::path& path);
TensorFile load_d2pw(const std::filesystem::path& path);

/// Raw little-endian u32 token stream (no header).
void save_tokens(const std::vector<std::uint32_t>& tokens, const std::filesystem::path& path);
std::vector<std::uint32_t> load_tokens(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

/// Hex SHA-256 of a byte buffer.
std::string sha256_hex(const std::vector<std::uint8_t>& bytes);
std::string sha256_hex(const std::string& text);

}  // namespace d2p
