#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "d2prune/numerics.hpp"
#include "d2prune/tensor_io.hpp"

namespace d2p {

using Token = std::uint32_t;

/// Splitmix-based sub-seed derivation: every random stream in the toolkit is
/// `derive_seed(global, "<purpose>")` so components can be varied alone.
std::uint64_t derive_seed(std::uint64_t base, std::string_view name);

struct ModelConfig {
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t d_model = 32;
    std::size_t d_ff = 128;
    std::size_t vocab = 64;
    std::size_t max_seq = 64;

    std::size_t head_dim() const { return d_model / n_heads; }
    /// Throws ConfigError naming the violated constraint.
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

/// The six prunable linear maps of a decoder block, in sweep order.
enum class Sublayer { q, k, v, o, up, down };
inline constexpr std::array<Sublayer, 6> kSublayers{Sublayer::q, Sublayer::k,  Sublayer::v,
                                                     Sublayer::o, Sublayer::up, Sublayer::down};

std::string_view sublayer_name(Sublayer s);
/// "layers.<layer>.w_q" and friends.
std::string weight_name(std::size_t layer, Sublayer s);

/// Every tensor of the toy decoder, stored in single precision exactly as
/// serialized. Linear weights are (d_out x d_in): y = W x.
class WeightContainer {
public:
    ModelConfig config;
    std::map<std::string, Tensor> tensors;

    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);

    Matrix weight(std::size_t layer, Sublayer s) const;
    /// Stores `w` rounded to f32; shape must match.
    void set_weight(std::size_t layer, Sublayer s, const Matrix& w);

    /// Checks the tensor set against `config` (names, shapes, finiteness).
    void validate() const;

    bool operator==(const WeightContainer& other) const;
};

/// (rows, cols) of every tensor a container with this config must hold.
std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected_shapes(const ModelConfig& config);

enum class WeightStructure { random, lowrank_noise };

WeightContainer generate_weights(const ModelConfig& config, std::uint64_t seed,
                                 WeightStructure structure = WeightStructure::random);

TensorFile to_tensor_file(const WeightContainer& w);
WeightContainer from_tensor_file(const TensorFile& file);
void save(const WeightContainer& w, const std::filesystem::path& path);
WeightContainer load(const std::filesystem::path& path);

enum class Capture { logits_only, full };

struct SublayerActivations {
    Matrix input;   ///< d_in x tokens
    Matrix output;  ///< d_out x tokens
};

struct LayerTrace {
    std::array<SublayerActivations, 6> sublayers;  ///< indexed by Sublayer
    std::vector<Matrix> attention;                 ///< per head, tokens x tokens, post-softmax
    Matrix attn_out;                               ///< output of w_o, d_model x tokens

    const SublayerActivations& at(Sublayer s) const { return sublayers[static_cast<std::size_t>(s)]; }
};

struct ForwardTrace {
    std::vector<LayerTrace> layers;  ///< empty unless captured
    Matrix logits;                   ///< vocab x tokens
};

/// Pre-norm causal decoder forward pass.
ForwardTrace forward(const WeightContainer& w, std::span<const Token> tokens, Capture capture = Capture::logits_only);

}  // namespace d2p
