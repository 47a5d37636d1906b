#include "d2prune/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::string layer_prefix(std::size_t layer) { return "layers." + std::to_string(layer) + "."; }

Matrix layer_norm(const Matrix& x, const Tensor& gain, const Tensor& bias) {
    Matrix out(x.rows(), x.cols());
    const double n = static_cast<double>(x.rows());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const double mean = x.col(t).sum() / n;
        const double var = (x.col(t).array() - mean).square().sum() / n;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            out(i, t) = (x(i, t) - mean) * inv * double(gain(i, 0)) + double(bias(i, 0));
        }
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

void fill_normal(Tensor& t, std::mt19937_64& rng, double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(dist(rng));
}

Tensor lowrank_plus_noise(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    const Eigen::Index rank = (std::min(rows, cols) + 7) / 8;
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrix a(rows, rank), b(rank, cols);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = unit(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = unit(rng);
    Matrix low = a * b;
    const double target_rms = 1.0 / std::sqrt(double(cols));
    const double rms = std::sqrt(low.squaredNorm() / double(low.size()));
    low *= target_rms / rms;
    // 5% Gaussian noise relative to the low-rank part's RMS entry.
    std::normal_distribution<double> noise(0.0, 0.05 * target_rms);
    Tensor out(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = static_cast<float>(low(r, c) + noise(rng));
    }
    return out;
}

std::size_t parse_count(const std::map<std::string, std::string>& meta, const std::string& key) {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(FormatError::Kind::Inconsistent, "metadata lacks '" + key + "'");
    try {
        std::size_t used = 0;
        auto v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
        throw FormatError(FormatError::Kind::Inconsistent, "metadata '" + key + "' is not a count");
    }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return splitmix64(base ^ splitmix64(h));
}

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || vocab < 1 || max_seq < 1) {
        throw ConfigError("model config: all counts must be >= 1");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    }
}

std::string_view sublayer_name(Sublayer s) {
    switch (s) {
        case Sublayer::q: return "w_q";
        case Sublayer::k: return "w_k";
        case Sublayer::v: return "w_v";
        case Sublayer::o: return "w_o";
        case Sublayer::up: return "w_up";
        case Sublayer::down: return "w_down";
    }
    return "?";
}

std::string weight_name(std::size_t layer, Sublayer s) { return layer_prefix(layer) + std::string(sublayer_name(s)); }

std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> expected_shapes(const ModelConfig& c) {
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const auto ff = static_cast<Eigen::Index>(c.d_ff);
    const auto v = static_cast<Eigen::Index>(c.vocab);
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> out;
    out["tok_embed"] = {v, d};
    out["pos_embed"] = {static_cast<Eigen::Index>(c.max_seq), d};
    out["ln_f.gain"] = {d, 1};
    out["ln_f.bias"] = {d, 1};
    out["lm_head"] = {v, d};
    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto p = layer_prefix(l);
        for (const char* ln : {"ln1", "ln2"}) {
            out[p + ln + ".gain"] = {d, 1};
            out[p + ln + ".bias"] = {d, 1};
        }
        out[weight_name(l, Sublayer::q)] = {d, d};
        out[weight_name(l, Sublayer::k)] = {d, d};
        out[weight_name(l, Sublayer::v)] = {d, d};
        out[weight_name(l, Sublayer::o)] = {d, d};
        out[weight_name(l, Sublayer::up)] = {ff, d};
        out[weight_name(l, Sublayer::down)] = {d, ff};
    }
    return out;
}

const Tensor& WeightContainer::at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InputError("no tensor named '" + name + "'");
    return it->second;
}

Tensor& WeightContainer::at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InputError("no tensor named '" + name + "'");
    return it->second;
}

Matrix WeightContainer::weight(std::size_t layer, Sublayer s) const { return at(weight_name(layer, s)).cast<double>(); }

void WeightContainer::set_weight(std::size_t layer, Sublayer s, const Matrix& w) {
    Tensor& t = at(weight_name(layer, s));
    if (t.rows() != w.rows() || t.cols() != w.cols()) {
        throw ShapeError("set_weight " + weight_name(layer, s) + ": expected " + shape_str(t.rows(), t.cols()) +
                         ", got " + shape_str(w.rows(), w.cols()));
    }
    t = w.cast<float>();
}

void WeightContainer::validate() const {
    config.validate();
    const auto shapes = expected_shapes(config);
    for (const auto& [name, shape] : shapes) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw FormatError(FormatError::Kind::Inconsistent, "missing tensor '" + name + "'");
        if (it->second.rows() != shape.first || it->second.cols() != shape.second) {
            throw FormatError(FormatError::Kind::Inconsistent,
                              "tensor '" + name + "' is " + shape_str(it->second.rows(), it->second.cols()) +
                                  ", config requires " + shape_str(shape.first, shape.second));
        }
        if (!it->second.allFinite()) throw InputError("tensor '" + name + "' has non-finite entries");
    }
    for (const auto& [name, t] : tensors) {
        if (!shapes.count(name)) throw FormatError(FormatError::Kind::Inconsistent, "unexpected tensor '" + name + "'");
    }
}

bool WeightContainer::operator==(const WeightContainer& other) const {
    if (!(config == other.config) || tensors.size() != other.tensors.size()) return false;
    for (const auto& [name, t] : tensors) {
        auto it = other.tensors.find(name);
        if (it == other.tensors.end()) return false;
        const Tensor& o = it->second;
        if (t.rows() != o.rows() || t.cols() != o.cols()) return false;
        if (std::memcmp(t.data(), o.data(), sizeof(float) * t.size()) != 0) return false;
    }
    return true;
}

WeightContainer generate_weights(const ModelConfig& config, std::uint64_t seed, WeightStructure structure) {
    config.validate();
    WeightContainer w;
    w.config = config;
    for (const auto& [name, shape] : expected_shapes(config)) {
        std::mt19937_64 rng(derive_seed(seed, name));
        Tensor t(shape.first, shape.second);
        const bool is_linear = name.rfind("layers.", 0) == 0 && name.find(".w_") != std::string::npos;
        if (name.ends_with(".gain")) {
            fill_normal(t, rng, 1.0, 0.2);
        } else if (name.ends_with(".bias")) {
            fill_normal(t, rng, 0.0, 0.1);
        } else if (name == "tok_embed") {
            fill_normal(t, rng, 0.0, 1.0);
        } else if (name == "pos_embed") {
            fill_normal(t, rng, 0.0, 0.1);
        } else if (is_linear && structure == WeightStructure::lowrank_noise) {
            t = lowrank_plus_noise(shape.first, shape.second, rng);
        } else {
            fill_normal(t, rng, 0.0, 1.0 / std::sqrt(double(shape.second)));
        }
        w.tensors.emplace(name, std::move(t));
    }
    return w;
}

TensorFile to_tensor_file(const WeightContainer& w) {
    w.validate();
    TensorFile f;
    f.metadata = {{"kind", "weights"},
                  {"n_layers", std::to_string(w.config.n_layers)},
                  {"n_heads", std::to_string(w.config.n_heads)},
                  {"d_model", std::to_string(w.config.d_model)},
                  {"d_ff", std::to_string(w.config.d_ff)},
                  {"vocab", std::to_string(w.config.vocab)},
                  {"max_seq", std::to_string(w.config.max_seq)}};
    for (const auto& [name, t] : w.tensors) {
        const bool vec = t.cols() == 1 && (name.ends_with(".gain") || name.ends_with(".bias"));
        f.tensors.push_back(NamedTensor{name, t, vec ? 1u : 2u});
    }
    return f;
}

WeightContainer from_tensor_file(const TensorFile& f) {
    auto kind = f.metadata.find("kind");
    if (kind == f.metadata.end() || kind->second != "weights") {
        throw FormatError(FormatError::Kind::Inconsistent, "file is not a weight container");
    }
    WeightContainer w;
    w.config.n_layers = parse_count(f.metadata, "n_layers");
    w.config.n_heads = parse_count(f.metadata, "n_heads");
    w.config.d_model = parse_count(f.metadata, "d_model");
    w.config.d_ff = parse_count(f.metadata, "d_ff");
    w.config.vocab = parse_count(f.metadata, "vocab");
    w.config.max_seq = parse_count(f.metadata, "max_seq");
    try {
        w.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(FormatError::Kind::Inconsistent, e.what());
    }
    for (const auto& t : f.tensors) w.tensors.emplace(t.name, t.value);
    w.validate();
    return w;
}

void save(const WeightContainer& w, const std::filesystem::path& path) { save_d2pw(to_tensor_file(w), path); }

WeightContainer load(const std::filesystem::path& path) { return from_tensor_file(load_d2pw(path)); }

ForwardTrace forward(const WeightContainer& w, std::span<const Token> tokens, Capture capture) {
    const ModelConfig& c = w.config;
    if (tokens.size() > c.max_seq) {
        throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                         std::to_string(c.max_seq));
    }
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] >= c.vocab) {
            throw InputError("token id " + std::to_string(tokens[t]) + " at position " + std::to_string(t) +
                             " is out of range for vocab " + std::to_string(c.vocab));
        }
    }
    const auto n_tok = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(c.d_model);
    const auto dh = static_cast<Eigen::Index>(c.head_dim());
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));

    const Tensor& embed = w.at("tok_embed");
    const Tensor& pos = w.at("pos_embed");
    Matrix h(d, n_tok);
    for (Eigen::Index t = 0; t < n_tok; ++t) {
        h.col(t) = (embed.row(tokens[t]).cast<double>() + pos.row(t).cast<double>()).transpose();
    }

    ForwardTrace trace;
    const bool full = capture == Capture::full;
    if (full) trace.layers.resize(c.n_layers);

    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto p = layer_prefix(l);
        Matrix a = layer_norm(h, w.at(p + "ln1.gain"), w.at(p + "ln1.bias"));
        const Matrix q = matmul(w.weight(l, Sublayer::q), a);
        const Matrix k = matmul(w.weight(l, Sublayer::k), a);
        const Matrix v = matmul(w.weight(l, Sublayer::v), a);

        Matrix ctx = Matrix::Zero(d, n_tok);
        std::vector<Matrix> heads;
        for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
            const Eigen::Index off = static_cast<Eigen::Index>(hd) * dh;
            Matrix attn = Matrix::Zero(n_tok, n_tok);
            for (Eigen::Index i = 0; i < n_tok; ++i) {
                double mx = -std::numeric_limits<double>::infinity();
                for (Eigen::Index j = 0; j <= i; ++j) {
                    attn(i, j) = q.col(i).segment(off, dh).dot(k.col(j).segment(off, dh)) * inv_sqrt_dh;
                    mx = std::max(mx, attn(i, j));
                }
                double total = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    attn(i, j) = std::exp(attn(i, j) - mx);
                    total += attn(i, j);
                }
                for (Eigen::Index j = 0; j <= i; ++j) attn(i, j) /= total;
            }
            ctx.middleRows(off, dh).noalias() = v.middleRows(off, dh) * attn.transpose();
            if (full) heads.push_back(std::move(attn));
        }
        Matrix o = matmul(w.weight(l, Sublayer::o), ctx);
        h += o;

        Matrix b = layer_norm(h, w.at(p + "ln2.gain"), w.at(p + "ln2.bias"));
        Matrix up = matmul(w.weight(l, Sublayer::up), b);
        Matrix g = up.unaryExpr([](double x) { return gelu(x); });
        Matrix down = matmul(w.weight(l, Sublayer::down), g);
        h += down;

        if (full) {
            LayerTrace& lt = trace.layers[l];
            auto put = [&](Sublayer s, const Matrix& in, Matrix out) {
                lt.sublayers[static_cast<std::size_t>(s)] = SublayerActivations{in, std::move(out)};
            };
            put(Sublayer::q, a, q);
            put(Sublayer::k, a, k);
            put(Sublayer::v, a, v);
            put(Sublayer::o, ctx, o);
            put(Sublayer::up, b, up);
            put(Sublayer::down, g, down);
            lt.attention = std::move(heads);
            lt.attn_out = o;
        }
    }
    Matrix f = layer_norm(h, w.at("ln_f.gain"), w.at("ln_f.bias"));
    trace.logits = matmul(w.at("lm_head").cast<double>(), f);
    return trace;
}

}  // namespace d2p
