#include "d2prune/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "d2prune/errors.hpp"

namespace d2p {

namespace {

constexpr char kMagic[4] = {'D', '2', 'P', 'W'};

class Writer {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

    bool at_end() const { return pos_ == in_.size(); }
    std::size_t remaining() const { return in_.size() - pos_; }

    bool u32(std::uint32_t& v) {
        if (remaining() < 4) return false;
        v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(in_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return true;
    }
    bool u64(std::uint64_t& v) {
        if (remaining() < 8) return false;
        v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(in_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return true;
    }
    bool str(std::string& s) {
        std::uint32_t n = 0;
        if (!u32(n) || remaining() < n) return false;
        s.assign(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return true;
    }
    bool raw(void* dst, std::size_t n) {
        if (remaining() < n) return false;
        std::memcpy(dst, in_.data() + pos_, n);
        pos_ += n;
        return true;
    }

private:
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& meta, std::size_t tensor_count) {
    std::map<std::string, std::string> all = meta;
    all["tensor_count"] = std::to_string(tensor_count);
    std::string out;
    for (const auto& [k, v] : all) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw InputError("metadata key/value contains '=' or newline: " + k);
        }
        out += k + "=" + v + "\n";
    }
    return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text) {
    std::map<std::string, std::string> meta;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError(FormatError::Kind::Inconsistent, "malformed metadata line: " + line);
        }
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return meta;
}

}  // namespace

const NamedTensor* TensorFile::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

std::vector<std::uint8_t> encode_d2pw(const TensorFile& file) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kD2pwVersion);
    w.str(encode_metadata(file.metadata, file.tensors.size()));
    for (const auto& t : file.tensors) {
        if (t.rank != 1 && t.rank != 2) throw InputError("tensor '" + t.name + "': rank must be 1 or 2");
        if (t.rank == 1 && t.value.cols() != 1) throw InputError("tensor '" + t.name + "': rank-1 must be a column");
        w.str(t.name);
        w.u32(t.rank);
        w.u64(static_cast<std::uint64_t>(t.value.rows()));
        if (t.rank == 2) w.u64(static_cast<std::uint64_t>(t.value.cols()));
        for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f32(t.value.data()[i]);
    }
    return w.take();
}

TensorFile decode_d2pw(const std::vector<std::uint8_t>& bytes) {
    using K = FormatError::Kind;
    Reader r(bytes);
    char magic[4];
    if (!r.raw(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(K::BadMagic, "bad magic");
    std::uint32_t version = 0;
    if (!r.u32(version)) throw FormatError(K::Inconsistent, "truncated header");
    if (version != kD2pwVersion) {
        throw FormatError(K::VersionMismatch,
                          "version mismatch: file " + std::to_string(version) + ", expected " +
                              std::to_string(kD2pwVersion));
    }
    std::string meta_text;
    if (!r.str(meta_text)) throw FormatError(K::Inconsistent, "truncated metadata block");
    TensorFile file;
    file.metadata = decode_metadata(meta_text);
    auto count_it = file.metadata.find("tensor_count");
    if (count_it == file.metadata.end()) throw FormatError(K::Inconsistent, "metadata lacks tensor_count");
    const std::size_t expected = std::stoull(count_it->second);
    file.metadata.erase(count_it);

    while (!r.at_end()) {
        NamedTensor t;
        if (!r.str(t.name)) throw FormatError(K::TruncatedTensor, "truncated tensor header");
        const std::string where = "truncated tensor '" + t.name + "'";
        if (!r.u32(t.rank)) throw FormatError(K::TruncatedTensor, where);
        if (t.rank != 1 && t.rank != 2) {
            throw FormatError(K::Inconsistent, "tensor '" + t.name + "' has unsupported rank " + std::to_string(t.rank));
        }
        std::uint64_t rows = 0, cols = 1;
        if (!r.u64(rows)) throw FormatError(K::TruncatedTensor, where);
        if (t.rank == 2 && !r.u64(cols)) throw FormatError(K::TruncatedTensor, where);
        if (cols != 0 && rows > r.remaining() / 4 / cols) throw FormatError(K::TruncatedTensor, where);
        t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < t.value.size(); ++i) {
            std::uint32_t bits = 0;
            if (!r.u32(bits)) throw FormatError(K::TruncatedTensor, where);
            t.value.data()[i] = std::bit_cast<float>(bits);
        }
        for (const auto& prev : file.tensors) {
            if (prev.name == t.name) throw FormatError(K::Inconsistent, "duplicate tensor name '" + t.name + "'");
        }
        file.tensors.push_back(std::move(t));
    }
    if (file.tensors.size() != expected) {
        throw FormatError(K::TruncatedTensor, "file holds " + std::to_string(file.tensors.size()) +
                                                  " tensors, metadata declares " + std::to_string(expected));
    }
    return file;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void save_d2pw(const TensorFile& file, const std::filesystem::path& path) { write_file(path, encode_d2pw(file)); }

TensorFile load_d2pw(const std::filesystem::path& path) { return decode_d2pw(read_file(path)); }

void save_tokens(const std::vector<std::uint32_t>& tokens, const std::filesystem::path& path) {
    Writer w;
    for (auto t : tokens) w.u32(t);
    write_file(path, w.take());
}

std::vector<std::uint32_t> load_tokens(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    if (bytes.size() % 4 != 0) throw FormatError(FormatError::Kind::Inconsistent, "token file length not a multiple of 4");
    Reader r(bytes);
    std::vector<std::uint32_t> out(bytes.size() / 4);
    for (auto& t : out) r.u32(t);
    return out;
}

std::string sha256_hex(const std::vector<std::uint8_t>& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xF];
    }
    return out;
}

std::string sha256_hex(const std::string& text) {
    return sha256_hex(std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace d2p
