#include <doctest.h>

#include <filesystem>

#include "d2prune/errors.hpp"
#include "d2prune/tensor_io.hpp"

using namespace d2p;

namespace {

TensorFile sample_file() {
    TensorFile f;
    f.metadata["kind"] = "test";
    f.metadata["note"] = "two tensors";
    Tensor a(2, 3);
    a << 1.f, -2.f, 3.5f, 0.f, -0.f, 1e-30f;
    Tensor b(4, 1);
    b << 9.f, 8.f, 7.f, 6.f;
    f.tensors.push_back({"a", a, 2});
    f.tensors.push_back({"layers.0.bias", b, 1});
    return f;
}

}  // namespace

TEST_CASE("encode/decode round trip is bit exact") {
    const TensorFile f = sample_file();
    const auto bytes = encode_d2pw(f);
    const TensorFile g = decode_d2pw(bytes);
    CHECK(g.tensors == f.tensors);
    CHECK(g.metadata.at("kind") == "test");
    CHECK(encode_d2pw(g) == bytes);
    REQUIRE(g.find("layers.0.bias") != nullptr);
    CHECK(g.find("layers.0.bias")->rank == 1);
    CHECK(g.find("missing") == nullptr);
}

TEST_CASE("file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "d2prune_tensor_io_test.d2pw";
    save_d2pw(sample_file(), path);
    CHECK(load_d2pw(path).tensors == sample_file().tensors);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_d2pw(path), IoError);
}

TEST_CASE("bad magic") {
    auto bytes = encode_d2pw(sample_file());
    bytes[0] = 'X';
    try {
        decode_d2pw(bytes);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::BadMagic);
    }
}

TEST_CASE("version mismatch") {
    auto bytes = encode_d2pw(sample_file());
    bytes[4] = 99;
    try {
        decode_d2pw(bytes);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::VersionMismatch);
    }
}

TEST_CASE("truncation names the tensor") {
    auto bytes = encode_d2pw(sample_file());
    bytes.resize(bytes.size() - 3);
    try {
        decode_d2pw(bytes);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.kind() == FormatError::Kind::TruncatedTensor);
        CHECK(std::string(e.what()).find("layers.0.bias") != std::string::npos);
    }
}

TEST_CASE("a file cut at a tensor boundary is still rejected") {
    TensorFile one = sample_file();
    one.tensors.pop_back();
    auto full = encode_d2pw(sample_file());
    auto prefix = encode_d2pw(one);
    // name length + name, rank, one dim, four floats
    const std::size_t last = 4 + 13 + 4 + 1 * 8 + 4 * 4;
    full.resize(full.size() - last);
    CHECK_THROWS_AS(decode_d2pw(full), FormatError);
    CHECK_NOTHROW(decode_d2pw(prefix));
}

TEST_CASE("token streams and digests") {
    const auto path = std::filesystem::temp_directory_path() / "d2prune_tokens_test.bin";
    std::vector<std::uint32_t> toks{0, 1, 70000, 5};
    save_tokens(toks, path);
    CHECK(load_tokens(path) == toks);
    std::filesystem::remove(path);

    CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
