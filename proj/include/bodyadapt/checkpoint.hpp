#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bodyadapt/model.hpp"

namespace bodyadapt {

// Checkpoint container, little-endian:
//   magic "BACP" | version u32 | channels u32 | window_len u32 |
//   num_classes u32 | domain u8 | pad u8[3] | tensor count u32 |
//   per tensor: name_len u16, name bytes, ndim u32, dims u32[ndim],
//               float32 payload
// Tensors appear in a fixed order (conv1..4 w/b, lstm1..2 wx/wh/b, head w/b)
// and round-trip bit-exactly.
namespace ckpt_detail {

constexpr char kMagic[4] = {'B', 'A', 'C', 'P'};
constexpr std::uint32_t kVersion = 1;

inline void put_u16(std::ostream& os, std::uint16_t v) {
    char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
    os.write(b, 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline void put_f32(std::ostream& os, const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, data + i, 4);
        put_u32(os, bits);
    }
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
        throw IoError(std::string("checkpoint truncated reading ") + what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IoError(std::string("checkpoint truncated reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint64_t lo = get_u32(is, what);
    std::uint64_t hi = get_u32(is, what);
    return lo | (hi << 32);
}

inline void get_f32(std::istream& is, float* data, std::size_t n, const char* what) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t bits = get_u32(is, what);
        std::memcpy(data + i, &bits, 4);
    }
}

inline void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    put_f32(os, t.data(), static_cast<std::size_t>(t.numel()));
}

inline Tensor read_tensor(std::istream& is, const std::string& expect_name) {
    std::uint16_t len = get_u16(is, "tensor name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("checkpoint truncated reading tensor name");
    if (name != expect_name)
        throw IoError("checkpoint tensor order corrupt: expected '" + expect_name + "', found '" +
                      name + "'");
    std::uint32_t ndim = get_u32(is, "tensor rank");
    if (ndim > 8) throw IoError("checkpoint tensor rank corrupt");
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i)
        shape.push_back(static_cast<int>(get_u32(is, "tensor dims")));
    Tensor t(shape);
    get_f32(is, t.data(), static_cast<std::size_t>(t.numel()), expect_name.c_str());
    return t;
}

inline std::vector<std::pair<std::string, const Tensor*>> tensor_list(const ModelParams& m) {
    std::vector<std::pair<std::string, const Tensor*>> v;
    for (int l = 0; l < kConvLayers; ++l) {
        std::string base = "conv" + std::to_string(l + 1);
        v.emplace_back(base + ".w", &m.embedder.conv[static_cast<std::size_t>(l)].w);
        v.emplace_back(base + ".b", &m.embedder.conv[static_cast<std::size_t>(l)].b);
    }
    for (int l = 0; l < kLstmLayers; ++l) {
        std::string base = "lstm" + std::to_string(l + 1);
        v.emplace_back(base + ".wx", &m.embedder.lstm[static_cast<std::size_t>(l)].wx);
        v.emplace_back(base + ".wh", &m.embedder.lstm[static_cast<std::size_t>(l)].wh);
        v.emplace_back(base + ".b", &m.embedder.lstm[static_cast<std::size_t>(l)].b);
    }
    v.emplace_back("head.w", &m.classifier.w);
    v.emplace_back("head.b", &m.classifier.b);
    return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const ModelParams& m, const std::string& path) {
    validate_model(m);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(ckpt_detail::kMagic, 4);
    ckpt_detail::put_u32(os, ckpt_detail::kVersion);
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(m.meta.channels));
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(m.meta.window_len));
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(m.meta.num_classes));
    char dom[4] = {static_cast<char>(m.meta.domain), 0, 0, 0};
    os.write(dom, 4);
    auto tensors = ckpt_detail::tensor_list(m);
    ckpt_detail::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) ckpt_detail::write_tensor(os, name, *t);
    if (!os) throw IoError("checkpoint write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, ckpt_detail::kMagic, 4) != 0)
        throw IoError("not a model checkpoint (bad magic): " + path);
    std::uint32_t version = ckpt_detail::get_u32(is, "version");
    if (version != ckpt_detail::kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    ModelParams m;
    m.meta.channels = static_cast<int>(ckpt_detail::get_u32(is, "channels"));
    m.meta.window_len = static_cast<int>(ckpt_detail::get_u32(is, "window length"));
    m.meta.num_classes = static_cast<int>(ckpt_detail::get_u32(is, "class count"));
    char dom[4];
    if (!is.read(dom, 4)) throw IoError("checkpoint truncated reading domain tag");
    if (dom[0] != 0 && dom[0] != 1) throw IoError("checkpoint domain tag corrupt");
    m.meta.domain = static_cast<Domain>(dom[0]);
    std::uint32_t count = ckpt_detail::get_u32(is, "tensor count");
    // refuse anything that does not match this architecture before reading payloads
    auto expected = ckpt_detail::tensor_list(m);
    if (count != expected.size()) throw IoError("checkpoint tensor count corrupt");
    std::vector<Tensor> loaded;
    loaded.reserve(count);
    for (const auto& [name, slot] : expected) {
        (void)slot;
        loaded.push_back(ckpt_detail::read_tensor(is, name));
    }
    char probe;
    if (is.read(&probe, 1)) throw IoError("checkpoint has trailing bytes: " + path);
    std::size_t i = 0;
    for (int l = 0; l < kConvLayers; ++l) {
        m.embedder.conv[static_cast<std::size_t>(l)].w = std::move(loaded[i++]);
        m.embedder.conv[static_cast<std::size_t>(l)].b = std::move(loaded[i++]);
    }
    for (int l = 0; l < kLstmLayers; ++l) {
        m.embedder.lstm[static_cast<std::size_t>(l)].wx = std::move(loaded[i++]);
        m.embedder.lstm[static_cast<std::size_t>(l)].wh = std::move(loaded[i++]);
        m.embedder.lstm[static_cast<std::size_t>(l)].b = std::move(loaded[i++]);
    }
    m.classifier.w = std::move(loaded[i++]);
    m.classifier.b = std::move(loaded[i++]);
    try {
        validate_model(m);
    } catch (const ShapeError& e) {
        throw IoError(std::string("checkpoint shape/meta corrupt: ") + e.what());
    }
    return m;
}

}  // namespace bodyadapt
