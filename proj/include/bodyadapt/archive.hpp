#pragma once

#include <cstring>
#include <fstream>
#include <string>

#include "bodyadapt/checkpoint.hpp"
#include "bodyadapt/dataset.hpp"

namespace bodyadapt {

// Harmonized window archive, little-endian:
//   magic "BAWA" | version u32 | scheme u8 | pad u8[3]
//   | num_classes u32 | source_channels u32 | target_channels u32
//   | window_len u32 | window count u64 | split seed u64
//   | dataset id (u16 len + bytes) | class names (u16 len + bytes each)
//   | per window: pairing id u64, subject u32, label i32, t0 f64,
//                 source f32[Cs*len], target f32[Ct*len]
// Round trips are bit-exact.
namespace archive_detail {
constexpr char kMagic[4] = {'B', 'A', 'W', 'A'};
constexpr std::uint32_t kVersion = 1;

inline void put_string(std::ostream& os, const std::string& s) {
    ckpt_detail::put_u16(os, static_cast<std::uint16_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, const char* what) {
    std::uint16_t len = ckpt_detail::get_u16(is, what);
    std::string s(len, '\0');
    if (!is.read(s.data(), len)) throw IoError(std::string("archive truncated reading ") + what);
    return s;
}
}  // namespace archive_detail

inline void save_archive(const WindowDataset& data, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open archive for writing: " + path);
    using namespace ckpt_detail;
    os.write(archive_detail::kMagic, 4);
    put_u32(os, archive_detail::kVersion);
    char scheme[4] = {static_cast<char>(data.scheme), 0, 0, 0};
    os.write(scheme, 4);
    put_u32(os, static_cast<std::uint32_t>(data.num_classes()));
    put_u32(os, static_cast<std::uint32_t>(data.source_channels));
    put_u32(os, static_cast<std::uint32_t>(data.target_channels));
    put_u32(os, static_cast<std::uint32_t>(data.window_len));
    put_u64(os, static_cast<std::uint64_t>(data.pairs.size()));
    put_u64(os, data.split_seed);
    archive_detail::put_string(os, data.dataset_id);
    for (const auto& name : data.class_names) archive_detail::put_string(os, name);
    for (const auto& p : data.pairs) {
        put_u64(os, static_cast<std::uint64_t>(p.pairing_id));
        put_u32(os, static_cast<std::uint32_t>(p.subject));
        put_u32(os, static_cast<std::uint32_t>(p.label));
        std::uint64_t tbits;
        double t0 = p.t0;
        std::memcpy(&tbits, &t0, 8);
        put_u64(os, tbits);
        put_f32(os, p.source.data(), static_cast<std::size_t>(p.source.numel()));
        put_f32(os, p.target.data(), static_cast<std::size_t>(p.target.numel()));
    }
    if (!os) throw IoError("archive write failed: " + path);
}

inline WindowDataset load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open archive: " + path);
    using namespace ckpt_detail;
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, archive_detail::kMagic, 4) != 0)
        throw IoError("not a window archive (bad magic): " + path);
    std::uint32_t version = get_u32(is, "version");
    if (version != archive_detail::kVersion)
        throw IoError("unsupported archive version " + std::to_string(version));
    char scheme[4];
    if (!is.read(scheme, 4)) throw IoError("archive truncated reading scheme");
    if (scheme[0] != 0 && scheme[0] != 1) throw IoError("archive scheme byte corrupt");
    WindowDataset data;
    data.scheme = static_cast<LabelSchemeKind>(scheme[0]);
    std::uint32_t k = get_u32(is, "class count");
    data.source_channels = static_cast<int>(get_u32(is, "source channels"));
    data.target_channels = static_cast<int>(get_u32(is, "target channels"));
    data.window_len = static_cast<int>(get_u32(is, "window length"));
    std::uint64_t count = get_u64(is, "window count");
    data.split_seed = get_u64(is, "split seed");
    data.dataset_id = archive_detail::get_string(is, "dataset id");
    if (k == 0 || k > 4096) throw IoError("archive class count corrupt");
    if (data.window_len <= 0 || data.source_channels <= 0 || data.target_channels <= 0)
        throw IoError("archive geometry corrupt");
    for (std::uint32_t i = 0; i < k; ++i)
        data.class_names.push_back(archive_detail::get_string(is, "class name"));
    data.pairs.reserve(static_cast<std::size_t>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        WindowPair p;
        p.pairing_id = static_cast<std::int64_t>(get_u64(is, "pairing id"));
        p.subject = static_cast<int>(get_u32(is, "subject"));
        p.label = static_cast<int>(get_u32(is, "label"));
        if (p.label < 0 || p.label >= static_cast<int>(k))
            throw IoError("archive label out of range in window " + std::to_string(i));
        std::uint64_t tbits = get_u64(is, "window time");
        std::memcpy(&p.t0, &tbits, 8);
        p.source = Tensor({data.source_channels, data.window_len});
        p.target = Tensor({data.target_channels, data.window_len});
        get_f32(is, p.source.data(), static_cast<std::size_t>(p.source.numel()), "source window");
        get_f32(is, p.target.data(), static_cast<std::size_t>(p.target.numel()), "target window");
        data.pairs.push_back(std::move(p));
    }
    char probe;
    if (is.read(&probe, 1)) throw IoError("archive has trailing bytes: " + path);
    return data;
}

}  // namespace bodyadapt
