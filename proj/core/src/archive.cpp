// Copyright (c) 2026 The ctdsr Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctdsr/archive.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace ctdsr {
namespace {

constexpr char kMagic[8] = {'C', 'T', 'D', 'S', 'R', 'A', 'R', '1'};

static_assert(std::endian::native == std::endian::little, "archives assume a little-endian host");

template <class U>
void put(std::string& buf, U v) {
    char bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    buf.append(bytes, sizeof(U));
}

template <class U>
U get(const std::string& buf, std::size_t at) {
    U v;
    std::memcpy(&v, buf.data() + at, sizeof(U));
    return v;
}

}  // namespace

const Tensor<float>* Archive::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t.value;
    }
    return nullptr;
}

std::uint32_t crc32_of(const void* data, std::size_t bytes, std::uint32_t seed) {
    uLong crc = seed;
    const auto* p = static_cast<const Bytef*>(data);
    while (bytes > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
        crc = crc32(crc, p, chunk);
        p += chunk;
        bytes -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32_of_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open '" + path.string() + "'");
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return crc32_of(data.data(), data.size());
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header;
    try {
        header["meta"] = nlohmann::json::parse(archive.meta_json);
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(std::string("archive metadata is not valid JSON: ") + e.what());
    }
    header["tensors"] = nlohmann::json::array();
    std::size_t payload = 0;
    for (const auto& t : archive.tensors) {
        const Shape& s = t.value.shape();
        header["tensors"].push_back({{"name", t.name}, {"shape", {s.channels, s.height, s.width}}});
        payload += t.value.size() * sizeof(float);
    }
    const std::string text = header.dump();

    std::string buf;
    buf.reserve(sizeof(kMagic) + 8 + text.size() + payload + 4);
    buf.append(kMagic, sizeof(kMagic));
    put<std::uint64_t>(buf, text.size());
    buf += text;
    for (const auto& t : archive.tensors) {
        buf.append(reinterpret_cast<const char*>(t.value.data()), t.value.size() * sizeof(float));
    }
    put<std::uint32_t>(buf, crc32_of(buf.data(), buf.size()));

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ArchiveError("cannot write '" + tmp.string() + "'");
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        out.flush();
        if (!out) throw ArchiveError("short write to '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw ArchiveError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArchiveError("cannot open '" + path.string() + "'");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = "'" + path.string() + "'";

    if (buf.size() < sizeof(kMagic) + 8 + 4 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ArchiveError(where + " is not a ctdsr archive");
    }
    const auto stored = get<std::uint32_t>(buf, buf.size() - 4);
    if (crc32_of(buf.data(), buf.size() - 4) != stored) throw ArchiveError(where + " is corrupted (checksum mismatch)");

    const auto header_bytes = get<std::uint64_t>(buf, sizeof(kMagic));
    std::size_t at = sizeof(kMagic) + 8;
    if (header_bytes > buf.size() - at - 4) throw ArchiveError(where + " has a truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(buf.substr(at, header_bytes));
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(where + " has an unreadable header: " + e.what());
    }
    at += header_bytes;

    Archive out;
    out.meta_json = header.value("meta", nlohmann::json::object()).dump();
    for (const auto& entry : header.at("tensors")) {
        const auto& sh = entry.at("shape");
        Shape shape{sh.at(0).get<int>(), sh.at(1).get<int>(), sh.at(2).get<int>()};
        if (shape.channels < 0 || shape.height < 0 || shape.width < 0) {
            throw ArchiveError(where + ": negative extent in tensor '" + entry.at("name").get<std::string>() + "'");
        }
        const std::size_t bytes = shape.size() * sizeof(float);
        if (bytes > buf.size() - 4 - at) throw ArchiveError(where + " is truncated");
        Tensor<float> t(shape);
        std::memcpy(t.data(), buf.data() + at, bytes);
        at += bytes;
        out.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
    }
    if (at != buf.size() - 4) throw ArchiveError(where + " has trailing bytes");
    return out;
}

}  // namespace ctdsr
