// Copyright 2026 The vipformer Authors
//
// Licensed under the Apache License, Version 2.0

#include "vipformer/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace vip {

namespace {

constexpr char kMagic[5] = {'V', 'I', 'P', 'F', '1'};

void put_u64(std::ostream& os, std::uint64_t v) {
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64(std::istream& is, const char* what) {
    std::uint8_t buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

std::string hash_hex(std::uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[h & 0xf];
        h >>= 4;
    }
    return s;
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    // Assemble the payload in manifest (name-sorted) order so identical
    // checkpoints serialize to identical bytes.
    std::vector<std::uint8_t> payload;
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [name, blob] : ckpt.tensors) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = blob.shape;
        entry["dtype"] = blob.dtype;
        entry["offset"] = payload.size();
        entry["bytes"] = blob.bytes.size();
        manifest.push_back(std::move(entry));
        payload.insert(payload.end(), blob.bytes.begin(), blob.bytes.end());
    }
    nlohmann::json header;
    header["tensors"] = std::move(manifest);
    header["meta"] = ckpt.meta;
    header["payload_bytes"] = payload.size();
    header["payload_hash"] = hash_hex(fnv1a64(payload.data(), payload.size()));
    const std::string header_str = header.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open '" + path + "' for writing");
    os.write(kMagic, sizeof(kMagic));
    put_u64(os, header_str.size());
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    os.flush();
    if (!os) throw FormatError("failed writing checkpoint to '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kMagic, 5) != 0)
        throw FormatError("bad magic at offset 0 in '" + path + "' (not a VIPF1 checkpoint)");
    const std::uint64_t header_len = get_u64(is, "header length");
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw FormatError("checkpoint truncated at offset 13 (header of " + std::to_string(header_len) +
                               " bytes expected)");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }

    const std::uint64_t payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    std::vector<std::uint8_t> payload(payload_bytes);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_bytes));
    if (!is || static_cast<std::uint64_t>(is.gcount()) != payload_bytes)
        throw FormatError("checkpoint payload truncated at offset " +
                          std::to_string(13 + header_len + static_cast<std::uint64_t>(std::max<std::streamsize>(
                                                               is.gcount(), 0))));
    const std::string want_hash = header.at("payload_hash").get<std::string>();
    const std::string got_hash = hash_hex(fnv1a64(payload.data(), payload.size()));
    if (want_hash != got_hash)
        throw FormatError("checkpoint payload hash mismatch (stored " + want_hash + ", computed " + got_hash + ")");

    Checkpoint ckpt;
    ckpt.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
        TensorBlob blob;
        blob.shape = entry.at("shape").get<Shape>();
        blob.dtype = entry.at("dtype").get<std::string>();
        const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
        const std::uint64_t nbytes = entry.at("bytes").get<std::uint64_t>();
        if (offset + nbytes > payload.size())
            throw FormatError("tensor '" + entry.at("name").get<std::string>() + "' overruns payload (offset " +
                              std::to_string(offset) + " + " + std::to_string(nbytes) + " > " +
                              std::to_string(payload.size()) + ")");
        blob.bytes.assign(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                          payload.begin() + static_cast<std::ptrdiff_t>(offset + nbytes));
        ckpt.tensors[entry.at("name").get<std::string>()] = std::move(blob);
    }
    return ckpt;
}

}  // namespace vip
