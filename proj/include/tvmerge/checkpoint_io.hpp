#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvmerge/tensor.hpp"

// Tensor-container format: u64 little-endian header length N, then N bytes of
// JSON mapping tensor name -> {"dtype", "shape", "data_offsets"}, then the raw
// payload. An optional "__metadata__" string map is preserved on round trip.

namespace tvmerge {

struct TensorMeta {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<std::size_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

namespace detail {

inline nlohmann::json parse_header_checked(const std::string& text) {
    // nlohmann silently keeps the last duplicate key, so detect duplicates
    // during the parse via the event callback.
    std::set<std::string> seen;
    bool duplicate = false;
    nlohmann::json::parser_callback_t cb =
        [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
            if (depth == 1 && event == nlohmann::json::parse_event_t::key) {
                if (!seen.insert(parsed.get<std::string>()).second) duplicate = true;
            }
            return true;
        };
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text, cb);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed JSON header: ") + e.what());
    }
    if (duplicate) throw std::runtime_error("duplicate tensor name in header");
    if (!header.is_object()) throw std::runtime_error("header is not a JSON object");
    return header;
}

}  // namespace detail

inline TensorMap read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    if (bytes.size() < 8) throw std::runtime_error("truncated file: " + path.string());
    std::uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i)
        header_len = (header_len << 8) | static_cast<unsigned char>(bytes[i]);
    if (8 + header_len > bytes.size())
        throw std::runtime_error("truncated file: header exceeds file size");
    const nlohmann::json header =
        detail::parse_header_checked(std::string(bytes.data() + 8, header_len));
    const char* payload = bytes.data() + 8 + header_len;
    const std::uint64_t payload_size = bytes.size() - 8 - header_len;

    TensorMap map;
    map.provenance = path.string();
    std::vector<TensorMeta> metas;
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string()) throw std::runtime_error("__metadata__ values must be strings");
                map.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        TensorMeta meta;
        meta.name = name;
        meta.dtype = dtype_from_name(entry.at("dtype").get<std::string>());
        for (const auto& d : entry.at("shape")) {
            if (!d.is_number_unsigned())
                throw std::runtime_error("negative or non-integer dimension in " + name);
            meta.shape.push_back(d.get<std::size_t>());
        }
        const auto& offs = entry.at("data_offsets");
        if (!offs.is_array() || offs.size() != 2)
            throw std::runtime_error("bad data_offsets for " + name);
        meta.begin = offs[0].get<std::uint64_t>();
        meta.end = offs[1].get<std::uint64_t>();
        if (meta.end < meta.begin || meta.end > payload_size)
            throw std::runtime_error("data_offsets out of bounds for " + name);
        Tensor probe;
        probe.shape = meta.shape;
        if (meta.end - meta.begin != probe.numel() * dtype_size(meta.dtype))
            throw std::runtime_error("data_offsets size mismatch for " + name);
        metas.push_back(std::move(meta));
    }

    // Ranges must tile the payload exactly: sorted by begin, no gaps, no overlap.
    std::sort(metas.begin(), metas.end(), [](const TensorMeta& a, const TensorMeta& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::uint64_t cursor = 0;
    for (const auto& m : metas) {
        if (m.begin != cursor)
            throw std::runtime_error("overlapping or non-contiguous data_offsets at " + m.name);
        cursor = m.end;
    }
    if (cursor != payload_size)
        throw std::runtime_error("payload size does not match declared ranges");

    for (const auto& m : metas) {
        Tensor t;
        t.dtype = m.dtype;
        t.shape = m.shape;
        t.values.resize(t.numel());
        const char* src = payload + m.begin;
        if (m.dtype == Dtype::F32) {
            for (std::size_t i = 0; i < t.values.size(); ++i) {
                float f;
                std::memcpy(&f, src + i * 4, 4);
                t.values[i] = static_cast<double>(f);
            }
        } else {
            for (std::size_t i = 0; i < t.values.size(); ++i) {
                std::uint16_t h;
                std::memcpy(&h, src + i * 2, 2);
                t.values[i] = f16_to_double(h);
            }
        }
        map.entries.emplace(m.name, std::move(t));
    }
    return map;
}

inline void write_checkpoint(const TensorMap& map, const std::filesystem::path& path) {
    // std::map iteration gives ascending names; nlohmann::json sorts object
    // keys the same way, so serialization is deterministic.
    nlohmann::json header = nlohmann::json::object();
    if (!map.metadata.empty()) {
        header["__metadata__"] = map.metadata;
    }
    std::uint64_t offset = 0;
    std::vector<char> payload;
    for (const auto& [name, t] : map.entries) {
        if (t.values.size() != t.numel())
            throw std::runtime_error("value count does not match shape for " + name);
        const std::uint64_t nbytes = t.numel() * dtype_size(t.dtype);
        nlohmann::json entry;
        entry["dtype"] = dtype_name(t.dtype);
        entry["shape"] = t.shape;
        entry["data_offsets"] = {offset, offset + nbytes};
        header[name] = std::move(entry);
        const std::size_t base = payload.size();
        payload.resize(base + nbytes);
        if (t.dtype == Dtype::F32) {
            for (std::size_t i = 0; i < t.values.size(); ++i) {
                const float f = static_cast<float>(t.values[i]);
                std::memcpy(payload.data() + base + i * 4, &f, 4);
            }
        } else {
            for (std::size_t i = 0; i < t.values.size(); ++i) {
                const std::uint16_t h = double_to_f16(t.values[i]);
                std::memcpy(payload.data() + base + i * 2, &h, 2);
            }
        }
        offset += nbytes;
    }
    const std::string header_text = header.dump();
    const std::uint64_t header_len = header_text.size();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    char len_le[8];
    for (int i = 0; i < 8; ++i) len_le[i] = static_cast<char>((header_len >> (8 * i)) & 0xff);
    out.write(len_le, 8);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace tvmerge
