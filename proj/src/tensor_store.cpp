#include "stockpot/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "stockpot/errors.hpp"

namespace stockpot {

static_assert(std::endian::native == std::endian::little,
              "container codec assumes a little-endian host");

namespace {

using ordered_json = nlohmann::ordered_json;

// SAX walker that records top-level object keys so duplicate tensor names
// can be rejected; a DOM parse would silently keep the last duplicate.
struct TopLevelKeyScanner : nlohmann::json_sax<nlohmann::json> {
    int depth = 0;
    std::vector<std::string> keys;

    bool null() override { return true; }
    bool boolean(bool) override { return true; }
    bool number_integer(number_integer_t) override { return true; }
    bool number_unsigned(number_unsigned_t) override { return true; }
    bool number_float(number_float_t, const string_t&) override { return true; }
    bool string(string_t&) override { return true; }
    bool binary(binary_t&) override { return true; }
    bool start_object(std::size_t) override {
        ++depth;
        return true;
    }
    bool key(string_t& k) override {
        if (depth == 1) keys.push_back(k);
        return true;
    }
    bool end_object() override {
        --depth;
        return true;
    }
    bool start_array(std::size_t) override { return true; }
    bool end_array() override { return true; }
    bool parse_error(std::size_t position, const std::string&,
                     const nlohmann::detail::exception& ex) override {
        throw ParseError("malformed header JSON at byte " + std::to_string(position) + ": " +
                         ex.what());
    }
};

std::uint64_t read_u64_le(const std::byte* p) {
    std::uint64_t v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

struct Entry {
    std::string name;
    DType dtype;
    std::vector<std::uint64_t> shape;
    std::uint64_t begin;
    std::uint64_t end;
};

}  // namespace

std::vector<std::byte> serialize_checkpoint(const Checkpoint& ckpt) {
    ordered_json header = ordered_json::object();
    if (ckpt.metadata.has_value()) {
        ordered_json meta = ordered_json::object();
        for (const auto& [key, value] : *ckpt.metadata) meta[key] = value;
        header["__metadata__"] = std::move(meta);
    }
    std::uint64_t offset = 0;
    for (const auto& [name, record] : ckpt.tensors) {
        const std::uint64_t bytes = record.numel() * dtype_size(record.dtype);
        if (record.data.size() != bytes) {
            throw ParseError("tensor '" + name + "' has " + std::to_string(record.data.size()) +
                             " data bytes, expected " + std::to_string(bytes));
        }
        ordered_json entry = ordered_json::object();
        entry["dtype"] = std::string(dtype_name(record.dtype));
        entry["shape"] = record.shape;
        entry["data_offsets"] = {offset, offset + bytes};
        header[name] = std::move(entry);
        offset += bytes;
    }
    const std::string header_text = header.dump();

    std::vector<std::byte> out(8 + header_text.size() + offset);
    const std::uint64_t header_len = header_text.size();
    std::memcpy(out.data(), &header_len, 8);
    std::memcpy(out.data() + 8, header_text.data(), header_text.size());
    std::byte* data_region = out.data() + 8 + header_text.size();
    std::uint64_t cursor = 0;
    for (const auto& [name, record] : ckpt.tensors) {
        std::memcpy(data_region + cursor, record.data.data(), record.data.size());
        cursor += record.data.size();
    }
    return out;
}

Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
    if (bytes.size() < 8) {
        throw ParseError("file too short for the 8-byte header length");
    }
    const std::uint64_t header_len = read_u64_le(bytes.data());
    if (header_len == 0) {
        throw ParseError("empty header");
    }
    if (header_len > kMaxHeaderBytes) {
        throw ParseError("header length " + std::to_string(header_len) + " exceeds the " +
                         std::to_string(kMaxHeaderBytes) + "-byte cap");
    }
    if (bytes.size() - 8 < header_len) {
        throw ParseError("header length " + std::to_string(header_len) +
                         " exceeds the file size");
    }
    const char* header_begin = reinterpret_cast<const char*>(bytes.data() + 8);
    const char* header_end = header_begin + header_len;

    TopLevelKeyScanner scanner;
    nlohmann::json::sax_parse(header_begin, header_end, &scanner);
    std::vector<std::string> sorted_keys = scanner.keys;
    std::sort(sorted_keys.begin(), sorted_keys.end());
    const auto dup = std::adjacent_find(sorted_keys.begin(), sorted_keys.end());
    if (dup != sorted_keys.end()) {
        throw ParseError("duplicate tensor name '" + *dup + "' in header");
    }

    ordered_json header;
    try {
        header = ordered_json::parse(header_begin, header_end);
    } catch (const nlohmann::json::exception& ex) {
        throw ParseError(std::string("malformed header JSON: ") + ex.what());
    }
    if (!header.is_object()) {
        throw ParseError("header JSON must be an object");
    }

    const std::span<const std::byte> data_region = bytes.subspan(8 + header_len);

    Checkpoint ckpt;
    std::vector<Entry> entries;
    for (const auto& [name, value] : header.items()) {
        if (name == "__metadata__") {
            if (!value.is_object()) {
                throw ParseError("__metadata__ must be a string-to-string object");
            }
            std::map<std::string, std::string> meta;
            for (const auto& [key, item] : value.items()) {
                if (!item.is_string()) {
                    throw ParseError("__metadata__ value for '" + key + "' is not a string");
                }
                meta.emplace(key, item.get<std::string>());
            }
            ckpt.metadata = std::move(meta);
            continue;
        }
        if (!value.is_object()) {
            throw ParseError("tensor '" + name + "': entry is not an object");
        }
        Entry entry;
        entry.name = name;
        try {
            entry.dtype = dtype_from_name(value.at("dtype").get<std::string>());
            const auto& shape = value.at("shape");
            if (!shape.is_array()) {
                throw ParseError("shape must be an array");
            }
            for (const auto& dim : shape) {
                if (!dim.is_number_unsigned()) {
                    throw ParseError("shape entries must be non-negative integers");
                }
                entry.shape.push_back(dim.get<std::uint64_t>());
            }
            const auto& offsets = value.at("data_offsets");
            if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
                !offsets[1].is_number_unsigned()) {
                throw ParseError("data_offsets must be two non-negative integers");
            }
            entry.begin = offsets[0].get<std::uint64_t>();
            entry.end = offsets[1].get<std::uint64_t>();
        } catch (const ParseError& ex) {
            throw ParseError("tensor '" + name + "': " + ex.what());
        } catch (const nlohmann::json::exception& ex) {
            throw ParseError("tensor '" + name + "': " + ex.what());
        }
        entries.push_back(std::move(entry));
    }

    // Offsets may appear in any order on disk; validate them against each
    // other and the data region before materializing.
    std::vector<const Entry*> by_offset;
    by_offset.reserve(entries.size());
    for (const auto& entry : entries) by_offset.push_back(&entry);
    std::sort(by_offset.begin(), by_offset.end(), [](const Entry* a, const Entry* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    const Entry* previous = nullptr;
    for (const Entry* entry : by_offset) {
        if (entry->end < entry->begin) {
            throw ParseError("tensor '" + entry->name + "': data_offsets end precedes begin");
        }
        if (entry->end > data_region.size()) {
            throw ParseError("tensor '" + entry->name + "': data_offsets exceed the data region");
        }
        if (previous != nullptr && entry->begin < previous->end) {
            throw ParseError("tensor '" + entry->name + "': data overlaps tensor '" +
                             previous->name + "'");
        }
        previous = entry;
    }

    for (auto& entry : entries) {
        TensorRecord record;
        record.dtype = entry.dtype;
        record.shape = std::move(entry.shape);
        std::uint64_t expected = 0;
        try {
            expected = record.numel() * dtype_size(record.dtype);
        } catch (const ParseError& ex) {
            throw ParseError("tensor '" + entry.name + "': " + ex.what());
        }
        if (entry.end - entry.begin != expected) {
            throw ParseError("tensor '" + entry.name + "': data_offsets span " +
                             std::to_string(entry.end - entry.begin) + " bytes, expected " +
                             std::to_string(expected));
        }
        record.data.assign(data_region.begin() + entry.begin, data_region.begin() + entry.end);
        ckpt.tensors.emplace(std::move(entry.name), std::move(record));
    }
    return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    file.seekg(0, std::ios::end);
    const std::streamoff size = file.tellg();
    file.seekg(0, std::ios::beg);
    std::vector<std::byte> bytes(static_cast<std::size_t>(size));
    if (size > 0) {
        file.read(reinterpret_cast<char*>(bytes.data()), size);
    }
    if (!file) {
        throw IoError("failed to read '" + path.string() + "'");
    }
    try {
        return parse_checkpoint(bytes);
    } catch (const ParseError& ex) {
        throw ParseError(path.string() + ": " + ex.what());
    }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::vector<std::byte> bytes = serialize_checkpoint(ckpt);
    std::random_device rd;
    const auto tmp = path.parent_path() /
                     (path.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
        if (!file) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        file.write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        if (!file) {
            std::filesystem::remove(tmp);
            throw IoError("failed to write '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("failed to move temporary file onto '" + path.string() + "': " +
                      ec.message());
    }
}

}  // namespace stockpot
