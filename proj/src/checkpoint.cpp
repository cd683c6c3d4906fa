#include "stockpot/checkpoint.hpp"

#include <limits>
#include <set>

#include "stockpot/digest.hpp"
#include "stockpot/errors.hpp"
#include "stockpot/tensor_store.hpp"

namespace stockpot {

std::uint64_t TensorRecord::numel() const {
    std::uint64_t count = 1;
    for (const std::uint64_t dim : shape) {
        if (dim != 0 && count > std::numeric_limits<std::uint64_t>::max() / dim) {
            throw ParseError("tensor shape product overflows");
        }
        count *= dim;
    }
    return count;
}

std::vector<double> TensorRecord::to_f64() const {
    std::vector<double> out(numel());
    decode_values(dtype, data, out);
    return out;
}

TensorRecord TensorRecord::from_f64(DType dtype, std::vector<std::uint64_t> shape,
                                    std::span<const double> values) {
    TensorRecord record;
    record.dtype = dtype;
    record.shape = std::move(shape);
    if (record.numel() != values.size()) {
        throw NumericError("value count does not match tensor shape");
    }
    record.data.resize(values.size() * dtype_size(dtype));
    encode_values(dtype, values, record.data);
    return record;
}

std::uint64_t Checkpoint::total_elements() const {
    std::uint64_t total = 0;
    for (const auto& [name, record] : tensors) total += record.numel();
    return total;
}

bool Checkpoint::same_schema_as(const Checkpoint& other) const {
    if (tensors.size() != other.tensors.size()) return false;
    auto it = other.tensors.begin();
    for (const auto& [name, record] : tensors) {
        if (it->first != name || it->second.dtype != record.dtype ||
            it->second.shape != record.shape) {
            return false;
        }
        ++it;
    }
    return true;
}

Dense to_dense(const Checkpoint& ckpt) {
    Dense dense;
    dense.names.reserve(ckpt.tensors.size());
    for (const auto& [name, record] : ckpt.tensors) {
        dense.names.push_back(name);
        dense.shapes.push_back(record.shape);
        dense.values.push_back(record.to_f64());
    }
    return dense;
}

Checkpoint from_dense(const Dense& dense, const Checkpoint& schema) {
    Checkpoint out;
    for (std::size_t i = 0; i < dense.tensor_count(); ++i) {
        const auto it = schema.tensors.find(dense.names[i]);
        const DType dtype = it != schema.tensors.end() ? it->second.dtype : DType::F64;
        out.tensors.emplace(dense.names[i],
                            TensorRecord::from_f64(dtype, dense.shapes[i], dense.values[i]));
    }
    return out;
}

namespace {

std::string render_shape(const std::vector<std::uint64_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

}  // namespace

SchemaReport validate_schema(std::span<const Checkpoint> ensemble) {
    SchemaReport report;
    if (ensemble.empty()) {
        throw SchemaError("validate_schema requires a non-empty ensemble");
    }
    std::set<std::string> all_names;
    for (const auto& ckpt : ensemble) {
        for (const auto& [name, record] : ckpt.tensors) all_names.insert(name);
    }
    for (const auto& name : all_names) {
        std::vector<const TensorRecord*> records;
        bool all_present = true;
        for (const auto& ckpt : ensemble) {
            const auto it = ckpt.tensors.find(name);
            records.push_back(it == ckpt.tensors.end() ? nullptr : &it->second);
            all_present &= records.back() != nullptr;
        }
        if (!all_present) {
            SchemaMismatch miss{name, "presence", {}};
            for (const auto* r : records) miss.values.push_back(r ? "present" : "absent");
            report.mismatches.push_back(std::move(miss));
            continue;
        }
        bool shapes_match = true;
        bool dtypes_match = true;
        for (const auto* r : records) {
            shapes_match &= r->shape == records.front()->shape;
            dtypes_match &= r->dtype == records.front()->dtype;
        }
        if (!shapes_match) {
            SchemaMismatch miss{name, "shape", {}};
            for (const auto* r : records) miss.values.push_back(render_shape(r->shape));
            report.mismatches.push_back(std::move(miss));
        }
        if (!dtypes_match) {
            SchemaMismatch miss{name, "dtype", {}};
            for (const auto* r : records) miss.values.emplace_back(dtype_name(r->dtype));
            report.mismatches.push_back(std::move(miss));
        }
    }
    report.compatible = report.mismatches.empty();
    return report;
}

std::string content_digest(const Checkpoint& ckpt) {
    const std::vector<std::byte> bytes = serialize_checkpoint(ckpt);
    return sha256_hex(bytes);
}

}  // namespace stockpot
