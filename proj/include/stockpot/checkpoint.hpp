#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stockpot/dtype.hpp"

namespace stockpot {

// One named tensor: storage dtype, shape, and raw little-endian row-major
// bytes exactly as they appear in the container file. Values are decoded
// to f64 on demand; keeping the raw bytes makes round trips bit-exact.
struct TensorRecord {
    DType dtype = DType::F32;
    std::vector<std::uint64_t> shape;
    std::vector<std::byte> data;

    // Product of the shape; an empty shape is a scalar with one element.
    std::uint64_t numel() const;
    std::size_t rank() const { return shape.size(); }

    std::vector<double> to_f64() const;
    static TensorRecord from_f64(DType dtype, std::vector<std::uint64_t> shape,
                                 std::span<const double> values);
};

// An ordered collection of tensors keyed by name. std::map iteration gives
// the canonical bytewise name-ascending order regardless of file layout.
struct Checkpoint {
    std::map<std::string, TensorRecord> tensors;
    std::optional<std::map<std::string, std::string>> metadata;

    std::uint64_t total_elements() const;
    bool same_schema_as(const Checkpoint& other) const;
};

// Flattened f64 view of a checkpoint: one vector per tensor, name-ascending.
// All geometry and merging operate on this representation.
struct Dense {
    std::vector<std::string> names;
    std::vector<std::vector<std::uint64_t>> shapes;
    std::vector<std::vector<double>> values;

    std::size_t tensor_count() const { return names.size(); }
};

Dense to_dense(const Checkpoint& ckpt);

// Rebuilds a checkpoint from dense values, rounding each tensor to the
// storage dtype found in `schema` (round to nearest, ties to even).
Checkpoint from_dense(const Dense& dense, const Checkpoint& schema);

struct SchemaMismatch {
    std::string tensor;
    std::string field;                // "presence" | "shape" | "dtype"
    std::vector<std::string> values;  // rendered per input checkpoint
};

struct SchemaReport {
    bool compatible = true;
    std::vector<SchemaMismatch> mismatches;
};

// Compatible iff every checkpoint has identical name sets and, per name,
// identical shapes and dtypes. A single checkpoint is vacuously compatible.
SchemaReport validate_schema(std::span<const Checkpoint> ensemble);

// SHA-256 of the canonical serialization (see tensor_store). Stable across
// runs and processes; used for deterministic ensemble ordering.
std::string content_digest(const Checkpoint& ckpt);

}  // namespace stockpot
