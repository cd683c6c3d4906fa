#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stockpot/checkpoint.hpp"

namespace stockpot {

enum class GranularityKind : std::uint8_t { Global, PerTensor, PerFilter, PerBlock };

// The vector over which one angle, one norm, and one interpolation ratio
// are computed: the whole model, one tensor, one leading-dimension slice of
// a rank >= 2 tensor, or a named group of tensors.
struct Granularity {
    GranularityKind kind = GranularityKind::PerTensor;
    std::map<std::string, std::string> block_map;  // PerBlock only

    static Granularity global() { return {GranularityKind::Global, {}}; }
    static Granularity per_tensor() { return {GranularityKind::PerTensor, {}}; }
    static Granularity per_filter() { return {GranularityKind::PerFilter, {}}; }
    static Granularity per_block(std::map<std::string, std::string> map) {
        return {GranularityKind::PerBlock, std::move(map)};
    }
};

GranularityKind granularity_kind_from_name(const std::string& name);
std::string_view granularity_kind_name(GranularityKind kind);

// A contiguous element range [begin, end) inside one tensor of a Dense view.
struct UnitSegment {
    std::size_t tensor_index;
    std::uint64_t begin;
    std::uint64_t end;
};

struct Unit {
    std::string key;
    std::string klass;  // "weight" (rank >= 2), "bias" (rank 1), "other"
    std::uint64_t dim = 0;
    std::vector<UnitSegment> segments;
};

// Splits a schema into units. PerFilter slices along the leading dimension
// of rank >= 2 tensors and falls back to PerTensor for rank <= 1. PerBlock
// groups tensors under their mapped label; unmapped tensors keep their own
// name as a singleton unit.
std::vector<Unit> build_units(const Dense& schema, const Granularity& granularity);

}  // namespace stockpot
