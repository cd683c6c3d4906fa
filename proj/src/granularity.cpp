#include "stockpot/granularity.hpp"

#include <map>

#include "stockpot/errors.hpp"

namespace stockpot {

GranularityKind granularity_kind_from_name(const std::string& name) {
    if (name == "global") return GranularityKind::Global;
    if (name == "tensor") return GranularityKind::PerTensor;
    if (name == "filter") return GranularityKind::PerFilter;
    if (name == "block") return GranularityKind::PerBlock;
    throw NumericError("unknown granularity '" + name + "' (expected global|tensor|filter|block)");
}

std::string_view granularity_kind_name(GranularityKind kind) {
    switch (kind) {
        case GranularityKind::Global: return "global";
        case GranularityKind::PerTensor: return "tensor";
        case GranularityKind::PerFilter: return "filter";
        case GranularityKind::PerBlock: return "block";
    }
    return "?";
}

namespace {

std::string classify_rank(std::size_t rank) {
    if (rank >= 2) return "weight";
    if (rank == 1) return "bias";
    return "other";
}

// A multi-tensor unit is classed by the common rank class of its members,
// "other" when mixed.
std::string classify_unit(const Dense& schema, const Unit& unit) {
    std::string klass;
    for (const auto& segment : unit.segments) {
        const std::string k = classify_rank(schema.shapes[segment.tensor_index].size());
        if (klass.empty()) {
            klass = k;
        } else if (klass != k) {
            return "other";
        }
    }
    return klass.empty() ? "other" : klass;
}

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
    std::uint64_t n = 1;
    for (const std::uint64_t dim : shape) n *= dim;
    return n;
}

}  // namespace

std::vector<Unit> build_units(const Dense& schema, const Granularity& granularity) {
    std::vector<Unit> units;
    switch (granularity.kind) {
        case GranularityKind::Global: {
            Unit all;
            all.key = "all";
            for (std::size_t t = 0; t < schema.tensor_count(); ++t) {
                const std::uint64_t n = element_count(schema.shapes[t]);
                all.segments.push_back({t, 0, n});
                all.dim += n;
            }
            all.klass = classify_unit(schema, all);
            units.push_back(std::move(all));
            break;
        }
        case GranularityKind::PerTensor: {
            for (std::size_t t = 0; t < schema.tensor_count(); ++t) {
                const std::uint64_t n = element_count(schema.shapes[t]);
                Unit unit;
                unit.key = schema.names[t];
                unit.klass = classify_rank(schema.shapes[t].size());
                unit.dim = n;
                unit.segments.push_back({t, 0, n});
                units.push_back(std::move(unit));
            }
            break;
        }
        case GranularityKind::PerFilter: {
            for (std::size_t t = 0; t < schema.tensor_count(); ++t) {
                const auto& shape = schema.shapes[t];
                const std::uint64_t n = element_count(shape);
                if (shape.size() < 2 || shape[0] == 0) {
                    Unit unit;
                    unit.key = schema.names[t];
                    unit.klass = classify_rank(shape.size());
                    unit.dim = n;
                    unit.segments.push_back({t, 0, n});
                    units.push_back(std::move(unit));
                    continue;
                }
                const std::uint64_t stride = n / shape[0];
                for (std::uint64_t f = 0; f < shape[0]; ++f) {
                    Unit unit;
                    unit.key = schema.names[t] + "[" + std::to_string(f) + "]";
                    unit.klass = "weight";
                    unit.dim = stride;
                    unit.segments.push_back({t, f * stride, (f + 1) * stride});
                    units.push_back(std::move(unit));
                }
            }
            break;
        }
        case GranularityKind::PerBlock: {
            // Group labels first in label order, then unmapped singletons.
            std::map<std::string, Unit> groups;
            std::vector<Unit> singles;
            for (std::size_t t = 0; t < schema.tensor_count(); ++t) {
                const std::uint64_t n = element_count(schema.shapes[t]);
                const auto it = granularity.block_map.find(schema.names[t]);
                if (it == granularity.block_map.end()) {
                    Unit unit;
                    unit.key = schema.names[t];
                    unit.klass = classify_rank(schema.shapes[t].size());
                    unit.dim = n;
                    unit.segments.push_back({t, 0, n});
                    singles.push_back(std::move(unit));
                    continue;
                }
                Unit& unit = groups[it->second];
                unit.key = it->second;
                unit.segments.push_back({t, 0, n});
                unit.dim += n;
            }
            for (auto& [label, unit] : groups) {
                unit.klass = classify_unit(schema, unit);
                units.push_back(std::move(unit));
            }
            for (auto& unit : singles) units.push_back(std::move(unit));
            break;
        }
    }
    return units;
}

}  // namespace stockpot
