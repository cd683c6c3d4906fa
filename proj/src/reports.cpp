#include "stockpot/reports.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include "stockpot/errors.hpp"

namespace stockpot {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt_double(double value) {
    char buffer[40];
    std::snprintf(buffer, sizeof(buffer), "%.17g", value);
    return buffer;
}

// RFC-4180 quoting for fields that carry delimiters (tensor names are
// arbitrary UTF-8).
std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\n") == std::string::npos) return value;
    std::string out = "\"";
    for (const char c : value) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

ordered_json to_json(const SchemaReport& report) {
    ordered_json json;
    json["compatible"] = report.compatible;
    json["mismatches"] = ordered_json::array();
    for (const auto& miss : report.mismatches) {
        ordered_json m;
        m["tensor"] = miss.tensor;
        m["field"] = miss.field;
        m["values"] = miss.values;
        json["mismatches"].push_back(std::move(m));
    }
    return json;
}

ordered_json to_json(const GeometryReport& report) {
    ordered_json json;
    json["model_count"] = report.model_count;
    json["granularity"] = report.granularity;
    json["units"] = ordered_json::array();
    for (const auto& row : report.units) {
        ordered_json u;
        u["unit"] = row.unit;
        u["class"] = row.klass;
        u["n"] = row.n;
        u["mean_angle_deg"] = row.mean_angle_deg;
        u["std_angle_deg"] = row.std_angle_deg;
        u["mean_norm_per_sqrt_n"] = row.mean_norm_per_sqrt_n;
        u["std_norm"] = row.std_norm;
        u["pairs"] = row.pairs;
        u["degenerate"] = row.degenerate;
        json["units"].push_back(std::move(u));
    }
    return json;
}

std::string to_csv(const GeometryReport& report) {
    std::string out = "unit,class,n,mean_angle_deg,std_angle_deg,mean_norm_per_sqrt_n,std_norm,pairs\n";
    for (const auto& row : report.units) {
        out += csv_field(row.unit) + "," + row.klass + "," + std::to_string(row.n) + "," +
               fmt_double(row.mean_angle_deg) + "," + fmt_double(row.std_angle_deg) + "," +
               fmt_double(row.mean_norm_per_sqrt_n) + "," + fmt_double(row.std_norm) + "," +
               std::to_string(row.pairs) + "\n";
    }
    return out;
}

ordered_json to_json(const PropertyReport& report) {
    ordered_json json;
    json["all_pass"] = report.all_pass();
    json["checks"] = ordered_json::array();
    for (const auto& check : report.checks) {
        ordered_json c;
        c["property"] = check.property;
        c["max_residual"] = check.max_residual;
        c["worst_unit"] = check.worst_unit;
        c["tolerance"] = check.tolerance;
        c["pass"] = check.pass;
        c["degenerate_units"] = check.degenerate_units;
        json["checks"].push_back(std::move(c));
    }
    return json;
}

std::string to_csv(const PropertyReport& report) {
    std::string out = "property,max_residual,worst_unit,tolerance,pass,degenerate_units\n";
    for (const auto& check : report.checks) {
        std::string degenerate;
        for (std::size_t i = 0; i < check.degenerate_units.size(); ++i) {
            if (i > 0) degenerate += "|";
            degenerate += check.degenerate_units[i];
        }
        out += check.property + "," + fmt_double(check.max_residual) + "," + csv_field(check.worst_unit) +
               "," + fmt_double(check.tolerance) + "," + (check.pass ? "true" : "false") + "," +
               csv_field(degenerate) + "\n";
    }
    return out;
}

ordered_json to_json(const RatioReport& report) {
    ordered_json json;
    json["warnings"] = report.warnings;
    json["units"] = ordered_json::array();
    for (const auto& row : report.units) {
        ordered_json u;
        u["unit"] = row.unit;
        u["class"] = row.klass;
        u["cos_theta"] = row.cos_theta;
        u["t"] = row.t;
        u["clamped"] = row.clamped;
        u["degenerate"] = row.degenerate;
        u["N"] = row.n_models;
        u["period"] = row.period;
        json["units"].push_back(std::move(u));
    }
    return json;
}

std::string to_csv(const RatioReport& report) {
    std::string out = "unit,class,cos_theta,t,clamped,degenerate,N,period\n";
    for (const auto& row : report.units) {
        out += csv_field(row.unit) + "," + row.klass + "," + fmt_double(row.cos_theta) + "," +
               fmt_double(row.t) + "," + (row.clamped ? "true" : "false") + "," +
               (row.degenerate ? "true" : "false") + "," + std::to_string(row.n_models) + "," +
               std::to_string(row.period) + "\n";
    }
    return out;
}

ordered_json to_json(const DistanceReport& report) {
    ordered_json json;
    json["global"] = report.global;
    json["units"] = ordered_json::array();
    for (const auto& row : report.units) {
        ordered_json u;
        u["unit"] = row.unit;
        u["distance"] = row.distance;
        json["units"].push_back(std::move(u));
    }
    return json;
}

std::string to_csv(const DistanceReport& report) {
    std::string out = "unit,distance\n";
    out += "(global)," + fmt_double(report.global) + "\n";
    for (const auto& row : report.units) {
        out += csv_field(row.unit) + "," + fmt_double(row.distance) + "\n";
    }
    return out;
}

ordered_json to_json(const ConcentrationReport& report) {
    ordered_json json;
    json["samples"] = report.samples;
    json["units"] = ordered_json::array();
    for (const auto& row : report.units) {
        ordered_json u;
        u["unit"] = row.unit;
        u["n"] = row.n;
        u["predicted_norm_mean"] = row.predicted_norm_mean;
        u["measured_norm_mean"] = row.measured_norm_mean;
        u["predicted_norm_std"] = row.predicted_norm_std;
        u["measured_norm_std"] = row.measured_norm_std;
        u["predicted_angle_mean_deg"] = row.predicted_angle_mean_deg;
        u["measured_angle_mean_deg"] = row.measured_angle_mean_deg;
        u["predicted_angle_std_deg"] = row.predicted_angle_std_deg;
        u["measured_angle_std_deg"] = row.measured_angle_std_deg;
        u["norm_mean_rel_deviation"] = row.norm_mean_rel_deviation;
        u["angle_mean_abs_deviation_deg"] = row.angle_mean_abs_deviation_deg;
        json["units"].push_back(std::move(u));
    }
    return json;
}

std::string to_csv(const ConcentrationReport& report) {
    std::string out =
        "unit,n,predicted_norm_mean,measured_norm_mean,predicted_norm_std,measured_norm_std,"
        "predicted_angle_mean_deg,measured_angle_mean_deg,predicted_angle_std_deg,"
        "measured_angle_std_deg,norm_mean_rel_deviation,angle_mean_abs_deviation_deg\n";
    for (const auto& row : report.units) {
        out += csv_field(row.unit) + "," + std::to_string(row.n) + "," + fmt_double(row.predicted_norm_mean) +
               "," + fmt_double(row.measured_norm_mean) + "," +
               fmt_double(row.predicted_norm_std) + "," + fmt_double(row.measured_norm_std) +
               "," + fmt_double(row.predicted_angle_mean_deg) + "," +
               fmt_double(row.measured_angle_mean_deg) + "," +
               fmt_double(row.predicted_angle_std_deg) + "," +
               fmt_double(row.measured_angle_std_deg) + "," +
               fmt_double(row.norm_mean_rel_deviation) + "," +
               fmt_double(row.angle_mean_abs_deviation_deg) + "\n";
    }
    return out;
}

ordered_json to_json(const GreedyTrace& trace) {
    ordered_json json;
    json["decisions"] = ordered_json::array();
    for (const auto& decision : trace.decisions) {
        ordered_json d;
        d["model_index"] = decision.model_index;
        d["digest"] = decision.digest;
        d["individual_score"] = decision.individual_score;
        d["tentative_score"] = decision.tentative_score;
        d["accepted"] = decision.accepted;
        json["decisions"].push_back(std::move(d));
    }
    json["selected"] = trace.selected;
    json["final_score"] = trace.final_score;
    return json;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::random_device rd;
    const auto tmp =
        path.parent_path() / (path.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream file(tmp, std::ios::binary | std::ios::trunc);
        if (!file) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        file.write(text.data(), static_cast<std::streamsize>(text.size()));
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

void write_json_file(const std::filesystem::path& path, const ordered_json& json) {
    write_text_file(path, json.dump(2) + "\n");
}

}  // namespace stockpot
