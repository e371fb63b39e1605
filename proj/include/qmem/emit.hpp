#pragma once

// Writing run artifacts: CSV tables (9 significant digits, RFC 4180 quoting)
// plus a config echo, or one JSON document at full binary precision. Output
// bytes depend only on the artifact, never on time or environment, unless a
// creation timestamp was explicitly attached.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qmem/error.hpp"
#include "qmem/scenarios.hpp"

namespace qmem {

enum class OutputFormat { Csv, Json };

namespace detail {

inline std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string csv_cell(const Cell& c) {
    if (const auto* s = std::get_if<std::string>(&c)) return csv_quote(*s);
    if (const auto* d = std::get_if<double>(&c)) return format_number(*d);
    return std::to_string(std::get<std::int64_t>(c));
}

inline Json json_cell(const Cell& c) {
    return std::visit([](const auto& v) { return Json(v); }, c);
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

} // namespace detail

inline std::string to_csv(const Table& t) {
    std::ostringstream os;
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << detail::csv_quote(t.columns[i]);
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << detail::csv_cell(row[i]);
        os << '\n';
    }
    return os.str();
}

inline Table fits_table(const RunArtifact& a) {
    Table t{a.scenario + "_fits", {"fit", "quantity", "value", "variance"}, {}};
    for (const auto& [name, f] : a.fits) {
        for (std::size_t k = 0; k < f.parameters.size(); ++k)
            t.rows.push_back({name, f.parameters[k].first, f.parameters[k].second,
                              k < f.covariance_diag.size() ? f.covariance_diag[k] : std::nan("")});
        t.rows.push_back({name, std::string("residual_norm"), f.residual_norm, std::nan("")});
        t.rows.push_back({name, std::string("iterations"), static_cast<std::int64_t>(f.iterations), std::nan("")});
        t.rows.push_back({name, std::string("at_bound"), static_cast<std::int64_t>(f.at_bound), std::nan("")});
        if (f.profile_interval) {
            t.rows.push_back({name, std::string("profile_lower"), f.profile_interval->first, std::nan("")});
            t.rows.push_back({name, std::string("profile_upper"), f.profile_interval->second, std::nan("")});
        }
    }
    return t;
}

inline Json to_json(const RunArtifact& a) {
    Json j;
    j["format_version"] = kFormatVersion;
    j["scenario"] = a.scenario;
    j["config"] = a.config_echo;
    j["tables"] = Json::object();
    for (const auto& t : a.tables) {
        Json rows = Json::array();
        for (const auto& row : t.rows) {
            Json r = Json::array();
            for (const auto& c : row) r.push_back(detail::json_cell(c));
            rows.push_back(std::move(r));
        }
        j["tables"][t.name] = {{"columns", t.columns}, {"rows", std::move(rows)}};
    }
    j["fits"] = Json::object();
    for (const auto& [name, f] : a.fits) j["fits"][name] = fit_to_json(f);
    j["errors"] = a.errors;
    j["notes"] = a.notes;
    if (a.created_at) j["created_at"] = *a.created_at;
    return j;
}

/// Writes the artifact under `dir` and returns the paths written.
inline std::vector<std::filesystem::path> emit(const RunArtifact& a, const std::set<OutputFormat>& formats,
                                               const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
        throw IoError("cannot create output directory '" + dir.string() + "'");
    std::vector<std::filesystem::path> written;
    if (formats.count(OutputFormat::Csv)) {
        for (const auto& t : a.tables) {
            written.push_back(dir / (t.name + ".csv"));
            detail::write_file(written.back(), to_csv(t));
        }
        if (!a.fits.empty()) {
            const Table ft = fits_table(a);
            written.push_back(dir / (ft.name + ".csv"));
            detail::write_file(written.back(), to_csv(ft));
        }
        written.push_back(dir / (a.scenario + "_config.json"));
        detail::write_file(written.back(), a.config_echo.dump(2) + "\n");
    }
    if (formats.count(OutputFormat::Json)) {
        written.push_back(dir / (a.scenario + ".json"));
        detail::write_file(written.back(), to_json(a).dump(2) + "\n");
    }
    return written;
}

} // namespace qmem
