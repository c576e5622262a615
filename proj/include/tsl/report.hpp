#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace tsl {

enum class ReportFormat { json, csv };

// {experiment, params, series:[{x,y}...], derived, provenance}
struct Report {
    std::string experiment;
    nlohmann::json params = nlohmann::json::object();
    std::vector<std::pair<double, double>> series;
    nlohmann::json derived = nlohmann::json::object();
    nlohmann::json provenance = nlohmann::json::object();
    bool inconclusive = false;

    nlohmann::json to_json() const {
        nlohmann::json s = nlohmann::json::array();
        for (const auto& [x, y] : series) s.push_back({{"x", x}, {"y", y}});
        nlohmann::json d = derived;
        d["inconclusive"] = inconclusive;
        return {{"experiment", experiment}, {"params", params}, {"series", s}, {"derived", d}, {"provenance", provenance}};
    }

    static Report from_json(const nlohmann::json& j) {
        Report r;
        try {
            r.experiment = j.at("experiment").get<std::string>();
            r.params = j.at("params");
            for (const auto& p : j.at("series"))
                r.series.emplace_back(p.at("x").is_null() ? NAN : p.at("x").get<double>(),
                                      p.at("y").is_null() ? NAN : p.at("y").get<double>());
            r.derived = j.at("derived");
            r.inconclusive = r.derived.value("inconclusive", false);
            r.derived.erase("inconclusive");
            r.provenance = j.at("provenance");
        } catch (const nlohmann::json::exception& e) {
            throw error(errc::input, std::string("malformed report: ") + e.what());
        }
        return r;
    }
};

inline std::string render_report(const Report& r, ReportFormat f) {
    if (f == ReportFormat::json) return r.to_json().dump(2) + "\n";
    std::string out = "x,y\n";
    char buf[64];
    for (const auto& [x, y] : r.series) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", x, y);
        out += buf;
    }
    return out;
}

inline void emit_report(const Report& r, ReportFormat f, const std::string& path) {
    const auto text = render_report(r, f);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw error(errc::io, "cannot open " + path + ": " + std::strerror(errno));
    os.write(text.data(), std::streamsize(text.size()));
    os.flush();
    if (!os) throw error(errc::io, "write failed for " + path + ": " + std::strerror(errno));
}

}  // namespace tsl
