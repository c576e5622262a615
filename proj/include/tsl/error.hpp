#pragma once

#include <stdexcept>
#include <string>

namespace tsl {

enum class errc {
    parameter,
    domain,
    input,
    grid_alignment,
    dc_mode,
    mean_zero,
    accuracy,
    precondition,
    truncation,
    seeding,
    construction,
    io,
};

inline const char* errc_name(errc c) {
    switch (c) {
    case errc::parameter: return "parameter";
    case errc::domain: return "domain";
    case errc::input: return "input";
    case errc::grid_alignment: return "grid-alignment";
    case errc::dc_mode: return "dc-mode";
    case errc::mean_zero: return "mean-zero";
    case errc::accuracy: return "accuracy";
    case errc::precondition: return "precondition";
    case errc::truncation: return "truncation";
    case errc::seeding: return "seeding";
    case errc::construction: return "construction";
    case errc::io: return "io";
    }
    return "unknown";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + " error: " + what), code_(code) {}
    errc code() const noexcept { return code_; }

private:
    errc code_;
};

}  // namespace tsl
