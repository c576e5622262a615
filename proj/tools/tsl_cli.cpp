#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tsl/experiments.hpp"

namespace {

struct Flags {
    std::string config, out, format;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
};

std::string read_text(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw tsl::error(tsl::errc::io, "cannot open " + path + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

int threads_from_env() {
    const char* s = std::getenv("TSL_THREADS");
    if (!s || !*s) return 1;
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (*end || v < 1 || v > 256) throw tsl::error(tsl::errc::input, std::string("TSL_THREADS must be an integer in 1..256, got '") + s + "'");
    return int(v);
}

int run(const std::string& experiment, const Flags& f) {
    std::vector<std::string> errs;
    nlohmann::json raw = f.config.empty() ? nlohmann::json::object() : tsl::config_object(read_text(f.config), errs);
    if (raw.contains("experiment") && raw["experiment"] != experiment)
        errs.push_back("config names experiment " + raw["experiment"].dump() + " but the subcommand is '" + experiment + "'");
    raw["experiment"] = experiment;
    // --set key=value overrides the file
    const auto overrides = tsl::config_object([&] {
        std::string t;
        for (const auto& s : f.set) t += s + "\n";
        return t;
    }(), errs);
    for (const auto& [k, v] : overrides.items()) raw[k] = v;
    if (f.seed) raw["seed"] = *f.seed;

    auto cfg = tsl::config_from_object(raw, std::move(errs));
    auto format = cfg.format.value_or(tsl::ReportFormat::json);
    if (f.format == "csv") format = tsl::ReportFormat::csv;
    if (f.format == "json") format = tsl::ReportFormat::json;
    const int threads = f.threads ? *f.threads : threads_from_env();

    const auto report = tsl::run_experiment(cfg, threads);
    const std::string out = !f.out.empty() ? f.out : cfg.output.value_or("");
    if (out.empty() || out == "-")
        std::cout << tsl::render_report(report, format);
    else
        tsl::emit_report(report, format, out);
    if (report.inconclusive) {
        std::cerr << "tsl_cli: " << experiment << ": result flagged inconclusive\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trace Sobolev stability lab: batch experiment driver"};
    app.require_subcommand(1);
    Flags flags;
    for (const auto& name : tsl::experiment_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", flags.config, "config file (key=value lines or a JSON object)")->check(CLI::ExistingFile);
        sub->add_option("--set", flags.set, "override one config key, key=value (repeatable)");
        sub->add_option("--out", flags.out, "report path; stdout when absent or '-'");
        sub->add_option("--format", flags.format, "report format")->check(CLI::IsMember({"json", "csv"}));
        sub->add_option("--seed", flags.seed, "random seed");
        sub->add_option("--threads", flags.threads, "worker threads (falls back to TSL_THREADS)")->check(CLI::Range(1, 256));
    }
    CLI11_PARSE(app, argc, argv);
    const auto* sub = app.get_subcommands().front();
    try {
        return run(sub->get_name(), flags);
    } catch (const tsl::error& e) {
        std::cerr << "tsl_cli: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "tsl_cli: " << sub->get_name() << ": " << e.what() << "\n";
        return 1;
    }
}
