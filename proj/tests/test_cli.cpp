#include <gtest/gtest.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "tsl/experiments.hpp"

using namespace tsl;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("tsl_cli_test_" + name)).string();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

std::string error_text(const std::string& cfg) {
    try {
        parse_config(cfg);
    } catch (const error& e) {
        return e.what();
    }
    return "";
}

int count_lines(const std::string& s) { return int(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

// ---- parsing ----

TEST(Config, MinimalQuotientScanGetsDefaults) {
    const auto c = parse_config("experiment = quotient-scan\n");
    EXPECT_EQ(c.experiment, "quotient-scan");
    EXPECT_EQ(c.n, 3);
    EXPECT_EQ(c.N, 1024);
    EXPECT_EQ(c.L, 80);
    EXPECT_EQ(c.epsilons.size(), 4u);
    EXPECT_FALSE(c.output);
}

TEST(Config, KeyValueAndJsonAgree) {
    const auto a = parse_config("# comment\nexperiment=constants\nn=4\nm=2\nalpha=1.5   # trailing\nseed=7\n");
    const auto b = parse_config(R"({"experiment": "constants", "n": 4, "m": 2, "alpha": 1.5, "seed": 7})");
    EXPECT_EQ(a.params(), b.params());
    EXPECT_EQ(a.params()["alpha"], 1.5);
    const auto e = parse_config("experiment=quotient-scan\nepsilons=0.01, 0.02,0.03\n");
    EXPECT_EQ(e.epsilons, (std::vector<double>{0.01, 0.02, 0.03}));
    const auto j = parse_config(R"({"experiment": "quotient-scan", "epsilons": [0.01, 0.02, 0.03], "format": "csv"})");
    EXPECT_EQ(j.epsilons, e.epsilons);
    EXPECT_EQ(*j.format, ReportFormat::csv);
}

TEST(Config, AlphaOutsideRangePrintsInequality) {
    const auto msg = error_text("experiment=constants\nn=3\nm=1\nalpha=2\n");
    EXPECT_NE(msg.find("need m/2 < alpha < n/2, got 0.5 < 2 < 1.5 violated"), std::string::npos) << msg;
}

TEST(Config, DuplicateKeysRejected) {
    EXPECT_NE(error_text("experiment=constants\nn=3\nn=4\n").find("duplicate key 'n'"), std::string::npos);
    EXPECT_NE(error_text(R"({"experiment": "constants", "n": 3, "n": 4})").find("duplicate key 'n'"), std::string::npos);
}

TEST(Config, UnknownAndMisplacedKeysNamed) {
    EXPECT_NE(error_text("experiment=constants\nfoo=1\n").find("unknown key 'foo'"), std::string::npos);
    EXPECT_NE(error_text("experiment=constants\nnu=2\n").find("key 'nu' does not apply to experiment 'constants'"),
              std::string::npos);
    EXPECT_NE(error_text("experiment=bogus\n").find("unknown experiment 'bogus'"), std::string::npos);
    EXPECT_NE(error_text("n=3\n").find("missing key 'experiment'"), std::string::npos);
}

TEST(Config, AllViolationsListed) {
    const auto msg = error_text("experiment=quotient-scan\nn=5\nepsilons=0.2,0.01\nfoo=1\nformat=xml\n");
    EXPECT_NE(msg.find("5 config violations"), std::string::npos) << msg;
    EXPECT_NE(msg.find("n = 3 or 4"), std::string::npos);
    EXPECT_NE(msg.find("at least 3 epsilons"), std::string::npos);
    EXPECT_NE(msg.find("(0, 0.1], got 0.2"), std::string::npos);
    EXPECT_NE(msg.find("unknown key 'foo'"), std::string::npos);
    EXPECT_NE(msg.find("format must be json or csv"), std::string::npos);
}

TEST(Config, TypeErrors) {
    EXPECT_NE(error_text("experiment=constants\nn=3.5\n").find("n must be an integer"), std::string::npos);
    EXPECT_NE(error_text("experiment=constants\nalpha=nan\n").find("alpha must be a finite number"), std::string::npos);
    EXPECT_NE(error_text("experiment=sharpness\ndelta=abc\n").find("delta must be a finite number"), std::string::npos);
    EXPECT_NE(error_text("experiment=constants\nseed=-1\n").find("seed must be a nonnegative integer"), std::string::npos);
    EXPECT_NE(error_text("experiment=constants\nn\n").find("line 2: expected key=value"), std::string::npos);
    EXPECT_NE(error_text("{\"experiment\": ").find("JSON syntax"), std::string::npos);
    EXPECT_NE(error_text("experiment=fit\n").find("snapshot path is required"), std::string::npos);
    EXPECT_NE(error_text("experiment=reduction\nN=100\n").find("power of two"), std::string::npos);
    EXPECT_NE(error_text("experiment=embedding\nn=3\nN=512\n").find("exceeds 2^24"), std::string::npos);
    EXPECT_EQ(parse_config("experiment=constants\nseed=18446744073709551615\n").seed, 18446744073709551615ull);
}

// ---- reports ----

TEST(Report, ConstantsContainSharpValue) {
    const auto r = run_experiment(parse_config("experiment=constants\nn=3\nm=1\nalpha=1\n"));
    const auto text = render_report(r, ReportFormat::json);
    EXPECT_NE(text.find("3.544907701811"), std::string::npos);
    EXPECT_NEAR(r.derived["sharp_trace_constant"].get<double>(), 2 * std::sqrt(pi), 1e-12);
    EXPECT_FALSE(r.inconclusive);
}

TEST(Report, JsonRoundTripIsByteIdentical) {
    const auto r = run_experiment(parse_config("experiment=bubbles\n"));
    const auto a = render_report(r, ReportFormat::json);
    const auto b = render_report(Report::from_json(nlohmann::json::parse(a)), ReportFormat::json);
    EXPECT_EQ(a, b);
    const auto j = nlohmann::json::parse(a);
    for (const char* k : {"experiment", "params", "series", "derived", "provenance"}) EXPECT_TRUE(j.contains(k)) << k;
    for (const char* k : {"grid", "tolerances", "seed"}) EXPECT_TRUE(j["provenance"].contains(k)) << k;
}

TEST(Report, EmptySeriesAndCsv) {
    Report r;
    r.experiment = "constants";
    const auto j = nlohmann::json::parse(render_report(r, ReportFormat::json));
    EXPECT_TRUE(j["series"].is_array());
    EXPECT_TRUE(j["series"].empty());
    EXPECT_EQ(render_report(r, ReportFormat::csv), "x,y\n");
    r.series = {{0.1, 1.0}, {0.2, 2.0}, {0.3, 3.5}};
    const auto csv = render_report(r, ReportFormat::csv);
    EXPECT_EQ(count_lines(csv), 4);
    EXPECT_EQ(csv.substr(0, 4), "x,y\n");
}

TEST(Report, EmitWritesAndSurfacesIoErrors) {
    Report r;
    r.experiment = "constants";
    r.series = {{1, 2}};
    const auto path = tmp_path("emit.json");
    emit_report(r, ReportFormat::json, path);
    EXPECT_EQ(slurp(path), render_report(r, ReportFormat::json));
    emit_report(r, ReportFormat::json, path);
    EXPECT_EQ(slurp(path), render_report(r, ReportFormat::json));
    std::filesystem::remove(path);
    try {
        emit_report(r, ReportFormat::json, "/nonexistent-dir/x.json");
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), errc::io);
        EXPECT_NE(std::string(e.what()).find("No such file or directory"), std::string::npos) << e.what();
    }
}

TEST(Report, DeterministicUnderSeed) {
    for (const char* cfg : {"experiment=steklov\nseed=5\n", "experiment=reduction\nn=2\nN=128\nL=6\nseed=3\n"}) {
        const auto c = parse_config(cfg);
        EXPECT_EQ(render_report(run_experiment(c), ReportFormat::json), render_report(run_experiment(c, 3), ReportFormat::json));
    }
    auto c = parse_config("experiment=reduction\nn=2\nN=128\nL=6\nseed=3\n");
    const auto a = run_experiment(c);
    c.seed = 4;
    EXPECT_NE(a.series, run_experiment(c).series);
}

TEST(Report, QuotientScanDefaultLimit) {
    const auto r = run_experiment(parse_config("experiment=quotient-scan\n"), 2);
    EXPECT_NEAR(r.derived["limit"].get<double>(), 0.4, 1e-3);
    EXPECT_TRUE(r.derived["certified_below"].get<bool>());
    EXPECT_FALSE(r.inconclusive);
    EXPECT_EQ(r.series.size(), 8u);
}

TEST(Report, FitOnExactBubbleSnapshot) {
    const auto G = GridField::zeros({256, 256}, 40.0 / 256);
    const auto path = tmp_path("bubble.tslf");
    write_snapshot(HarmonicField::bubble(Bubble({1.0, -0.5}, 1.5, 3)).values_at(G, 0), path);
    const auto r = run_experiment(parse_config("experiment=fit\nsnapshot=" + path + "\n"));
    EXPECT_FALSE(r.inconclusive);
    EXPECT_LE(r.derived["distance"].get<double>(), 1e-6);
    EXPECT_NEAR(r.derived["bubbles"][0]["lambda"].get<double>(), 1.5, 1e-6);
    EXPECT_EQ(r.params["n"], 3);
    std::filesystem::remove(path);
    try {
        run_experiment(parse_config("experiment=fit\nsnapshot=" + path + "\n"));
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.code(), errc::io);
        EXPECT_NE(std::string(e.what()).find("fit: "), std::string::npos) << e.what();
    }
}

// ---- fuzz corpus ----

namespace {

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

std::string mutate(std::mt19937_64& rng, const std::string& base) {
    static const std::vector<std::string> values{"-1", "0", "1", "2", "3", "4", "5", "7", "0.5", "1.5", "2.5",
                                                 "1e-9", "0.3", "abc", "", "nan", "inf", "1e308", "0.05", "0.2",
                                                 "3.7", "0.01,0.02", "0.01,0.02,0.5", "-0.01,0.02,0.03", "16", "32"};
    static const std::vector<std::string> keys{"n", "m", "alpha", "nu", "delta", "N", "L", "epsilons", "seed", "foo", "format"};
    auto pick = [&](std::size_t k) { return std::uniform_int_distribution<std::size_t>(0, k - 1)(rng); };
    auto lines = split_lines(base);
    const int rounds = 1 + int(pick(2));
    for (int r = 0; r < rounds; ++r) {
        const auto i = pick(lines.size());
        switch (pick(6)) {
        case 0: {  // new value
            const auto eq = lines[i].find('=');
            lines[i] = lines[i].substr(0, eq + 1) + values[pick(values.size())];
            break;
        }
        case 1:
            if (lines.size() > 1) lines.erase(lines.begin() + long(i));
            break;
        case 2: lines.push_back(lines[i]); break;
        case 3: lines.push_back(keys[pick(keys.size())] + "=" + values[pick(values.size())]); break;
        case 4: lines[0] = "experiment=" + (pick(4) ? experiment_names()[pick(experiment_names().size())] : "bogus"); break;
        default: lines.insert(lines.begin() + long(i), "garbage line"); break;
        }
    }
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

}  // namespace

TEST(Config, FuzzCorpusCaughtAtParseTime) {
    const std::vector<std::string> bases{
        "experiment=constants\nn=3\nm=1\nalpha=1\n",
        "experiment=bubbles\nn=3\n",
        "experiment=steklov\nn=4\n",
        "experiment=sharpness\nn=3\nnu=2\ndelta=0.1\n",
        "experiment=quotient-scan\nn=3\nepsilons=0.005,0.01,0.015,0.02\n",
        "experiment=embedding\nn=2\nm=1\nalpha=0.75\nN=64\nL=8\n",
        "experiment=reduction\nn=2\nm=1\nalpha=1\nN=64\nL=6\n",
        "experiment=dual\nn=3\nN=256\nL=20\n",
    };
    std::mt19937_64 rng(20240601);
    int rejected = 0, ran = 0, numerical = 0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 100; ++i) {
        const auto text = mutate(rng, bases[i % bases.size()]);
        std::optional<ExperimentConfig> cfg;
        try {
            cfg = parse_config(text);
        } catch (const error& e) {
            EXPECT_EQ(e.code(), errc::input) << text;
            ++rejected;
            continue;
        }
        // a config that parsed must not trip a module precondition
        try {
            const auto r = run_experiment(*cfg);
            EXPECT_EQ(Report::from_json(r.to_json()).to_json(), r.to_json());
            ++ran;
        } catch (const error& e) {
            EXPECT_TRUE(e.code() == errc::accuracy || e.code() == errc::truncation || e.code() == errc::construction)
                << "config:\n" << text << "error: " << e.what();
            ++numerical;
        }
    }
    std::printf("fuzz: %d rejected at parse time, %d ran, %d numerical failures (%.1f s)\n", rejected, ran, numerical,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    EXPECT_GE(rejected, 30);
    EXPECT_GE(ran, 8);
}
