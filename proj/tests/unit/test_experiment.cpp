#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sponge/experiment.hpp"

using namespace sponge;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("sponge_experiment_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string config_error_path(const json& user) {
    try {
        ExperimentConfig::from_json(user);
    } catch (const ConfigError& e) {
        return e.path();
    }
    return "";
}

ExperimentConfig tiny_nlp(const fs::path& out) {
    auto c = ExperimentConfig::from_json({{"task", "attack-nlp"},
                                          {"seed", 5},
                                          {"ga", {{"pool_size", 12}, {"generations", 3}, {"threads", 1}}},
                                          {"nlp", {{"length", 8}, {"baseline_samples", 5}, {"keep_best", 2}}}});
    c.output_dir = out;
    return c;
}

}  // namespace

TEST_CASE("config validation names the field") {
    CHECK(config_error_path({{"ga", {{"pool_sise", 10}}}}) == "ga.pool_sise");
    CHECK(config_error_path({{"ga", {{"pool_size", "ten"}}}}) == "ga.pool_size");
    CHECK(config_error_path({{"ga", {{"pool_size", -3}}}}) == "ga.pool_size");
    CHECK(config_error_path({{"ga", {{"pool_size", 1}}}}) == "ga.pool_size");
    CHECK(config_error_path({{"task", "dance"}}) == "task");
    CHECK(config_error_path({{"cost", 3}}) == "cost");
    CHECK(config_error_path({{"models", {{"cnn", 4}}}}) == "models.cnn");
    CHECK(config_error_path({{"ga", {{"pool_size", 10}}}}).empty());
}

TEST_CASE("overrides") {
    json c = default_config();
    apply_override(c, "ga.pool_size=50");
    apply_override(c, "service.timing=real");
    apply_override(c, "cost.zero_skip_enabled=false");
    CHECK(c["ga"]["pool_size"] == 50);
    CHECK(c["service"]["timing"] == "real");
    CHECK(c["cost"]["zero_skip_enabled"] == false);
    CHECK_THROWS_AS(apply_override(c, "ga.pool_size"), ConfigError);

    const auto dir = scratch("overrides");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"task": "simulate", "seed": 3})";
    const auto loaded = ExperimentConfig::load(dir / "c.json", {"seed=9", "ga.generations=2"}, 11, dir / "out");
    CHECK(loaded.seed == 11);
    CHECK(loaded.task == "simulate");
    CHECK(loaded.ga().generations == 2);
    CHECK(loaded.output_dir == dir / "out");
    CHECK_THROWS_AS(ExperimentConfig::load(dir / "missing.json"), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("config hash ignores the output directory only") {
    auto a = ExperimentConfig::from_json({{"seed", 1}});
    auto b = a;
    b.output_dir = "elsewhere";
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    CHECK(ExperimentConfig::from_json({{"seed", 2}}).hash() != a.hash());
}

TEST_CASE("plot data") {
    const OutputStamp stamp{"abc", 4};
    std::vector<GenerationStats> h{{0, 1.0, 0.5}, {1, 2.0, 1.0}, {2, 3.0, 1.5}};
    std::ostringstream out;
    emit_plot_data(out, history_table(h), stamp);
    std::istringstream lines(out.str());
    std::string line;
    std::vector<std::string> all;
    while (std::getline(lines, line)) all.push_back(line);
    REQUIRE(all.size() == 6);
    CHECK(all[0] == "# config_hash=abc");
    CHECK(all[1] == "# seed=4");
    CHECK(all[2].rfind("generation\t", 0) == 0);

    std::ostringstream empty;
    CHECK_THROWS_AS(emit_plot_data(empty, history_table({}), stamp), std::invalid_argument);

    const auto cmp = comparison_table({{"energy", h}, {"latency", h}, {"ops", h}});
    CHECK(cmp.columns.size() == 3);
    CHECK(cmp.rows.size() == 3);
}

TEST_CASE("simulate task passes a stored trace through") {
    const auto dir = scratch("simulate");
    fs::create_directories(dir);
    ActivationTrace t{{LayerTrace{"l0", 10, 5, 4, 2, 0, 0}}};
    {
        std::ofstream f(dir / "trace.txt");
        write_trace(f, t);
    }
    auto c = ExperimentConfig::from_json({{"task", "simulate"}, {"simulate", {{"trace", (dir / "trace.txt").string()}}}});
    c.output_dir = dir / "out";
    CHECK(run(c) == 0);
    const auto report = json::parse(slurp(dir / "out" / "energy_report.json"));
    CHECK(report["energy_optimized_pj"].get<double>() == doctest::Approx(18.5));
    CHECK(report["energy_ratio"].get<double>() == doctest::Approx(0.5));
    CHECK(report["config_hash"] == c.hash());
    CHECK(report["seed"] == c.seed);
    fs::remove_all(dir);
}

TEST_CASE("attack runs are reproducible") {
    const auto dir = scratch("determinism");
    CHECK(run(tiny_nlp(dir / "a")) == 0);
    CHECK(run(tiny_nlp(dir / "b")) == 0);
    const auto a = slurp(dir / "a" / "history.tsv");
    CHECK(a == slurp(dir / "b" / "history.tsv"));
    CHECK(slurp(dir / "a" / "best.json") == slurp(dir / "b" / "best.json"));
    CHECK(a.find("# config_hash=") == 0);
    fs::remove_all(dir);
}

TEST_CASE("stats task") {
    const auto dir = scratch("stats");
    fs::create_directories(dir);
    {
        std::ofstream lo(dir / "lo.txt"), hi(dir / "hi.txt");
        for (int i = 0; i < 40; ++i) {
            lo << i << '\n';
            hi << 100 + i << '\n';
        }
    }
    auto c = ExperimentConfig::from_json({{"task", "stats"},
                                          {"stats",
                                           {{"natural", (dir / "lo.txt").string()},
                                            {"sponge", (dir / "hi.txt").string()},
                                            {"order", {"sponge", "natural"}}}}});
    c.output_dir = dir / "out";
    CHECK(run(c) == 0);
    const auto report = json::parse(slurp(dir / "out" / "report.json"));
    CHECK(report["all_significant"] == true);
    CHECK(fs::exists(dir / "out" / "significance_trace.tsv"));

    c.values["stats"]["order"] = {"sponge", "random"};
    CHECK_THROWS_AS(run(c), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("command line") {
    const std::string cli = SPONGE_CLI_PATH;
    const auto dir = scratch("cli");
    fs::create_directories(dir);
    const auto quiet = " > " + (dir / "log").string() + " 2>&1";
    CHECK(std::system((cli + " --print-defaults" + quiet).c_str()) == 0);
    std::ofstream(dir / "bad.json") << R"({"ga": {"pool_size": "x"}})";
    const int rc = std::system((cli + " --config " + (dir / "bad.json").string() + quiet).c_str());
    CHECK(WEXITSTATUS(rc) == 2);
    CHECK(slurp(dir / "log").find("ga.pool_size") != std::string::npos);
    fs::remove_all(dir);
}
