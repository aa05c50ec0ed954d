#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <json.hpp>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sponge/defense.hpp"
#include "sponge/energy.hpp"
#include "sponge/ga.hpp"

namespace sponge {

/// Config error naming the offending field, e.g. "ga.pool_size".
class ConfigError : public ValidationError {
public:
    ConfigError(const std::string& path, const std::string& message)
        : ValidationError(path + ": " + message), path_(path) {}
    const std::string& path() const { return path_; }

private:
    std::string path_;
};

inline const std::vector<std::string> kTasks = {"attack-nlp", "attack-cv",       "attack-blackbox", "simulate",
                                                "transfer",   "profile-defense", "stats",           "serve"};

/// Every field with its default value. A user config may only contain keys
/// present here, with matching types (null defaults accept strings).
nlohmann::json default_config();

/// One experiment: the merged config plus typed views of it.
struct ExperimentConfig {
    nlohmann::json values;  // defaults merged with the user config and overrides
    std::string task;
    std::uint64_t seed = 0;
    std::filesystem::path output_dir;

    /// Validates and merges `user` over the defaults.
    static ExperimentConfig from_json(const nlohmann::json& user);
    /// Reads a JSON file, applies "a.b=value" overrides (value parsed as JSON,
    /// falling back to a plain string), then the seed/output flags if given.
    static ExperimentConfig load(const std::filesystem::path& file, const std::vector<std::string>& overrides = {},
                                 std::optional<std::uint64_t> seed = std::nullopt,
                                 std::optional<std::filesystem::path> output_dir = std::nullopt);

    /// 16 hex digits of FNV-1a over the canonical JSON, output_dir excluded.
    std::string hash() const;

    GaConfig ga() const;
    AsicCostModel cost() const;
    LatencyModel latency() const;
};

/// Applies one "a.b.c=value" override in place.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// Tag written into every output file.
struct OutputStamp {
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// Columns for plotting: x followed by one or more series.
struct PlotTable {
    std::string x;
    std::vector<std::string> columns;
    std::vector<std::pair<double, std::vector<double>>> rows;
};

/// Tab-separated, two "# key=value" header lines carrying the stamp, then a
/// column header. Throws std::invalid_argument on an empty table.
void emit_plot_data(std::ostream& out, const PlotTable& table, const OutputStamp& stamp);

/// generation, best, mean; the fitness source goes into the column names.
PlotTable history_table(const std::vector<GenerationStats>& history);
/// Best fitness per generation of several runs side by side, truncated to
/// the shortest run.
PlotTable comparison_table(const std::vector<std::pair<std::string, std::vector<GenerationStats>>>& runs);
/// Sorted profile costs against their rank.
PlotTable profile_table(const ConsumptionProfile& profile);

struct RunOptions {
    std::ostream* log = nullptr;                       // progress lines; nullptr = silent
    const std::atomic<bool>* interrupted = nullptr;    // stop early, keep partial results
};

/// Runs the configured task, writing into output_dir. Returns 0 on success;
/// module errors propagate as exceptions.
int run(const ExperimentConfig& config, const RunOptions& options = {});

}  // namespace sponge
