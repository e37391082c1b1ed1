#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "opennas/aco.hpp"
#include "opennas/errors.hpp"
#include "opennas/evaluation.hpp"
#include "opennas/pso.hpp"
#include "opennas/search.hpp"

namespace opennas::engine {

namespace fs = std::filesystem;

// Bad command line, evaluator spec or inconsistent inputs (exit code 2).
class UsageError : public Error {
public:
    using Error::Error;
};

enum class Algorithm { Pso, Aco };

std::string_view algorithm_name(Algorithm algorithm) noexcept;

// --- config documents ------------------------------------------------------

nlohmann::ordered_json space_to_json(const SpaceConfig& space);
nlohmann::ordered_json config_to_json(const pso::PsoConfig& config);
nlohmann::ordered_json config_to_json(const aco::AcoConfig& config);

// Fields missing from `doc` keep the values in `defaults`; unknown fields and
// wrong types throw ConfigError naming the field.
SpaceConfig space_from_json(const nlohmann::json& doc, const SpaceConfig& defaults);
pso::PsoConfig pso_config_from_json(const nlohmann::json& doc);
aco::AcoConfig aco_config_from_json(const nlohmann::json& doc);

using SearchConfig = std::variant<pso::PsoConfig, aco::AcoConfig>;

Algorithm algorithm_of(const SearchConfig& config) noexcept;
nlohmann::ordered_json config_to_json(const SearchConfig& config);

// `source` is a file path or one of the shipped preset names pso_a, pso_b,
// aco_a, aco_b. A file without an "algorithm" field is read as `expected`.
// Throws ConfigError with file and line for malformed documents.
SearchConfig load_config(const std::string& source, std::optional<Algorithm> expected = std::nullopt);

// Sets input shape and class count from the dataset.
void apply_dataset(SearchConfig& config, std::string_view dataset_ref);

// --- evaluators --------------------------------------------------------------

struct EvaluatorSpec {
    enum class Kind { Target, ParamBand, Extern };
    Kind kind = Kind::Target;
    std::string argument; // target file, band center or trainer command
};

// surrogate:target[:<arch-file>] | surrogate:paramband[:<params>] | extern:<command>
EvaluatorSpec parse_evaluator_spec(std::string_view spec);

// Hidden target used by `surrogate:target` without a file: a fixed-seed
// sample of the configured space, in evaluated (materialized) form.
Architecture default_target(const SearchConfig& config);

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const SearchConfig& config);

// --- runs --------------------------------------------------------------------

struct RunRecord {
    Algorithm algorithm = Algorithm::Pso;
    nlohmann::ordered_json config; // snapshot, seed included
    int run_index = 0;
    std::uint64_t seed = 0;
    std::vector<HistoryRow> history;
    Architecture best;
    Architecture best_evaluated;
    FitnessReport search_report;
    FitnessReport final_report;
    long evaluations = 0;
    double wall_minutes = 0.0;        // whole search including the final retrain
    double wall_minutes_search = 0.0; // excluding the final retrain
    int layer_count = 0;              // layers of best_evaluated
    int raw_layer_count = 0;          // layers of best
    std::optional<std::string> failure;

    bool ok() const noexcept { return !failure.has_value(); }
};

struct RunOptions {
    SearchConfig config;
    EvaluatorSpec evaluator;
    std::string dataset_ref = "synthetic";
    std::optional<std::int64_t> subset_size;
    int runs = 1;
    std::uint64_t seed = 0;
    std::optional<fs::path> out_dir; // no persistence when empty
    int parallel_runs = 1;
    int eval_parallelism = 1;
};

// Run r uses seed + r. Failed runs are recorded, not thrown.
std::vector<RunRecord> run_search(const RunOptions& options);

// Runs one search with an existing evaluator.
RunRecord run_once(const SearchConfig& config, Evaluator& evaluator, int run_index, std::uint64_t seed,
                   const SearchOptions& search_options);

std::string history_csv(Algorithm algorithm, const std::vector<HistoryRow>& history);

// Directory layout: config.json, history.csv, best_architecture.json,
// best_evaluated.json, summary.json.
void write_run_dir(const fs::path& dir, const RunRecord& record);
RunRecord read_run_dir(const fs::path& dir);

// --- statistics ----------------------------------------------------------------

struct StatsRow {
    double acc_max = 0.0;
    double acc_mean = 0.0;
    double acc_stdev = 0.0; // sample standard deviation, 0 for a single run
    double time_mean_minutes = 0.0;
    double time_mean_minutes_search = 0.0;
    int layers_of_best = 0;
    int runs = 0;
    int failed_runs = 0;
};

// Over successful runs only. Throws UsageError for empty input or records that
// do not share algorithm and configuration (seed aside), Error when every run
// failed.
StatsRow aggregate_stats(const std::vector<RunRecord>& records);

// Accepts run directories or parents of run directories.
StatsRow aggregate_stats(const std::vector<fs::path>& dirs);

// "acc_max  acc_mean  acc_stdev  time  layers", e.g. "0.900  0.853  0.044  1316  30".
std::string format_stats_row(const StatsRow& row);
nlohmann::ordered_json stats_to_json(const StatsRow& row);

} // namespace opennas::engine
