#include "opennas/engine.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "opennas/serialize.hpp"
#include "opennas/trainer_client.hpp"

namespace opennas::engine {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view algorithm_name(Algorithm algorithm) noexcept {
    return algorithm == Algorithm::Pso ? "pso" : "aco";
}

namespace {

std::optional<Algorithm> parse_algorithm(std::string_view name) {
    if (name == "pso") return Algorithm::Pso;
    if (name == "aco") return Algorithm::Aco;
    return std::nullopt;
}

// --- typed field access ----------------------------------------------------

class Fields {
public:
    Fields(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(fmt::format("{}: expected an object", where()));
    }

    void reject_unknown(std::initializer_list<std::string_view> known) const {
        for (const auto& [key, _] : doc_.items()) {
            if (std::find(known.begin(), known.end(), key) == known.end())
                throw ConfigError(fmt::format("{}: unknown field \"{}\"", where(), key));
        }
    }

    template <typename T>
    void read(const char* key, T& out) const {
        if (!doc_.contains(key)) return;
        const json& v = doc_[key];
        try {
            check_type<T>(v);
            out = v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(fmt::format("{}: field \"{}\" has the wrong type", where(), key));
        } catch (const ConfigError&) {
            throw ConfigError(fmt::format("{}: field \"{}\" has the wrong type", where(), key));
        }
    }

    void read_pair(const char* key, std::pair<int, int>& out) const {
        if (!doc_.contains(key)) return;
        std::vector<int> v;
        read(key, v);
        if (v.size() != 2) throw ConfigError(fmt::format("{}: field \"{}\" must be [min, max]", where(), key));
        out = {v[0], v[1]};
    }

    const json* child(const char* key) const { return doc_.contains(key) ? &doc_[key] : nullptr; }
    std::string sub(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

private:
    template <typename T>
    static void check_type(const json& v) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError("type");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError("type");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError("type");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("type");
        } else {
            if (!v.is_array()) throw ConfigError("type");
            for (const auto& e : v) check_type<typename T::value_type>(e);
        }
    }

    std::string where() const { return path_.empty() ? std::string("config") : path_; }

    const json& doc_;
    std::string path_;
};

} // namespace

// --- config documents --------------------------------------------------------

ordered_json space_to_json(const SpaceConfig& s) {
    ordered_json out;
    out["conv_channels_band"] = {s.conv_channels_band.first, s.conv_channels_band.second};
    out["conv_channels_set"] = s.conv_channels_set;
    out["kernel_set"] = s.kernel_set;
    out["fc_units_max"] = s.fc_units_max;
    out["fc_units_set"] = s.fc_units_set;
    out["dropout_set"] = s.dropout_set;
    out["layer_bounds"] = {s.layer_bounds.first, s.layer_bounds.second};
    out["layer_type_probabilities"] = {{"conv", s.layer_type_probabilities.conv},
                                       {"pool", s.layer_type_probabilities.pool},
                                       {"fc", s.layer_type_probabilities.fc}};
    out["batch_norm_enabled"] = s.batch_norm_enabled;
    out["dropout_rate_default"] = s.dropout_rate_default;
    out["input_shape"] = {s.input_shape.height, s.input_shape.width, s.input_shape.channels};
    out["num_classes"] = s.num_classes;
    return out;
}

ordered_json config_to_json(const pso::PsoConfig& c) {
    ordered_json out;
    out["algorithm"] = "pso";
    out["swarm_size"] = c.swarm_size;
    out["iterations"] = c.iterations;
    out["cg"] = c.cg;
    out["epochs_particle"] = c.epochs_particle;
    out["epochs_gbest"] = c.epochs_gbest;
    out["perturb_stagnant"] = c.perturb_stagnant;
    out["seed"] = c.seed;
    out["space"] = space_to_json(c.space);
    return out;
}

ordered_json config_to_json(const aco::AcoConfig& c) {
    ordered_json out;
    out["algorithm"] = "aco";
    out["ants"] = c.ants;
    out["epochs_candidate"] = c.epochs_candidate;
    out["max_depth"] = c.max_depth;
    out["greediness"] = c.greediness;
    out["pheromone_start"] = c.pheromone_start;
    out["pheromone_decay"] = c.pheromone_decay;
    out["pheromone_evaporation"] = c.pheromone_evaporation;
    out["allowed_kinds"] = ordered_json::array();
    for (LayerKind k : c.allowed_kinds) out["allowed_kinds"].push_back(kind_name(k));
    out["seed"] = c.seed;
    out["space"] = space_to_json(c.space);
    return out;
}

ordered_json config_to_json(const SearchConfig& config) {
    return std::visit([](const auto& c) { return config_to_json(c); }, config);
}

Algorithm algorithm_of(const SearchConfig& config) noexcept {
    return std::holds_alternative<pso::PsoConfig>(config) ? Algorithm::Pso : Algorithm::Aco;
}

SpaceConfig space_from_json(const json& doc, const SpaceConfig& defaults) {
    Fields f(doc, "space");
    f.reject_unknown({"conv_channels_band", "conv_channels_set", "kernel_set", "fc_units_max", "fc_units_set",
                      "dropout_set", "layer_bounds", "layer_type_probabilities", "batch_norm_enabled",
                      "dropout_rate_default", "input_shape", "num_classes"});
    SpaceConfig s = defaults;
    f.read_pair("conv_channels_band", s.conv_channels_band);
    f.read("conv_channels_set", s.conv_channels_set);
    f.read("kernel_set", s.kernel_set);
    f.read("fc_units_max", s.fc_units_max);
    f.read("fc_units_set", s.fc_units_set);
    f.read("dropout_set", s.dropout_set);
    f.read_pair("layer_bounds", s.layer_bounds);
    if (const json* probs = f.child("layer_type_probabilities")) {
        Fields p(*probs, "space.layer_type_probabilities");
        p.reject_unknown({"conv", "pool", "fc"});
        p.read("conv", s.layer_type_probabilities.conv);
        p.read("pool", s.layer_type_probabilities.pool);
        p.read("fc", s.layer_type_probabilities.fc);
    }
    f.read("batch_norm_enabled", s.batch_norm_enabled);
    f.read("dropout_rate_default", s.dropout_rate_default);
    if (f.child("input_shape")) {
        std::vector<std::int64_t> shape;
        f.read("input_shape", shape);
        if (shape.size() != 3) throw ConfigError("space: field \"input_shape\" must be [H, W, C]");
        s.input_shape = Shape{shape[0], shape[1], shape[2]};
    }
    f.read("num_classes", s.num_classes);
    return s;
}

pso::PsoConfig pso_config_from_json(const json& doc) {
    Fields f(doc, "");
    f.reject_unknown({"algorithm", "swarm_size", "iterations", "cg", "epochs_particle", "epochs_gbest",
                      "perturb_stagnant", "seed", "space"});
    pso::PsoConfig c = pso::PsoConfig::preset_a();
    f.read("swarm_size", c.swarm_size);
    f.read("iterations", c.iterations);
    f.read("cg", c.cg);
    f.read("epochs_particle", c.epochs_particle);
    f.read("epochs_gbest", c.epochs_gbest);
    f.read("perturb_stagnant", c.perturb_stagnant);
    f.read("seed", c.seed);
    if (const json* space = f.child("space")) c.space = space_from_json(*space, c.space);
    c.check();
    return c;
}

aco::AcoConfig aco_config_from_json(const json& doc) {
    Fields f(doc, "");
    f.reject_unknown({"algorithm", "ants", "epochs_candidate", "max_depth", "greediness", "pheromone_start",
                      "pheromone_decay", "pheromone_evaporation", "allowed_kinds", "seed", "space"});
    aco::AcoConfig c = aco::AcoConfig::preset_a();
    f.read("ants", c.ants);
    f.read("epochs_candidate", c.epochs_candidate);
    f.read("max_depth", c.max_depth);
    f.read("greediness", c.greediness);
    f.read("pheromone_start", c.pheromone_start);
    f.read("pheromone_decay", c.pheromone_decay);
    f.read("pheromone_evaporation", c.pheromone_evaporation);
    if (f.child("allowed_kinds")) {
        std::vector<std::string> names;
        f.read("allowed_kinds", names);
        c.allowed_kinds.clear();
        for (const auto& n : names) {
            const auto kind = parse_kind(n);
            if (!kind) throw ConfigError(fmt::format("config: unknown layer kind \"{}\" in allowed_kinds", n));
            c.allowed_kinds.push_back(*kind);
        }
    }
    f.read("seed", c.seed);
    if (const json* space = f.child("space")) c.space = space_from_json(*space, c.space);
    c.check();
    return c;
}

namespace {

std::optional<SearchConfig> preset(std::string_view name) {
    if (name == "pso_a") return SearchConfig{pso::PsoConfig::preset_a()};
    if (name == "pso_b") return SearchConfig{pso::PsoConfig::preset_b()};
    if (name == "aco_a") return SearchConfig{aco::AcoConfig::preset_a()};
    if (name == "aco_b") return SearchConfig{aco::AcoConfig::preset_b()};
    return std::nullopt;
}

std::pair<std::size_t, std::size_t> line_and_column(const std::string& text, std::size_t byte) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < std::min(byte > 0 ? byte - 1 : 0, text.size()); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("{}: cannot open", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("{}: cannot write", path.string()));
    out << content;
}

json parse_document(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = line_and_column(text, e.byte);
        throw ConfigError(fmt::format("{}:{}:{}: {}", path.string(), line, col, e.what()));
    }
}

} // namespace

SearchConfig load_config(const std::string& source, std::optional<Algorithm> expected) {
    const fs::path path(source);
    if (!fs::exists(path)) {
        if (auto p = preset(source)) {
            if (expected && algorithm_of(*p) != *expected)
                throw ConfigError(fmt::format("preset {} is not a {} config", source, algorithm_name(*expected)));
            return *p;
        }
        throw ConfigError(fmt::format("{}: no such file or preset", source));
    }

    const json doc = parse_document(path);
    std::optional<Algorithm> algorithm = expected;
    if (doc.is_object() && doc.contains("algorithm")) {
        const auto parsed = doc["algorithm"].is_string() ? parse_algorithm(doc["algorithm"].get<std::string>())
                                                          : std::nullopt;
        if (!parsed) throw ConfigError(fmt::format("{}: \"algorithm\" must be \"pso\" or \"aco\"", source));
        if (expected && *parsed != *expected)
            throw ConfigError(fmt::format("{}: is a {} config, expected {}", source, algorithm_name(*parsed),
                                          algorithm_name(*expected)));
        algorithm = parsed;
    }
    if (!algorithm) throw ConfigError(fmt::format("{}: missing \"algorithm\"", source));
    try {
        if (*algorithm == Algorithm::Pso) return pso_config_from_json(doc);
        return aco_config_from_json(doc);
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", source, e.what()));
    }
}

void apply_dataset(SearchConfig& config, std::string_view dataset_ref) {
    const DatasetInfo& info = dataset_info(dataset_ref);
    std::visit(
        [&](auto& c) {
            c.space.input_shape = info.input_shape;
            c.space.num_classes = info.num_classes;
        },
        config);
}

// --- evaluators ----------------------------------------------------------------

EvaluatorSpec parse_evaluator_spec(std::string_view spec) {
    constexpr std::string_view kTarget = "surrogate:target";
    constexpr std::string_view kBand = "surrogate:paramband";
    constexpr std::string_view kExtern = "extern:";

    auto suffix = [&](std::string_view prefix) -> std::optional<std::string> {
        if (spec == prefix) return std::string();
        if (spec.size() > prefix.size() + 1 && spec.substr(0, prefix.size()) == prefix && spec[prefix.size()] == ':')
            return std::string(spec.substr(prefix.size() + 1));
        return std::nullopt;
    };

    if (auto arg = suffix(kTarget)) return {EvaluatorSpec::Kind::Target, *arg};
    if (auto arg = suffix(kBand)) {
        if (!arg->empty()) {
            char* end = nullptr;
            const double v = std::strtod(arg->c_str(), &end);
            if (*end != '\0' || !(v > 0.0)) throw UsageError(fmt::format("bad parameter band center \"{}\"", *arg));
        }
        return {EvaluatorSpec::Kind::ParamBand, *arg};
    }
    if (spec.substr(0, kExtern.size()) == kExtern && spec.size() > kExtern.size()) {
        return {EvaluatorSpec::Kind::Extern, std::string(spec.substr(kExtern.size()))};
    }
    throw UsageError(fmt::format(
        "invalid evaluator \"{}\" (expected surrogate:target, surrogate:paramband or extern:<command>)", spec));
}

Architecture default_target(const SearchConfig& config) {
    constexpr std::uint64_t kTargetSeed = 0x7a26e7ULL;
    Rng rng = substream(kTargetSeed, {});
    if (const auto* p = std::get_if<pso::PsoConfig>(&config)) {
        return materialize(sample_random(p->space, rng), p->space);
    }
    return aco::random_architecture(std::get<aco::AcoConfig>(config), rng);
}

std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const SearchConfig& config) {
    switch (spec.kind) {
    case EvaluatorSpec::Kind::Target: {
        if (spec.argument.empty()) return std::make_unique<TargetSurrogate>(default_target(config));
        return std::make_unique<TargetSurrogate>(deserialize(read_file(spec.argument)));
    }
    case EvaluatorSpec::Kind::ParamBand:
        return std::make_unique<ParamBandSurrogate>(spec.argument.empty() ? 1e5 : std::stod(spec.argument));
    case EvaluatorSpec::Kind::Extern:
        return std::make_unique<ExternTrainer>(spec.argument, ExternTrainer::timeout_from_env());
    }
    throw UsageError("unknown evaluator kind");
}

// --- runs ------------------------------------------------------------------------

RunRecord run_once(const SearchConfig& config, Evaluator& evaluator, int run_index, std::uint64_t seed,
                   const SearchOptions& search_options) {
    RunRecord record;
    record.algorithm = algorithm_of(config);
    record.run_index = run_index;
    record.seed = seed;

    SearchConfig seeded = config;
    std::visit([seed](auto& c) { c.seed = seed; }, seeded);
    record.config = config_to_json(seeded);

    const auto started = std::chrono::steady_clock::now();
    SearchResult result = std::visit(
        [&](const auto& c) {
            if constexpr (std::is_same_v<std::decay_t<decltype(c)>, pso::PsoConfig>) {
                return pso::pso_run(c, evaluator, search_options);
            } else {
                return aco::aco_run(c, evaluator, search_options);
            }
        },
        seeded);
    const double wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    record.history = std::move(result.history);
    record.best = std::move(result.best);
    record.best_evaluated = std::move(result.best_evaluated);
    record.search_report = result.best_search_report;
    record.final_report = result.final_report;
    record.evaluations = result.evaluations;
    record.wall_minutes = wall_s / 60.0;
    record.wall_minutes_search = (wall_s - result.retrain_wall_seconds) / 60.0;
    record.layer_count = static_cast<int>(record.best_evaluated.layers.size());
    record.raw_layer_count = static_cast<int>(record.best.layers.size());
    record.failure = std::move(result.failure);
    return record;
}

std::vector<RunRecord> run_search(const RunOptions& options) {
    if (options.runs < 1) throw UsageError("--runs must be >= 1");
    if (options.parallel_runs < 1) throw UsageError("--parallel-runs must be >= 1");
    if (options.parallel_runs > 1 && options.evaluator.kind == EvaluatorSpec::Kind::Extern)
        throw UsageError("--parallel-runs is only available with surrogate evaluators");

    SearchConfig config = options.config;
    apply_dataset(config, options.dataset_ref);

    SearchOptions search_options;
    search_options.dataset_ref = options.dataset_ref;
    search_options.subset_size = options.subset_size;
    search_options.parallelism = options.eval_parallelism;

    std::vector<RunRecord> records(static_cast<std::size_t>(options.runs));
    auto finish = [&](int r, RunRecord record) {
        if (options.out_dir) write_run_dir(*options.out_dir / fmt::format("run_{:03d}", r), record);
        records[static_cast<std::size_t>(r)] = std::move(record);
    };
    auto failed_record = [&](int r, const std::string& why) {
        RunRecord record;
        record.algorithm = algorithm_of(config);
        record.run_index = r;
        record.seed = options.seed + static_cast<std::uint64_t>(r);
        SearchConfig seeded = config;
        std::visit([&](auto& c) { c.seed = record.seed; }, seeded);
        record.config = config_to_json(seeded);
        record.failure = why;
        return record;
    };
    auto run_with = [&](Evaluator& evaluator, int r) {
        finish(r, run_once(config, evaluator, r, options.seed + static_cast<std::uint64_t>(r), search_options));
    };

    if (options.evaluator.kind == EvaluatorSpec::Kind::Extern) {
        // A fresh backend per run, so a crash cannot take sibling runs down.
        for (int r = 0; r < options.runs; ++r) {
            std::unique_ptr<Evaluator> evaluator;
            try {
                evaluator = make_evaluator(options.evaluator, config);
            } catch (const EvaluatorFailure& e) {
                finish(r, failed_record(r, e.what()));
                continue;
            }
            run_with(*evaluator, r);
        }
        return records;
    }

    const std::unique_ptr<Evaluator> evaluator = make_evaluator(options.evaluator, config);
    if (options.parallel_runs == 1) {
        for (int r = 0; r < options.runs; ++r) run_with(*evaluator, r);
    } else {
        std::atomic<int> next{0};
        std::mutex error_mu;
        std::exception_ptr error;
        {
            std::vector<std::jthread> pool;
            const int workers = std::min(options.parallel_runs, options.runs);
            for (int w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (int r = next++; r < options.runs; r = next++) {
                        try {
                            run_with(*evaluator, r);
                        } catch (...) {
                            std::lock_guard lock(error_mu);
                            if (!error) error = std::current_exception();
                        }
                    }
                });
            }
        }
        if (error) std::rethrow_exception(error);
    }
    return records;
}

// --- persistence -----------------------------------------------------------------

std::string history_csv(Algorithm algorithm, const std::vector<HistoryRow>& history) {
    std::string out;
    if (algorithm == Algorithm::Pso) {
        out = "iteration,best_loss,best_acc,mean_loss,elapsed_s\n";
        for (const HistoryRow& h : history) {
            out += fmt::format("{},{},{},{},{}\n", h.step, h.best_loss, h.best_acc, h.mean_loss, h.elapsed_s);
        }
    } else {
        out = "depth,best_acc,mean_acc,elapsed_s\n";
        for (const HistoryRow& h : history) {
            out += fmt::format("{},{},{},{}\n", h.step, h.best_acc, h.mean_acc, h.elapsed_s);
        }
    }
    return out;
}

namespace {

ordered_json report_to_json(const FitnessReport& r) {
    return {{"val_accuracy", r.val_accuracy},
            {"val_loss", r.val_loss},
            {"wall_seconds", r.wall_seconds},
            {"param_count", r.param_count}};
}

FitnessReport report_from_json(const json& j) {
    FitnessReport r;
    r.val_accuracy = j.at("val_accuracy").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.param_count = j.at("param_count").get<std::int64_t>();
    return r;
}

std::vector<HistoryRow> parse_history(Algorithm algorithm, const std::string& csv) {
    std::vector<HistoryRow> rows;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line); // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
        HistoryRow h;
        h.step = std::stoi(cells.at(0));
        if (algorithm == Algorithm::Pso) {
            h.best_loss = std::stod(cells.at(1));
            h.best_acc = std::stod(cells.at(2));
            h.mean_loss = std::stod(cells.at(3));
            h.elapsed_s = std::stod(cells.at(4));
        } else {
            h.best_acc = std::stod(cells.at(1));
            h.mean_acc = std::stod(cells.at(2));
            h.elapsed_s = std::stod(cells.at(3));
        }
        rows.push_back(h);
    }
    return rows;
}

} // namespace

void write_run_dir(const fs::path& dir, const RunRecord& record) {
    fs::create_directories(dir);
    write_file(dir / "config.json", record.config.dump(2) + "\n");
    write_file(dir / "history.csv", history_csv(record.algorithm, record.history));
    if (!record.best.layers.empty() || record.ok()) {
        write_file(dir / "best_architecture.json", serialize(record.best) + "\n");
        write_file(dir / "best_evaluated.json", serialize(record.best_evaluated) + "\n");
    }

    ordered_json summary;
    summary["algorithm"] = algorithm_name(record.algorithm);
    summary["run_index"] = record.run_index;
    summary["seed"] = record.seed;
    summary["status"] = record.ok() ? "ok" : "failed";
    summary["error"] = record.failure ? ordered_json(*record.failure) : ordered_json(nullptr);
    summary["evaluations"] = record.evaluations;
    summary["search_best"] = report_to_json(record.search_report);
    summary["final"] = report_to_json(record.final_report);
    summary["wall_minutes"] = record.wall_minutes;
    summary["wall_minutes_search"] = record.wall_minutes_search;
    summary["layer_count"] = record.layer_count;
    summary["raw_layer_count"] = record.raw_layer_count;
    write_file(dir / "summary.json", summary.dump(2) + "\n");
}

RunRecord read_run_dir(const fs::path& dir) {
    const json summary = parse_document(dir / "summary.json");
    RunRecord record;
    try {
        const auto algorithm = parse_algorithm(summary.at("algorithm").get<std::string>());
        if (!algorithm) throw ConfigError("unknown algorithm");
        record.algorithm = *algorithm;
        record.run_index = summary.at("run_index").get<int>();
        record.seed = summary.at("seed").get<std::uint64_t>();
        if (summary.at("status") != "ok") {
            record.failure = summary.at("error").is_string() ? summary.at("error").get<std::string>() : "failed";
        }
        record.evaluations = summary.at("evaluations").get<long>();
        record.search_report = report_from_json(summary.at("search_best"));
        record.final_report = report_from_json(summary.at("final"));
        record.wall_minutes = summary.at("wall_minutes").get<double>();
        record.wall_minutes_search = summary.at("wall_minutes_search").get<double>();
        record.layer_count = summary.at("layer_count").get<int>();
        record.raw_layer_count = summary.at("raw_layer_count").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(fmt::format("{}: malformed summary: {}", (dir / "summary.json").string(), e.what()));
    }
    record.config = parse_document(dir / "config.json");
    record.history = parse_history(record.algorithm, read_file(dir / "history.csv"));
    if (fs::exists(dir / "best_architecture.json")) {
        record.best = deserialize(read_file(dir / "best_architecture.json"));
        record.best_evaluated = deserialize(read_file(dir / "best_evaluated.json"));
    }
    return record;
}

// --- statistics --------------------------------------------------------------------

namespace {

// Neumaier summation, so short sums of decimal-looking inputs round once.
class CompensatedSum {
public:
    void add(double x) {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            carry_ += (sum_ - t) + x;
        } else {
            carry_ += (x - t) + sum_;
        }
        sum_ = t;
    }
    double value() const { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

json config_without_seed(const json& config) {
    json c = config;
    if (c.is_object()) c.erase("seed");
    return c;
}

} // namespace

StatsRow aggregate_stats(const std::vector<RunRecord>& records) {
    if (records.empty()) throw UsageError("no runs to aggregate");
    const json reference = config_without_seed(records.front().config);
    for (const RunRecord& r : records) {
        if (r.algorithm != records.front().algorithm) throw UsageError("runs mix algorithms");
        if (config_without_seed(r.config) != reference) throw UsageError("runs use different configurations");
    }

    StatsRow row;
    std::vector<const RunRecord*> ok;
    for (const RunRecord& r : records) {
        if (r.ok()) ok.push_back(&r);
    }
    row.runs = static_cast<int>(ok.size());
    row.failed_runs = static_cast<int>(records.size() - ok.size());
    if (ok.empty()) throw Error("every run failed");

    const double n = static_cast<double>(ok.size());
    CompensatedSum acc_sum, time_sum, time_search_sum;
    const RunRecord* best = ok.front();
    for (const RunRecord* r : ok) {
        acc_sum.add(r->final_report.val_accuracy);
        time_sum.add(r->wall_minutes);
        time_search_sum.add(r->wall_minutes_search);
        if (r->final_report.val_accuracy > best->final_report.val_accuracy) best = r;
    }
    row.acc_max = best->final_report.val_accuracy;
    row.acc_mean = acc_sum.value() / n;
    if (ok.size() > 1) {
        CompensatedSum sq;
        for (const RunRecord* r : ok) {
            const double d = r->final_report.val_accuracy - row.acc_mean;
            sq.add(d * d);
        }
        row.acc_stdev = std::sqrt(sq.value() / (n - 1.0));
    }
    row.time_mean_minutes = time_sum.value() / n;
    row.time_mean_minutes_search = time_search_sum.value() / n;
    row.layers_of_best = best->layer_count;
    return row;
}

StatsRow aggregate_stats(const std::vector<fs::path>& dirs) {
    std::vector<fs::path> run_dirs;
    for (const fs::path& d : dirs) {
        if (fs::exists(d / "summary.json")) {
            run_dirs.push_back(d);
            continue;
        }
        if (!fs::is_directory(d)) throw UsageError(fmt::format("{}: not a run directory", d.string()));
        std::vector<fs::path> children;
        for (const auto& entry : fs::directory_iterator(d)) {
            if (entry.is_directory() && fs::exists(entry.path() / "summary.json")) children.push_back(entry.path());
        }
        if (children.empty()) throw UsageError(fmt::format("{}: contains no run directories", d.string()));
        std::sort(children.begin(), children.end());
        run_dirs.insert(run_dirs.end(), children.begin(), children.end());
    }
    std::vector<RunRecord> records;
    records.reserve(run_dirs.size());
    for (const fs::path& d : run_dirs) records.push_back(read_run_dir(d));
    return aggregate_stats(records);
}

std::string format_stats_row(const StatsRow& row) {
    return fmt::format("{:.3f}  {:.3f}  {:.3f}  {:.0f}  {}", row.acc_max, row.acc_mean, row.acc_stdev,
                       row.time_mean_minutes, row.layers_of_best);
}

ordered_json stats_to_json(const StatsRow& row) {
    ordered_json out;
    out["acc_max"] = row.acc_max;
    out["acc_mean"] = row.acc_mean;
    out["acc_stdev"] = row.acc_stdev;
    out["time_mean_minutes"] = row.time_mean_minutes;
    out["time_mean_minutes_search"] = row.time_mean_minutes_search;
    out["layers_of_best"] = row.layers_of_best;
    out["runs"] = row.runs;
    out["failed_runs"] = row.failed_runs;
    return out;
}

} // namespace opennas::engine
