#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "opennas/engine.hpp"
#include "opennas/serialize.hpp"

namespace {

using namespace opennas;
namespace eng = opennas::engine;

constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("{}: cannot open", path));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Parse errors in architecture files are input problems, so they map to the
// usage exit code like config errors do.
Architecture load_architecture(const std::string& path) {
    try {
        return deserialize(read_text(path));
    } catch (const ParseError& e) {
        throw ConfigError(fmt::format("{}: byte {}: {}", path, e.position(), e.what()));
    } catch (const SchemaError& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
}

SpaceConfig space_of(const eng::SearchConfig& config) {
    return std::visit([](const auto& c) { return c.space; }, config);
}

Shape parse_input_shape(const std::string& text) {
    long long h = 0, w = 0, c = 0;
    char x1 = 0, x2 = 0;
    std::istringstream in(text);
    if (!(in >> h >> x1 >> w >> x2 >> c) || (x1 != 'x' && x1 != 'X') || (x2 != 'x' && x2 != 'X') ||
        in.peek() != EOF || h < 1 || w < 1 || c < 1) {
        throw eng::UsageError(fmt::format("--input expects HxWxC, got \"{}\"", text));
    }
    return Shape{h, w, c};
}

struct SearchArgs {
    std::string config;
    std::string evaluator = "surrogate:target";
    std::string dataset = "synthetic";
    int runs = 1;
    std::uint64_t seed = 0;
    std::string out;
    int parallel_runs = 1;
    std::int64_t subset_size = 0;
    int eval_parallelism = 1;
};

int run_search_command(eng::Algorithm algorithm, const SearchArgs& args) {
    eng::RunOptions options;
    options.config = eng::load_config(args.config, algorithm);
    options.evaluator = eng::parse_evaluator_spec(args.evaluator);
    dataset_info(args.dataset);
    options.dataset_ref = args.dataset;
    if (args.subset_size > 0) options.subset_size = args.subset_size;
    options.runs = args.runs;
    options.seed = args.seed;
    if (!args.out.empty()) options.out_dir = args.out;
    options.parallel_runs = args.parallel_runs;
    options.eval_parallelism = args.eval_parallelism;

    const auto records = eng::run_search(options);
    int failed = 0;
    for (const auto& r : records) {
        if (r.ok()) {
            fmt::print("run {:>3}  seed {:<6} acc {:.4f}  loss {:.4f}  layers {:>3}  evals {}\n", r.run_index, r.seed,
                       r.final_report.val_accuracy, r.final_report.val_loss, r.layer_count, r.evaluations);
        } else {
            ++failed;
            fmt::print(stderr, "run {:>3}  seed {:<6} FAILED: {}\n", r.run_index, r.seed, *r.failure);
        }
    }
    if (failed == static_cast<int>(records.size())) return kExitDomain;

    const eng::StatsRow stats = eng::aggregate_stats(records);
    fmt::print("{}\n", eng::format_stats_row(stats));
    if (options.out_dir) {
        std::ofstream(*options.out_dir / "stats.json") << eng::stats_to_json(stats).dump(2) << "\n";
        std::ofstream(*options.out_dir / "stats.txt") << eng::format_stats_row(stats) << "\n";
    }
    return failed > 0 ? kExitDomain : 0;
}

int run_main(int argc, char** argv) {
    CLI::App app{"Neural architecture search with particle swarms and ant colonies"};
    app.require_subcommand(1);

    SearchArgs pso_args, aco_args;
    auto add_search = [&](const char* name, const char* help, SearchArgs& a) {
        CLI::App* cmd = app.add_subcommand(name, help);
        cmd->add_option("--config", a.config, "Config file or preset name (pso_a, pso_b, aco_a, aco_b)")->required();
        cmd->add_option("--evaluator", a.evaluator,
                        "surrogate:target[:<arch>] | surrogate:paramband[:<params>] | extern:<command>")
            ->capture_default_str();
        cmd->add_option("--dataset", a.dataset, "fashion_mnist | cifar10 | synthetic")->capture_default_str();
        cmd->add_option("--runs", a.runs, "Independent runs; run r uses seed + r")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--seed", a.seed, "Base seed")->capture_default_str();
        cmd->add_option("--out", a.out, "Output directory for run_NNN/ folders and stats");
        cmd->add_option("--parallel-runs", a.parallel_runs, "Concurrent runs (surrogate evaluators only)")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--eval-parallelism", a.eval_parallelism,
                        "Concurrent evaluations per wave, capped by the evaluator")
            ->capture_default_str()
            ->check(CLI::PositiveNumber);
        cmd->add_option("--subset-size", a.subset_size, "Training subset size passed to the evaluator")
            ->check(CLI::PositiveNumber);
        return cmd;
    };
    CLI::App* pso_cmd = add_search("pso", "Particle-swarm search", pso_args);
    CLI::App* aco_cmd = add_search("aco", "Ant-colony search", aco_args);

    std::vector<std::string> stats_dirs;
    bool stats_json = false;
    CLI::App* stats_cmd = app.add_subcommand("stats", "Aggregate finished runs");
    stats_cmd->add_option("dirs", stats_dirs, "Run directories or their parent")->required();
    stats_cmd->add_flag("--json", stats_json, "Print JSON instead of the table row");

    std::string validate_file, validate_space;
    CLI::App* validate_cmd = app.add_subcommand("validate", "Check an architecture document against a space");
    validate_cmd->add_option("file", validate_file, "Architecture document")->required();
    validate_cmd->add_option("--space", validate_space, "Config file or preset whose space to check against");

    std::string randarch_space = "pso_a", randarch_dataset;
    std::uint64_t randarch_seed = 0;
    CLI::App* randarch_cmd = app.add_subcommand("randarch", "Sample a random architecture");
    randarch_cmd->add_option("--space", randarch_space, "Config file or preset")->capture_default_str();
    randarch_cmd->add_option("--seed", randarch_seed, "Seed")->capture_default_str();
    randarch_cmd->add_option("--dataset", randarch_dataset, "Take input shape and classes from a dataset");

    std::string shapes_file, shapes_input;
    CLI::App* shapes_cmd = app.add_subcommand("shapes", "Print the output shape of every layer");
    shapes_cmd->add_option("file", shapes_file, "Architecture document")->required();
    shapes_cmd->add_option("--input", shapes_input, "Input shape HxWxC (default: the document's)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*pso_cmd) return run_search_command(eng::Algorithm::Pso, pso_args);
        if (*aco_cmd) return run_search_command(eng::Algorithm::Aco, aco_args);

        if (*stats_cmd) {
            std::vector<eng::fs::path> dirs(stats_dirs.begin(), stats_dirs.end());
            const eng::StatsRow row = eng::aggregate_stats(dirs);
            if (stats_json) {
                fmt::print("{}\n", eng::stats_to_json(row).dump(2));
            } else {
                fmt::print("{}\n", eng::format_stats_row(row));
            }
            return 0;
        }

        if (*validate_cmd) {
            const Architecture arch = load_architecture(validate_file);
            SpaceConfig space = validate_space.empty() ? SpaceConfig::pso_default()
                                                       : space_of(eng::load_config(validate_space));
            space.input_shape = arch.input_shape;
            space.num_classes = arch.num_classes;
            const ValidationReport report = validate(arch, space);
            if (report.valid()) {
                fmt::print("valid ({} layers, {} parameters)\n", arch.layers.size(), param_count(arch));
                return 0;
            }
            fmt::print("invalid: {} violation{}\n", report.violations.size(),
                       report.violations.size() == 1 ? "" : "s");
            for (const Violation& v : report.violations) {
                if (v.layer_index) {
                    fmt::print("  [{}] layer {}: {}\n", v.rule_id, *v.layer_index, v.message);
                } else {
                    fmt::print("  [{}] {}\n", v.rule_id, v.message);
                }
            }
            return kExitDomain;
        }

        if (*randarch_cmd) {
            eng::SearchConfig config = eng::load_config(randarch_space);
            if (!randarch_dataset.empty()) eng::apply_dataset(config, randarch_dataset);
            Rng rng = substream(randarch_seed, {});
            const Architecture arch = std::visit(
                [&](const auto& c) {
                    if constexpr (std::is_same_v<std::decay_t<decltype(c)>, pso::PsoConfig>) {
                        return sample_random(c.space, rng);
                    } else {
                        return aco::random_architecture(c, rng);
                    }
                },
                config);
            fmt::print("{}\n", serialize(arch));
            return 0;
        }

        if (*shapes_cmd) {
            Architecture arch = load_architecture(shapes_file);
            if (!shapes_input.empty()) arch.input_shape = parse_input_shape(shapes_input);
            const ShapeTrace trace = shape_infer(arch);
            std::string line;
            for (const Shape& s : trace.shapes) {
                if (!line.empty()) line += ',';
                line += fmt::format("({},{},{})", s.height, s.width, s.channels);
            }
            fmt::print("{}\n", line);
            return 0;
        }
    } catch (const eng::UsageError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const UnknownDataset& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitUsage;
    } catch (const Error& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitDomain;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitDomain;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) { return run_main(argc, argv); }
