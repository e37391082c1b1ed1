#include <doctest.h>

#include <fstream>
#include <sstream>

#include <unistd.h>

#include <fmt/format.h>

#include "opennas/engine.hpp"
#include "opennas/serialize.hpp"

using namespace opennas;
using namespace opennas::engine;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() / fmt::format("opennas_test_{}_{}", ::getpid(), counter++);
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string fixture(const char* name) { return (fs::path(OPENNAS_FIXTURES) / name).string(); }

RunRecord record_with_accuracy(double acc, int layers = 5, double minutes = 1.0) {
    RunRecord r;
    r.algorithm = Algorithm::Pso;
    r.config = config_to_json(pso::PsoConfig::preset_b());
    r.final_report.val_accuracy = acc;
    r.final_report.val_loss = 1.0 - acc;
    r.layer_count = layers;
    r.wall_minutes = minutes;
    r.wall_minutes_search = minutes / 2;
    return r;
}

} // namespace

TEST_CASE("shipped preset files match the built-in presets") {
    const fs::path dir(OPENNAS_PRESETS);
    CHECK(std::get<pso::PsoConfig>(load_config((dir / "pso_a.json").string())) == pso::PsoConfig::preset_a());
    CHECK(std::get<pso::PsoConfig>(load_config((dir / "pso_b.json").string())) == pso::PsoConfig::preset_b());
    CHECK(std::get<aco::AcoConfig>(load_config((dir / "aco_a.json").string())) == aco::AcoConfig::preset_a());
    CHECK(std::get<aco::AcoConfig>(load_config((dir / "aco_b.json").string())) == aco::AcoConfig::preset_b());
    CHECK(std::get<pso::PsoConfig>(load_config("pso_b")) == pso::PsoConfig::preset_b());
    CHECK(std::get<aco::AcoConfig>(load_config("aco_a", Algorithm::Aco)) == aco::AcoConfig::preset_a());
}

TEST_CASE("config documents round-trip") {
    pso::PsoConfig p = pso::PsoConfig::preset_a();
    p.space.conv_channels_set = {8, 16};
    p.space.layer_type_probabilities = {0.5, 0.25, 0.25};
    p.seed = 17;
    CHECK(pso_config_from_json(nlohmann::json::parse(config_to_json(p).dump())) == p);

    aco::AcoConfig a = aco::AcoConfig::preset_b();
    a.allowed_kinds = {LayerKind::Conv, LayerKind::FullyConnected};
    a.greediness = 0.25;
    CHECK(aco_config_from_json(nlohmann::json::parse(config_to_json(a).dump())) == a);
}

TEST_CASE("config errors") {
    SUBCASE("malformed files report file and line") {
        try {
            load_config(fixture("broken_config.json"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string what = e.what();
            CHECK(what.find("broken_config.json:5:") != std::string::npos);
        }
    }
    SUBCASE("unknown fields are named") {
        try {
            load_config(fixture("unknown_field.json"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("\"swarm\"") != std::string::npos);
        }
    }
    SUBCASE("algorithm mismatch") {
        CHECK_THROWS_AS(load_config(fixture("small_pso.json"), Algorithm::Aco), ConfigError);
        CHECK_THROWS_AS(load_config("pso_a", Algorithm::Aco), ConfigError);
    }
    SUBCASE("missing file") { CHECK_THROWS_AS(load_config("/no/such/config.json"), ConfigError); }
    SUBCASE("bad values") {
        CHECK_THROWS_AS(pso_config_from_json(nlohmann::json::parse(R"({"swarm_size":0})")), ConfigError);
        CHECK_THROWS_AS(pso_config_from_json(nlohmann::json::parse(R"({"cg":"half"})")), ConfigError);
        CHECK_THROWS_AS(aco_config_from_json(nlohmann::json::parse(R"({"allowed_kinds":["conv","lstm"]})")),
                        ConfigError);
        CHECK_THROWS_AS(
            pso_config_from_json(nlohmann::json::parse(R"({"space":{"layer_type_probabilities":{"conv":0.9}}})")),
            ConfigError);
    }
    SUBCASE("partial documents keep defaults") {
        const auto c = std::get<pso::PsoConfig>(load_config(fixture("small_pso.json")));
        CHECK(c.swarm_size == 4);
        CHECK(c.iterations == 2);
        CHECK(c.epochs_gbest == 10);
        CHECK(c.cg == 0.5);
        CHECK(c.space == SpaceConfig::pso_default());
    }
}

TEST_CASE("evaluator specs") {
    CHECK(parse_evaluator_spec("surrogate:target").kind == EvaluatorSpec::Kind::Target);
    CHECK(parse_evaluator_spec("surrogate:target:/tmp/a.json").argument == "/tmp/a.json");
    CHECK(parse_evaluator_spec("surrogate:paramband").kind == EvaluatorSpec::Kind::ParamBand);
    CHECK(parse_evaluator_spec("surrogate:paramband:2e5").argument == "2e5");
    const auto ext = parse_evaluator_spec("extern:python3 -m trainer --gpu 0");
    CHECK(ext.kind == EvaluatorSpec::Kind::Extern);
    CHECK(ext.argument == "python3 -m trainer --gpu 0");

    CHECK_THROWS_AS(parse_evaluator_spec("surrogate"), UsageError);
    CHECK_THROWS_AS(parse_evaluator_spec("surrogate:oracle"), UsageError);
    CHECK_THROWS_AS(parse_evaluator_spec("extern:"), UsageError);
    CHECK_THROWS_AS(parse_evaluator_spec("surrogate:paramband:-4"), UsageError);
    CHECK_THROWS_AS(parse_evaluator_spec(""), UsageError);
}

TEST_CASE("default targets live in the configured space") {
    const SearchConfig p = pso::PsoConfig::preset_a();
    const Architecture pt = default_target(p);
    CHECK(validate(pt, pso::PsoConfig::preset_a().space).valid());
    CHECK(pt == materialize(pt, pso::PsoConfig::preset_a().space));
    CHECK(default_target(p) == pt);

    const SearchConfig a = aco::AcoConfig::preset_a();
    CHECK(validate(default_target(a), aco::AcoConfig::preset_a().space).valid());
}

TEST_CASE("runs are seeded with seed + index and persisted") {
    TempDir tmp;
    RunOptions options;
    options.config = load_config(fixture("small_pso.json"));
    options.evaluator = parse_evaluator_spec("surrogate:target");
    options.runs = 3;
    options.seed = 40;
    options.out_dir = tmp.path();
    const auto records = run_search(options);
    REQUIRE(records.size() == 3);
    for (int r = 0; r < 3; ++r) {
        const RunRecord& rec = records[std::size_t(r)];
        CHECK(rec.seed == 40u + unsigned(r));
        CHECK(rec.run_index == r);
        CHECK(rec.ok());
        CHECK(rec.evaluations == 4 * 3 + 1);
        CHECK(rec.config["seed"] == 40 + r);
        CHECK(rec.layer_count == int(materialize(rec.best, pso::PsoConfig::preset_a().space).layers.size()));
        CHECK(rec.raw_layer_count == int(rec.best.layers.size()));

        const fs::path dir = tmp.path() / fmt::format("run_{:03d}", r);
        for (const char* f : {"config.json", "history.csv", "best_architecture.json", "best_evaluated.json",
                              "summary.json"}) {
            CHECK(fs::exists(dir / f));
        }
        CHECK(slurp(dir / "history.csv") == history_csv(Algorithm::Pso, rec.history));
        CHECK(slurp(dir / "best_architecture.json") == serialize(rec.best) + "\n");

        const RunRecord back = read_run_dir(dir);
        // Only the CSV columns persist.
        CHECK(history_csv(Algorithm::Pso, back.history) == history_csv(Algorithm::Pso, rec.history));
        CHECK(back.best == rec.best);
        CHECK(back.final_report == rec.final_report);
        CHECK(back.search_report == rec.search_report);
        CHECK(back.wall_minutes == rec.wall_minutes);
        CHECK(back.config == nlohmann::json(rec.config));
    }

    // Statistics from disk reproduce the in-memory aggregate bit for bit.
    const StatsRow live = aggregate_stats(records);
    const StatsRow disk = aggregate_stats(std::vector<fs::path>{tmp.path()});
    CHECK(live.acc_max == disk.acc_max);
    CHECK(live.acc_mean == disk.acc_mean);
    CHECK(live.acc_stdev == disk.acc_stdev);
    CHECK(live.time_mean_minutes == disk.time_mean_minutes);
    CHECK(live.layers_of_best == disk.layers_of_best);
    CHECK(stats_to_json(live) == stats_to_json(disk));
}

TEST_CASE("history csv layouts") {
    std::vector<HistoryRow> rows{{0, 0.5, 0.5, 0.75, 0.25, 0.0}, {1, 0.25, 0.75, 0.5, 0.5, 1.5}};
    CHECK(history_csv(Algorithm::Pso, rows) ==
          "iteration,best_loss,best_acc,mean_loss,elapsed_s\n0,0.5,0.5,0.75,0\n1,0.25,0.75,0.5,1.5\n");
    rows[0].step = 1;
    rows[1].step = 2;
    CHECK(history_csv(Algorithm::Aco, rows) == "depth,best_acc,mean_acc,elapsed_s\n1,0.5,0.25,0\n2,0.75,0.5,1.5\n");
}

TEST_CASE("identical seeds give identical files") {
    for (const char* preset : {"pso_b", "aco_a"}) {
        TempDir a, b;
        RunOptions options;
        options.config = load_config(preset);
        options.evaluator = parse_evaluator_spec("surrogate:target");
        options.seed = 3;
        options.out_dir = a.path();
        run_search(options);
        options.out_dir = b.path();
        options.eval_parallelism = 4;
        run_search(options);
        CHECK(slurp(a.path() / "run_000/history.csv") == slurp(b.path() / "run_000/history.csv"));
        CHECK(slurp(a.path() / "run_000/best_architecture.json") ==
              slurp(b.path() / "run_000/best_architecture.json"));
    }
}

TEST_CASE("parallel runs match sequential runs") {
    RunOptions options;
    options.config = load_config(fixture("small_aco.json"));
    options.evaluator = parse_evaluator_spec("surrogate:paramband");
    options.runs = 4;
    const auto sequential = run_search(options);
    options.parallel_runs = 3;
    const auto parallel = run_search(options);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(sequential[r].history == parallel[r].history);
        CHECK(sequential[r].best == parallel[r].best);
    }

    options.evaluator = parse_evaluator_spec("extern:true");
    CHECK_THROWS_AS(run_search(options), UsageError);
}

TEST_CASE("a crashing backend fails its run without stopping the next") {
    TempDir tmp;
    const fs::path marker = tmp.path() / "marker";
    RunOptions options;
    options.config = load_config(fixture("small_pso.json"));
    options.evaluator =
        parse_evaluator_spec(fmt::format("extern:'{}' crashonce '{}'", OPENNAS_TRAINER_STUB, marker.string()));
    options.runs = 2;
    options.out_dir = tmp.path() / "out";
    const auto records = run_search(options);
    REQUIRE(records.size() == 2);
    CHECK_FALSE(records[0].ok());
    CHECK(records[0].failure->find("simulated out-of-memory") != std::string::npos);
    CHECK(records[1].ok());

    const RunRecord failed = read_run_dir(tmp.path() / "out/run_000");
    CHECK_FALSE(failed.ok());
    const StatsRow row = aggregate_stats(std::vector<fs::path>{tmp.path() / "out"});
    CHECK(row.runs == 1);
    CHECK(row.failed_runs == 1);
    CHECK(row.acc_max == records[1].final_report.val_accuracy);
}

TEST_CASE("statistics") {
    SUBCASE("three runs") {
        const StatsRow row =
            aggregate_stats({record_with_accuracy(0.9, 30), record_with_accuracy(0.8, 12), record_with_accuracy(0.85)});
        CHECK(row.acc_max == 0.9);
        CHECK(row.acc_mean == 0.85);
        // The doubles nearest 0.9, 0.8 and 0.85 have a sample stdev whose
        // correctly rounded value is two ulps below 0.05.
        CHECK(row.acc_stdev == 0.04999999999999999);
        CHECK(std::abs(row.acc_stdev - 0.05) < 1e-12);
        CHECK(row.layers_of_best == 30);
        CHECK(row.runs == 3);
        CHECK(format_stats_row(row) == "0.900  0.850  0.050  1  30");
    }
    SUBCASE("one run has zero spread") {
        const StatsRow row = aggregate_stats({record_with_accuracy(0.9)});
        CHECK(row.acc_max == 0.9);
        CHECK(row.acc_mean == 0.9);
        CHECK(row.acc_stdev == 0.0);
    }
    SUBCASE("row formatting") {
        StatsRow row;
        row.acc_max = 0.900;
        row.acc_mean = 0.853;
        row.acc_stdev = 0.044;
        row.time_mean_minutes = 1316;
        row.layers_of_best = 30;
        CHECK(format_stats_row(row) == "0.900  0.853  0.044  1316  30");
    }
    SUBCASE("input errors") {
        CHECK_THROWS_AS(aggregate_stats(std::vector<RunRecord>{}), UsageError);
        RunRecord other = record_with_accuracy(0.5);
        other.config = config_to_json(pso::PsoConfig::preset_a());
        CHECK_THROWS_AS(aggregate_stats({record_with_accuracy(0.5), other}), UsageError);
        RunRecord reseeded = record_with_accuracy(0.5);
        reseeded.config["seed"] = 99;
        CHECK_NOTHROW(aggregate_stats({record_with_accuracy(0.5), reseeded}));
        RunRecord failed = record_with_accuracy(0.5);
        failed.failure = "boom";
        CHECK_THROWS_AS(aggregate_stats({failed}), Error);
        CHECK_THROWS_AS(aggregate_stats(std::vector<fs::path>{"/no/such/dir"}), UsageError);
    }
}

TEST_CASE("dataset selection sets shape and classes") {
    SearchConfig c = pso::PsoConfig::preset_a();
    apply_dataset(c, "cifar10");
    CHECK(std::get<pso::PsoConfig>(c).space.input_shape == Shape{32, 32, 3});
    CHECK_THROWS_AS(apply_dataset(c, "mnist-ish"), UnknownDataset);
}
