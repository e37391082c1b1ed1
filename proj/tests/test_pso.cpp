#include <doctest.h>

#include <atomic>
#include <map>

#include "opennas/errors.hpp"
#include "opennas/pso.hpp"
#include "opennas/serialize.hpp"

using namespace opennas;
using namespace opennas::pso;

namespace {

Architecture arch(std::vector<LayerSpec> layers) {
    Architecture a;
    a.layers = std::move(layers);
    return a;
}

const LayerSpec C1 = LayerSpec::conv(16, 3);
const LayerSpec C2 = LayerSpec::conv(32, 5);
const LayerSpec P = LayerSpec::maxpool();

// Two channel counts, two kernels, three conv slots: 4^3 = 64 architectures.
SpaceConfig tiny_space() {
    SpaceConfig s = SpaceConfig::pso_default();
    s.conv_channels_set = {16, 32};
    s.kernel_set = {3, 5};
    s.layer_bounds = {3, 3};
    s.layer_type_probabilities = {1.0, 0.0, 0.0};
    s.batch_norm_enabled = false;
    s.dropout_rate_default = 0.0;
    return s;
}

std::vector<Architecture> enumerate_tiny() {
    std::vector<LayerSpec> choices;
    for (int c : {16, 32})
        for (int k : {3, 5}) choices.push_back(LayerSpec::conv(c, k));
    std::vector<Architecture> all;
    for (const auto& a : choices)
        for (const auto& b : choices)
            for (const auto& c : choices) all.push_back(arch({a, b, c}));
    return all;
}

class FailAfter final : public Evaluator {
public:
    FailAfter(Evaluator& inner, int calls) : inner_(inner), left_(calls) {}
    FitnessReport evaluate(const EvalRequest& r) override {
        if (left_-- <= 0) throw EvaluatorFailure("backend went away");
        return inner_.evaluate(r);
    }

private:
    Evaluator& inner_;
    int left_;
};

class Constant final : public Evaluator {
public:
    FitnessReport evaluate(const EvalRequest&) override { return {0.5, 0.5, 0.0, 0}; }
};

} // namespace

TEST_CASE("presets") {
    const auto a = PsoConfig::preset_a();
    CHECK(a.swarm_size == 20);
    CHECK(a.iterations == 10);
    CHECK(a.cg == 0.5);
    CHECK(a.epochs_particle == 5);
    CHECK(a.epochs_gbest == 100);
    const auto b = PsoConfig::preset_b();
    CHECK(b.swarm_size == 10);
    CHECK(b.iterations == 20);
    CHECK(b.cg == 0.5);
    CHECK(b.epochs_particle == 5);
    CHECK(b.epochs_gbest == 100);
    CHECK(a.space == SpaceConfig::pso_default());
    CHECK(a.space.conv_channels_band == std::pair{3, 256});
    CHECK(a.space.fc_units_max == 300);
    CHECK(a.space.layer_bounds == std::pair{3, 20});

    PsoConfig bad = a;
    bad.swarm_size = 0;
    CHECK_THROWS_AS(bad.check(), ConfigError);
    bad = a;
    bad.cg = 1.5;
    CHECK_THROWS_AS(bad.check(), ConfigError);
}

TEST_CASE("swarm initialization") {
    PsoConfig c = PsoConfig::preset_b();
    c.seed = 99;
    const auto swarm = init_swarm(c);
    REQUIRE(swarm.size() == 10);
    for (std::size_t i = 0; i < swarm.size(); ++i) {
        CHECK(validate(swarm[i].position, c.space).valid());
        CHECK(swarm[i].pbest == swarm[i].position);
        CHECK_FALSE(swarm[i].pbest_fitness.has_value());
        CHECK(swarm[i].index == int(i));
    }
    const auto again = init_swarm(c);
    for (std::size_t i = 0; i < swarm.size(); ++i) CHECK(serialize(again[i].position) == serialize(swarm[i].position));
}

TEST_CASE("diff") {
    SUBCASE("identity") {
        const Architecture a = arch({C1, C2, P});
        for (const SlotOp& op : diff(a, a)) CHECK(std::holds_alternative<Keep>(op));
    }
    SUBCASE("suffix add") {
        const OpSequence ops = diff(arch({C1, C2}), arch({C1, C2, P}));
        CHECK(ops == OpSequence{Keep{}, Keep{}, Add{P}});
    }
    SUBCASE("suffix remove") {
        const OpSequence ops = diff(arch({C1, C2, P}), arch({C1}));
        CHECK(ops == OpSequence{Keep{}, Remove{}, Remove{}});
    }
    SUBCASE("replace") {
        const OpSequence ops = diff(arch({C1, C2}), arch({C2, C2}));
        CHECK(ops == OpSequence{Replace{C2}, Keep{}});
    }
}

TEST_CASE("velocity mixing") {
    const OpSequence g{Replace{C1}, Replace{C1}, Add{P}};
    const OpSequence p{Keep{}, Remove{}};
    Rng rng = substream(51, {});
    CHECK(combine_velocity(g, p, 1.0, rng) == g);
    CHECK(combine_velocity(g, p, 0.0, rng) == OpSequence{Keep{}, Remove{}, Keep{}});

    const OpSequence many_g(10000, Replace{C1});
    const OpSequence many_p(10000, Keep{});
    const OpSequence mixed = combine_velocity(many_g, many_p, 0.5, rng);
    int from_g = 0;
    for (const SlotOp& op : mixed) from_g += std::holds_alternative<Replace>(op);
    CHECK(std::abs(from_g / 10000.0 - 0.5) < 0.02);
}

TEST_CASE("applying velocities") {
    const SpaceConfig space = SpaceConfig::pso_default();
    Rng rng = substream(52, {});

    SUBCASE("all keep is the identity") {
        for (int i = 0; i < 200; ++i) {
            const Architecture a = sample_random(space, rng);
            CHECK(apply_velocity(a, OpSequence(a.layers.size(), Keep{}), space, rng) == a);
        }
    }
    SUBCASE("a particle sitting on both bests stays put") {
        for (int i = 0; i < 200; ++i) {
            const Architecture a = sample_random(space, rng);
            CHECK(apply_velocity(a, combine_velocity(diff(a, a), diff(a, a), 0.5, rng), space, rng) == a);
        }
    }
    SUBCASE("adds are ignored at the maximum length") {
        const Architecture a = arch(std::vector<LayerSpec>(20, C1));
        const Architecture next = apply_velocity(a, OpSequence(20, Add{C2}), space, rng);
        CHECK(next.layers.size() == 20);
    }
    SUBCASE("removes are ignored at the minimum length") {
        const Architecture a = arch({C1, C1, C1});
        const Architecture next = apply_velocity(a, OpSequence(3, Remove{}), space, rng);
        CHECK(next == a);
    }
    SUBCASE("conv landing after fc becomes fc") {
        const Architecture a = arch({C1, LayerSpec::fc(32), LayerSpec::fc(16)});
        const Architecture next = apply_velocity(a, OpSequence{Keep{}, Keep{}, Replace{C2}}, space, rng);
        REQUIRE(next.layers.size() == 3);
        CHECK(next.layers[2].kind == LayerKind::FullyConnected);
        CHECK(validate(next, space).valid());
    }
    SUBCASE("first slot is forced back to conv") {
        const Architecture next =
            apply_velocity(arch({C1, C1, C1}), OpSequence{Replace{P}, Keep{}, Keep{}}, space, rng);
        CHECK(next.layers[0].kind == LayerKind::Conv);
    }
    SUBCASE("random velocities always give valid positions within bounds") {
        for (int i = 0; i < 3000; ++i) {
            const Architecture a = sample_random(space, rng);
            const Architecture g = sample_random(space, rng);
            const Architecture p = sample_random(space, rng);
            const Architecture next =
                apply_velocity(a, combine_velocity(diff(a, g), diff(a, p), uniform01(rng), rng), space, rng);
            const auto report = validate(next, space);
            if (!report.valid()) FAIL(serialize(next) << ": " << report.violations.front().message);
        }
    }
    SUBCASE("repair is idempotent") {
        for (int i = 0; i < 500; ++i) {
            const Architecture a = sample_random(space, rng);
            CHECK(repair(a, space, rng) == a);
        }
    }
}

TEST_CASE("with cg = 1 and a frozen gbest every particle reaches it") {
    const SpaceConfig space = SpaceConfig::pso_default();
    Rng rng = substream(53, {});
    for (int trial = 0; trial < 200; ++trial) {
        const Architecture gbest = sample_random(space, rng);
        Architecture position = sample_random(space, rng);
        const Architecture pbest = position;
        int steps = 0;
        while (!(position == gbest) && steps < space.layer_bounds.second) {
            position = apply_velocity(position, combine_velocity(diff(position, gbest), diff(position, pbest), 1.0, rng),
                                      space, rng);
            ++steps;
        }
        CHECK(position == gbest);
    }
}

TEST_CASE("search loop accounting") {
    Rng rng = substream(54, {});
    PsoConfig c = PsoConfig::preset_b();
    TargetSurrogate target(materialize(sample_random(c.space, rng), c.space));

    SUBCASE("preset B makes 211 calls") {
        CountingEvaluator counter(target);
        const auto r = pso_run(c, counter);
        CHECK(counter.calls() == 10 * 21 + 1);
        CHECK(r.evaluations == 211);
        CHECK(r.history.size() == 21);
    }
    SUBCASE("zero iterations evaluates the initial swarm and retrains once") {
        c.iterations = 0;
        CountingEvaluator counter(target);
        const auto r = pso_run(c, counter);
        CHECK(counter.calls() == 11);
        CHECK(r.history.size() == 1);
    }
    SUBCASE("a single particle still searches") {
        c.swarm_size = 1;
        CountingEvaluator counter(target);
        const auto r = pso_run(c, counter);
        CHECK(counter.calls() == 22);
        CHECK(r.ok());
        CHECK(r.history.back().best_loss <= r.history.front().best_loss);
    }
}

TEST_CASE("retrain uses the long budget and its report is final") {
    PsoConfig c = PsoConfig::preset_b();
    c.iterations = 2;
    std::vector<int> epochs;
    class Recorder final : public Evaluator {
    public:
        explicit Recorder(std::vector<int>& e) : e_(e) {}
        FitnessReport evaluate(const EvalRequest& r) override {
            e_.push_back(r.epochs);
            const double acc = r.epochs == 100 ? 0.99 : 0.5;
            return {acc, 1.0 - acc, 0.0, 0};
        }

    private:
        std::vector<int>& e_;
    } recorder(epochs);
    const auto r = pso_run(c, recorder);
    REQUIRE(epochs.size() == 31);
    for (std::size_t i = 0; i + 1 < epochs.size(); ++i) CHECK(epochs[i] == 5);
    CHECK(epochs.back() == 100);
    CHECK(r.final_report.val_accuracy == 0.99);
    CHECK(r.best_search_report.val_accuracy == 0.5);
}

TEST_CASE("ties keep the incumbent") {
    PsoConfig c = PsoConfig::preset_b();
    c.seed = 8;
    Constant constant;
    const auto r = pso_run(c, constant);
    CHECK(r.best == init_swarm(c).front().position);
}

TEST_CASE("best loss never increases and every position is valid") {
    PsoConfig c = PsoConfig::preset_b();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        c.seed = seed;
        Rng rng = substream(seed, {77});
        TargetSurrogate target(materialize(sample_random(c.space, rng), c.space));
        SearchOptions options;
        // Each searched slot expands to at most two evaluated layers.
        SpaceConfig expanded = c.space;
        expanded.layer_bounds.second *= 2;
        int invalid = 0;
        options.on_evaluated = [&](const Architecture& searched, const Architecture& evaluated, const FitnessReport&) {
            invalid += !validate(searched, c.space).valid();
            invalid += !validate(evaluated, expanded).valid();
            invalid += evaluated != materialize(searched, c.space);
        };
        const auto r = pso_run(c, target, options);
        CHECK(invalid == 0);
        for (std::size_t i = 1; i < r.history.size(); ++i) {
            CHECK(r.history[i].best_loss <= r.history[i - 1].best_loss);
            CHECK(r.history[i].best_acc >= r.history[i - 1].best_acc);
        }
    }
}

TEST_CASE("pbest per particle never gets worse") {
    PsoConfig c = PsoConfig::preset_b();
    c.seed = 4;
    Rng rng = substream(4, {78});
    TargetSurrogate target(materialize(sample_random(c.space, rng), c.space));
    // Candidates arrive in particle order each wave, so slot i of every wave is particle i.
    std::vector<double> best(static_cast<std::size_t>(c.swarm_size), 2.0);
    std::vector<std::vector<double>> trail(static_cast<std::size_t>(c.swarm_size));
    int seen = 0;
    SearchOptions options;
    options.on_evaluated = [&](const Architecture&, const Architecture&, const FitnessReport& r) {
        const auto i = static_cast<std::size_t>(seen++ % c.swarm_size);
        best[i] = std::min(best[i], r.val_loss);
        trail[i].push_back(best[i]);
    };
    const auto r = pso_run(c, target, options);
    double gbest = 2.0;
    for (const auto& t : trail) {
        for (std::size_t k = 1; k < t.size(); ++k) CHECK(t[k] <= t[k - 1]);
        gbest = std::min(gbest, t.back());
    }
    CHECK(r.history.back().best_loss == gbest);
}

TEST_CASE("deterministic regardless of evaluation parallelism") {
    PsoConfig c = PsoConfig::preset_a();
    c.seed = 1234;
    Rng rng = substream(1234, {79});
    TargetSurrogate target(materialize(sample_random(c.space, rng), c.space));
    SearchOptions serial;
    SearchOptions parallel;
    parallel.parallelism = 6;
    const auto a = pso_run(c, target, serial);
    const auto b = pso_run(c, target, parallel);
    const auto again = pso_run(c, target, serial);
    CHECK(a.history == b.history);
    CHECK(a.history == again.history);
    CHECK(serialize(a.best) == serialize(b.best));
}

TEST_CASE("evaluator failure keeps the partial history") {
    PsoConfig c = PsoConfig::preset_b();
    Rng rng = substream(55, {});
    TargetSurrogate target(materialize(sample_random(c.space, rng), c.space));
    FailAfter failing(target, 35);
    const auto r = pso_run(c, failing);
    CHECK_FALSE(r.ok());
    CHECK(r.history.size() == 3);
    CHECK(r.failure->find("iteration 3") != std::string::npos);

    FailAfter at_retrain(target, 211 - 1);
    const auto r2 = pso_run(c, at_retrain);
    CHECK_FALSE(r2.ok());
    CHECK(r2.history.size() == 21);
    CHECK(r2.failure->find("retrain") != std::string::npos);
}

TEST_CASE("tiny space: enumeration oracle and search success") {
    const SpaceConfig space = tiny_space();
    const auto all = enumerate_tiny();
    REQUIRE(all.size() == 64);

    // Sampling covers exactly the enumerated set.
    std::map<std::string, int> seen;
    Rng rng = substream(56, {});
    for (int i = 0; i < 5000; ++i) ++seen[serialize(sample_random(space, rng))];
    CHECK(seen.size() == 64);
    for (const Architecture& a : all) CHECK(seen.contains(serialize(a)));

    int found = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng target_rng = substream(seed, {1000});
        const Architecture target = all[uniform_int<std::size_t>(target_rng, 0, all.size() - 1)];
        TargetSurrogate surrogate(target);

        // Exhaustive oracle: the target is the unique optimum at fitness 1.
        double best = -1.0;
        int argmax_count = 0;
        for (const Architecture& a : all) {
            const double f = 1.0 - TargetSurrogate::distance(a, target);
            if (f > best) {
                best = f;
                argmax_count = 1;
            } else if (f == best) {
                ++argmax_count;
            }
        }
        REQUIRE(best == 1.0);
        REQUIRE(argmax_count == 1);

        PsoConfig c = PsoConfig::preset_b();
        c.space = space;
        c.seed = seed;
        const auto r = pso_run(c, surrogate);
        found += r.best_search_report.val_accuracy == best;
    }
    CHECK(found >= 18);
}
