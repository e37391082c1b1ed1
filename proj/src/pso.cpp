#include "opennas/pso.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include <fmt/format.h>

#include "opennas/errors.hpp"

namespace opennas::pso {

namespace {

// Substream tags.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kMoveStream = 2;
constexpr std::uint64_t kEvalSeed = 3;
constexpr std::uint64_t kRetrainSeed = 4;

} // namespace

PsoConfig PsoConfig::preset_a() {
    PsoConfig config;
    config.swarm_size = 20;
    config.iterations = 10;
    return config;
}

PsoConfig PsoConfig::preset_b() {
    PsoConfig config;
    config.swarm_size = 10;
    config.iterations = 20;
    return config;
}

void PsoConfig::check() const {
    if (swarm_size < 1) throw ConfigError("swarm_size must be >= 1");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (!(cg >= 0.0 && cg <= 1.0)) throw ConfigError("cg must be in [0, 1]");
    if (epochs_particle < 1 || epochs_gbest < 1) throw ConfigError("epoch budgets must be >= 1");
    space.check();
}

std::vector<Particle> init_swarm(const PsoConfig& config) {
    std::vector<Particle> swarm;
    swarm.reserve(static_cast<std::size_t>(config.swarm_size));
    for (int i = 0; i < config.swarm_size; ++i) {
        Rng rng = substream(config.seed, {kInitStream, static_cast<std::uint64_t>(i)});
        Particle p;
        p.position = sample_random(config.space, rng);
        p.pbest = p.position;
        p.index = i;
        swarm.push_back(std::move(p));
    }
    return swarm;
}

OpSequence diff(const Architecture& current, const Architecture& reference) {
    const std::size_t n = std::max(current.layers.size(), reference.layers.size());
    OpSequence ops;
    ops.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (i >= current.layers.size()) {
            ops.emplace_back(Add{reference.layers[i]});
        } else if (i >= reference.layers.size()) {
            ops.emplace_back(Remove{});
        } else if (current.layers[i] == reference.layers[i]) {
            ops.emplace_back(Keep{});
        } else {
            ops.emplace_back(Replace{reference.layers[i]});
        }
    }
    return ops;
}

OpSequence combine_velocity(const OpSequence& toward_gbest, const OpSequence& toward_pbest, double cg, Rng& rng) {
    const std::size_t n = std::max(toward_gbest.size(), toward_pbest.size());
    OpSequence out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const SlotOp g = i < toward_gbest.size() ? toward_gbest[i] : SlotOp{Keep{}};
        const SlotOp p = i < toward_pbest.size() ? toward_pbest[i] : SlotOp{Keep{}};
        out.push_back(uniform01(rng) < cg ? g : p);
    }
    return out;
}

Architecture apply_velocity(const Architecture& position, const OpSequence& velocity, const SpaceConfig& space,
                            Rng& rng) {
    const auto [min_layers, max_layers] = space.layer_bounds;
    const std::size_t n = position.layers.size();

    Architecture next;
    next.input_shape = position.input_shape;
    next.num_classes = position.num_classes;
    int length = static_cast<int>(n);

    const std::size_t slots = std::max(n, velocity.size());
    for (std::size_t i = 0; i < slots; ++i) {
        const SlotOp op = i < velocity.size() ? velocity[i] : SlotOp{Keep{}};
        const bool existing = i < n;
        if (const auto* replace = std::get_if<Replace>(&op)) {
            if (existing) next.layers.push_back(replace->layer);
        } else if (std::holds_alternative<Remove>(op)) {
            if (!existing) continue;
            if (length > min_layers) {
                --length;
            } else {
                next.layers.push_back(position.layers[i]);
            }
        } else if (const auto* add = std::get_if<Add>(&op)) {
            if (existing) next.layers.push_back(position.layers[i]);
            if (length < max_layers) {
                next.layers.push_back(add->layer);
                ++length;
            }
        } else if (existing) {
            next.layers.push_back(position.layers[i]);
        }
    }
    return repair(std::move(next), space, rng);
}

Architecture repair(Architecture arch, const SpaceConfig& space, Rng& rng) {
    const auto [min_layers, max_layers] = space.layer_bounds;
    if (static_cast<int>(arch.layers.size()) > max_layers) arch.layers.resize(static_cast<std::size_t>(max_layers));
    while (static_cast<int>(arch.layers.size()) < min_layers) {
        const bool after_fc = std::any_of(arch.layers.begin(), arch.layers.end(),
                                          [](const LayerSpec& l) { return l.kind == LayerKind::FullyConnected; });
        arch.layers.push_back(sample_layer(after_fc ? LayerKind::FullyConnected : LayerKind::Conv, space, rng));
    }

    Shape shape = arch.input_shape;
    bool seen_fc = false;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        LayerSpec& layer = arch.layers[i];
        if (i == 0 && layer.kind != LayerKind::Conv) {
            layer = sample_layer(LayerKind::Conv, space, rng);
        } else if (seen_fc && (layer.kind == LayerKind::Conv || is_pool(layer.kind))) {
            layer = sample_layer(LayerKind::FullyConnected, space, rng);
        } else if (is_pool(layer.kind) && (shape.height / kPoolStride == 0 || shape.width / kPoolStride == 0)) {
            layer = sample_layer(LayerKind::Conv, space, rng);
        }

        switch (layer.kind) {
        case LayerKind::Conv: shape.channels = layer.out_channels; break;
        case LayerKind::FullyConnected:
            seen_fc = true;
            shape = Shape{1, 1, layer.units};
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            shape.height /= kPoolStride;
            shape.width /= kPoolStride;
            break;
        default: break;
        }
    }
    return arch;
}

Architecture perturb(const Architecture& arch, const SpaceConfig& space, Rng& rng) {
    if (arch.layers.empty()) return repair(arch, space, rng);
    Architecture out = arch;
    const auto slot = uniform_int<std::size_t>(rng, 0, out.layers.size() - 1);
    const LayerKind kind = slot == 0 ? LayerKind::Conv : draw_slot_kind(space, rng);
    out.layers[slot] = sample_layer(kind, space, rng);
    return repair(std::move(out), space, rng);
}

namespace {

struct Best {
    Architecture arch;
    FitnessReport report;
};

double mean_loss(const std::vector<FitnessReport>& reports) {
    if (reports.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : reports) sum += r.val_loss;
    return sum / static_cast<double>(reports.size());
}

double mean_acc(const std::vector<FitnessReport>& reports) {
    if (reports.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& r : reports) sum += r.val_accuracy;
    return sum / static_cast<double>(reports.size());
}

} // namespace

SearchResult pso_run(const PsoConfig& config, Evaluator& evaluator, const SearchOptions& options) {
    config.check();
    SearchResult result;
    std::vector<Particle> swarm = init_swarm(config);
    std::optional<Best> gbest;
    double elapsed = 0.0;

    auto request_for = [&](const Architecture& arch, int epochs, std::uint64_t seed) {
        EvalRequest req;
        req.architecture = materialize(arch, config.space);
        req.epochs = epochs;
        req.dataset_ref = options.dataset_ref;
        req.subset_size = options.subset_size;
        req.seed = seed;
        return req;
    };

    for (int t = 0; t <= config.iterations; ++t) {
        if (t > 0) {
            const Architecture gbest_arch = gbest->arch;
            for (Particle& p : swarm) {
                Rng rng = substream(config.seed, {kMoveStream, static_cast<std::uint64_t>(t),
                                                  static_cast<std::uint64_t>(p.index)});
                const OpSequence velocity =
                    combine_velocity(diff(p.position, gbest_arch), diff(p.position, p.pbest), config.cg, rng);
                Architecture next = apply_velocity(p.position, velocity, config.space, rng);
                if (config.perturb_stagnant && next == p.position) next = perturb(p.position, config.space, rng);
                p.position = std::move(next);
            }
        }

        std::vector<EvalRequest> requests;
        requests.reserve(swarm.size());
        for (const Particle& p : swarm) {
            requests.push_back(request_for(
                p.position, config.epochs_particle,
                derive_seed(config.seed, {kEvalSeed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(p.index)})));
        }

        std::vector<FitnessReport> reports;
        try {
            reports = evaluate_wave(evaluator, requests, options.parallelism);
        } catch (const EvaluatorFailure& e) {
            result.failure = fmt::format("iteration {}: {}", t, e.what());
            break;
        }
        result.evaluations += static_cast<long>(reports.size());

        for (std::size_t i = 0; i < swarm.size(); ++i) {
            Particle& p = swarm[i];
            elapsed += reports[i].wall_seconds;
            if (options.on_evaluated) options.on_evaluated(p.position, requests[i].architecture, reports[i]);
            if (!p.pbest_fitness || reports[i].val_loss < p.pbest_fitness->val_loss) {
                p.pbest = p.position;
                p.pbest_fitness = reports[i];
            }
        }
        for (const Particle& p : swarm) {
            if (!gbest || p.pbest_fitness->val_loss < gbest->report.val_loss) gbest = Best{p.pbest, *p.pbest_fitness};
        }

        result.history.push_back(HistoryRow{t, gbest->report.val_loss, gbest->report.val_accuracy,
                                            mean_loss(reports), mean_acc(reports), elapsed});
    }
    result.search_eval_seconds = elapsed;

    if (!gbest) return result;
    result.best = gbest->arch;
    result.best_evaluated = materialize(gbest->arch, config.space);
    result.best_search_report = gbest->report;
    result.final_report = gbest->report;
    if (result.failure) return result;

    try {
        const auto retrain =
            request_for(gbest->arch, config.epochs_gbest, derive_seed(config.seed, {kRetrainSeed}));
        const auto started = std::chrono::steady_clock::now();
        result.final_report = evaluator.evaluate(retrain);
        result.retrain_wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        ++result.evaluations;
        result.final_eval_seconds = result.final_report.wall_seconds;
    } catch (const EvaluatorFailure& e) {
        result.failure = fmt::format("global-best retrain: {}", e.what());
    }
    return result;
}

} // namespace opennas::pso
