#include "opennas/aco.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <fmt/format.h>

#include "opennas/errors.hpp"

namespace opennas::aco {

namespace {

constexpr std::uint64_t kWalkStream = 11;
constexpr std::uint64_t kEvalSeed = 12;

// Keeps levels strictly positive even after long runs of zero-fitness
// reinforcement.
constexpr double kMinLevel = std::numeric_limits<double>::min();

bool allowed(const AcoConfig& config, LayerKind kind) {
    if (std::find(config.allowed_kinds.begin(), config.allowed_kinds.end(), kind) == config.allowed_kinds.end())
        return false;
    if (kind == LayerKind::BatchNorm) return config.space.batch_norm_enabled;
    if (kind == LayerKind::Dropout) return !config.space.dropout_set.empty();
    return true;
}

using KindSet = std::vector<LayerKind>;

KindSet successors(LayerKind kind, const KindSet& predecessor_set) {
    using K = LayerKind;
    switch (kind) {
    case K::Conv: return {K::Conv, K::MaxPool, K::AvgPool, K::FullyConnected, K::Dropout, K::BatchNorm};
    case K::MaxPool:
    case K::AvgPool: return {K::Conv, K::FullyConnected, K::Dropout, K::BatchNorm};
    case K::FullyConnected: return {K::FullyConnected, K::Dropout};
    case K::Dropout:
    case K::BatchNorm: {
        KindSet out;
        for (K k : predecessor_set) {
            if (k != kind) out.push_back(k);
        }
        return out;
    }
    }
    return {};
}

} // namespace

AcoConfig AcoConfig::preset_a() {
    AcoConfig config;
    config.ants = 8;
    config.epochs_candidate = 30;
    return config;
}

AcoConfig AcoConfig::preset_b() {
    AcoConfig config;
    config.ants = 16;
    config.epochs_candidate = 15;
    return config;
}

void AcoConfig::check() const {
    if (ants < 1) throw ConfigError("ants must be >= 1");
    if (epochs_candidate < 1) throw ConfigError("epochs_candidate must be >= 1");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (!(greediness >= 0.0 && greediness <= 1.0)) throw ConfigError("greediness must be in [0, 1]");
    if (!(pheromone_start > 0.0 && pheromone_start <= 1.0)) throw ConfigError("pheromone_start must be in (0, 1]");
    if (!(pheromone_decay >= 0.0 && pheromone_decay <= 1.0)) throw ConfigError("pheromone_decay must be in [0, 1]");
    if (!(pheromone_evaporation >= 0.0 && pheromone_evaporation <= 1.0))
        throw ConfigError("pheromone_evaporation must be in [0, 1]");
    space.check();
    if (space.layer_bounds.first > 1) throw ConfigError("ACO layer_bounds minimum must be <= 1");
    if (max_depth > space.layer_bounds.second) throw ConfigError("max_depth exceeds the layer_bounds maximum");
    if (!allowed(*this, LayerKind::Conv)) throw ConfigError("allowed_kinds must include conv");
    if (space.conv_channels_set.empty()) throw ConfigError("ACO needs a non-empty conv_channels_set");
    if (allowed(*this, LayerKind::FullyConnected) && space.fc_units_set.empty())
        throw ConfigError("ACO needs a non-empty fc_units_set when fc layers are allowed");
}

double PheromoneGraph::level(const DecisionKey& key) const {
    if (const auto* t = std::get_if<TransitionKey>(&key)) {
        const auto it = transitions_.find(*t);
        return it == transitions_.end() ? start_ : it->second;
    }
    const auto& a = std::get<AttributeKey>(key);
    const auto it = attributes_.find(a);
    return it == attributes_.end() ? start_ : it->second;
}

void PheromoneGraph::set_level(const DecisionKey& key, double level) {
    level = std::max(level, kMinLevel);
    if (const auto* t = std::get_if<TransitionKey>(&key)) {
        transitions_[*t] = level;
    } else {
        attributes_[std::get<AttributeKey>(key)] = level;
    }
}

bool PheromoneGraph::touched(const DecisionKey& key) const {
    if (const auto* t = std::get_if<TransitionKey>(&key)) return transitions_.contains(*t);
    return attributes_.contains(std::get<AttributeKey>(key));
}

nlohmann::ordered_json PheromoneGraph::dump() const {
    nlohmann::ordered_json out;
    out["pheromone_start"] = start_;
    out["transitions"] = nlohmann::ordered_json::array();
    for (const auto& [key, level] : transitions_) {
        out["transitions"].push_back({{"depth", key.depth},
                                      {"from", key.from ? kind_name(*key.from) : std::string_view("input")},
                                      {"to", kind_name(key.to)},
                                      {"level", level}});
    }
    out["attributes"] = nlohmann::ordered_json::array();
    for (const auto& [key, level] : attributes_) {
        out["attributes"].push_back(
            {{"kind", kind_name(key.kind)}, {"attribute", key.attribute}, {"value", key.value}, {"level", level}});
    }
    return out;
}

std::size_t select_component(std::span<const double> levels, double greediness, Rng& rng) {
    if (levels.size() <= 1) return 0;
    if (uniform01(rng) < greediness) {
        return static_cast<std::size_t>(std::max_element(levels.begin(), levels.end()) - levels.begin());
    }
    double total = 0.0;
    for (double l : levels) total += l;
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < levels.size(); ++i) {
        acc += levels[i];
        if (target < acc) return i;
    }
    return levels.size() - 1;
}

std::vector<LayerKind> legal_next_kinds(const Architecture& partial, const AcoConfig& config) {
    KindSet base{LayerKind::Conv};
    Shape shape = partial.input_shape;
    for (const LayerSpec& layer : partial.layers) {
        base = successors(layer.kind, base);
        switch (layer.kind) {
        case LayerKind::Conv: shape.channels = layer.out_channels; break;
        case LayerKind::FullyConnected: shape = Shape{1, 1, layer.units}; break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            shape.height /= kPoolStride;
            shape.width /= kPoolStride;
            break;
        default: break;
        }
    }
    const bool pool_fits = shape.height / kPoolStride > 0 && shape.width / kPoolStride > 0;

    std::vector<LayerKind> out;
    for (LayerKind kind : kAllLayerKinds) {
        if (std::find(base.begin(), base.end(), kind) == base.end()) continue;
        if (!allowed(config, kind)) continue;
        if (is_pool(kind) && !pool_fits) continue;
        out.push_back(kind);
    }
    return out;
}

std::vector<std::pair<std::string, std::vector<double>>> attribute_choices(LayerKind kind, const AcoConfig& config) {
    auto as_doubles = [](const std::vector<int>& values) { return std::vector<double>(values.begin(), values.end()); };
    switch (kind) {
    case LayerKind::Conv:
        return {{"out_channels", as_doubles(config.space.conv_channels_set)},
                {"kernel", as_doubles(config.space.kernel_set)}};
    case LayerKind::FullyConnected: return {{"units", as_doubles(config.space.fc_units_set)}};
    case LayerKind::Dropout: return {{"rate", config.space.dropout_set}};
    default: return {};
    }
}

AntPath ant_walk(const PheromoneGraph& graph, int depth_limit, const AcoConfig& config, Rng& rng) {
    AntPath path;
    path.architecture.input_shape = config.space.input_shape;
    path.architecture.num_classes = config.space.num_classes;

    std::optional<LayerKind> previous;
    std::vector<double> levels;
    for (int slot = 0; slot < depth_limit; ++slot) {
        const auto options = legal_next_kinds(path.architecture, config);
        if (options.empty()) break;

        levels.clear();
        for (LayerKind kind : options) levels.push_back(graph.level(TransitionKey{slot, previous, kind}));
        const LayerKind kind = options[select_component(levels, config.greediness, rng)];
        path.decisions.emplace_back(TransitionKey{slot, previous, kind});

        LayerSpec layer{kind};
        for (const auto& [name, values] : attribute_choices(kind, config)) {
            levels.clear();
            for (double v : values) levels.push_back(graph.level(AttributeKey{kind, name, v}));
            const double value = values[select_component(levels, config.greediness, rng)];
            path.decisions.emplace_back(AttributeKey{kind, name, value});
            if (name == "out_channels") layer.out_channels = static_cast<int>(value);
            else if (name == "kernel") layer.kernel = static_cast<int>(value);
            else if (name == "units") layer.units = static_cast<int>(value);
            else if (name == "rate") layer.rate = value;
        }
        path.architecture.layers.push_back(layer);
        previous = kind;
    }
    return path;
}

namespace {

template <typename Update>
void update_distinct(PheromoneGraph& graph, const AntPath& path, Update&& update) {
    std::set<TransitionKey> seen_t;
    std::set<AttributeKey> seen_a;
    for (const DecisionKey& key : path.decisions) {
        const bool fresh = std::visit(
            [&](const auto& k) {
                if constexpr (std::is_same_v<std::decay_t<decltype(k)>, TransitionKey>) return seen_t.insert(k).second;
                else return seen_a.insert(k).second;
            },
            key);
        if (fresh) graph.set_level(key, update(graph.level(key)));
    }
}

} // namespace

void local_update(PheromoneGraph& graph, const AntPath& path, const AcoConfig& config) {
    const double decay = config.pheromone_decay;
    const double start = config.pheromone_start;
    update_distinct(graph, path, [&](double level) { return (1.0 - decay) * level + decay * start; });
}

void global_update(PheromoneGraph& graph, const AntPath& path, double fitness, const AcoConfig& config) {
    const double evaporation = config.pheromone_evaporation;
    const double deposit = std::clamp(fitness, 0.0, 1.0);
    update_distinct(graph, path, [&](double level) { return (1.0 - evaporation) * level + evaporation * deposit; });
}

Architecture random_architecture(const AcoConfig& config, Rng& rng) {
    AcoConfig uniform = config;
    uniform.greediness = 0.0;
    const PheromoneGraph fresh(config.pheromone_start);
    const int depth = uniform_int(rng, 1, config.max_depth);
    return ant_walk(fresh, depth, uniform, rng).architecture;
}

SearchResult aco_run(const AcoConfig& config, Evaluator& evaluator, const SearchOptions& options,
                     PheromoneGraph* final_graph) {
    config.check();
    SearchResult result;
    PheromoneGraph graph(config.pheromone_start);
    std::optional<std::pair<Architecture, FitnessReport>> best;
    double elapsed = 0.0;

    for (int depth = 1; depth <= config.max_depth; ++depth) {
        std::vector<AntPath> paths;
        std::vector<EvalRequest> requests;
        paths.reserve(static_cast<std::size_t>(config.ants));
        for (int ant = 0; ant < config.ants; ++ant) {
            const std::initializer_list<std::uint64_t> key{kWalkStream, static_cast<std::uint64_t>(depth),
                                                           static_cast<std::uint64_t>(ant)};
            Rng rng = substream(config.seed, key);
            paths.push_back(ant_walk(graph, depth, config, rng));
            local_update(graph, paths.back(), config);

            EvalRequest req;
            req.architecture = paths.back().architecture;
            req.epochs = config.epochs_candidate;
            req.dataset_ref = options.dataset_ref;
            req.subset_size = options.subset_size;
            req.seed = derive_seed(config.seed, {kEvalSeed, static_cast<std::uint64_t>(depth),
                                                 static_cast<std::uint64_t>(ant)});
            requests.push_back(std::move(req));
        }

        std::vector<FitnessReport> reports;
        try {
            reports = evaluate_wave(evaluator, requests, options.parallelism);
        } catch (const EvaluatorFailure& e) {
            result.failure = fmt::format("depth {}: {}", depth, e.what());
            break;
        }
        result.evaluations += static_cast<long>(reports.size());

        std::size_t round_best = 0;
        double sum_acc = 0.0;
        double sum_loss = 0.0;
        for (std::size_t i = 0; i < reports.size(); ++i) {
            elapsed += reports[i].wall_seconds;
            sum_acc += reports[i].val_accuracy;
            sum_loss += reports[i].val_loss;
            if (options.on_evaluated) options.on_evaluated(paths[i].architecture, paths[i].architecture, reports[i]);
            if (reports[i].val_accuracy > reports[round_best].val_accuracy) round_best = i;
        }
        global_update(graph, paths[round_best], reports[round_best].val_accuracy, config);
        if (!best || reports[round_best].val_accuracy > best->second.val_accuracy) {
            best.emplace(paths[round_best].architecture, reports[round_best]);
        }

        const auto n = static_cast<double>(reports.size());
        result.history.push_back(HistoryRow{depth, best->second.val_loss, best->second.val_accuracy, sum_loss / n,
                                            sum_acc / n, elapsed});
    }
    result.search_eval_seconds = elapsed;
    if (final_graph) *final_graph = graph;

    if (best) {
        result.best = best->first;
        result.best_evaluated = best->first;
        result.best_search_report = best->second;
        result.final_report = best->second;
    }
    return result;
}

} // namespace opennas::aco
