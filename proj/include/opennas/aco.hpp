#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "opennas/arch.hpp"
#include "opennas/evaluation.hpp"
#include "opennas/rng.hpp"
#include "opennas/search.hpp"

namespace opennas::aco {

struct AcoConfig {
    int ants = 8;
    int epochs_candidate = 30;
    int max_depth = 20;
    double greediness = 0.5;
    double pheromone_start = 0.1;
    double pheromone_decay = 0.1;
    double pheromone_evaporation = 0.1;
    SpaceConfig space = SpaceConfig::aco_default();
    std::uint64_t seed = 0;
    // Node kinds the colony may place. BatchNorm additionally requires
    // space.batch_norm_enabled and Dropout a non-empty dropout set.
    std::vector<LayerKind> allowed_kinds{std::begin(kAllLayerKinds), std::end(kAllLayerKinds)};

    static AcoConfig preset_a(); // 8 ants, 30 epochs
    static AcoConfig preset_b(); // 16 ants, 15 epochs

    void check() const;

    friend bool operator==(const AcoConfig&, const AcoConfig&) = default;
};

// Transition into slot `depth` from the previous node (nullopt = input node).
struct TransitionKey {
    int depth = 0;
    std::optional<LayerKind> from;
    LayerKind to = LayerKind::Conv;

    auto operator<=>(const TransitionKey&) const = default;
};

struct AttributeKey {
    LayerKind kind = LayerKind::Conv;
    std::string attribute;
    double value = 0.0;

    auto operator<=>(const AttributeKey&) const = default;
};

using DecisionKey = std::variant<TransitionKey, AttributeKey>;

// Pheromone levels are created lazily: a key never written reads as the
// start level.
class PheromoneGraph {
public:
    explicit PheromoneGraph(double start_level) : start_(start_level) {}

    double level(const DecisionKey& key) const;
    void set_level(const DecisionKey& key, double level);
    bool touched(const DecisionKey& key) const;

    double start_level() const noexcept { return start_; }
    const std::map<TransitionKey, double>& transitions() const noexcept { return transitions_; }
    const std::map<AttributeKey, double>& attributes() const noexcept { return attributes_; }

    // Structured dump of every touched entry, for inspection.
    nlohmann::ordered_json dump() const;

private:
    double start_;
    std::map<TransitionKey, double> transitions_;
    std::map<AttributeKey, double> attributes_;
};

struct AntPath {
    std::vector<DecisionKey> decisions;
    Architecture architecture;
};

// With probability `greediness` returns the argmax level (lowest index on
// ties), otherwise samples proportionally to the levels.
std::size_t select_component(std::span<const double> levels, double greediness, Rng& rng);

// Legal kinds for the next slot given the kinds placed so far, in canonical
// order. Pooling that would underflow the current shape is dropped.
std::vector<LayerKind> legal_next_kinds(const Architecture& partial, const AcoConfig& config);

// Attribute choices the colony offers for a kind, as (name, values) pairs in
// selection order.
std::vector<std::pair<std::string, std::vector<double>>> attribute_choices(LayerKind kind, const AcoConfig& config);

AntPath ant_walk(const PheromoneGraph& graph, int depth_limit, const AcoConfig& config, Rng& rng);

// level <- (1 - decay) * level + decay * start, once per distinct key on the path.
void local_update(PheromoneGraph& graph, const AntPath& path, const AcoConfig& config);

// level <- (1 - evaporation) * level + evaporation * fitness, once per distinct
// key on the path. Fitness is clamped to [0, 1].
void global_update(PheromoneGraph& graph, const AntPath& path, double fitness, const AcoConfig& config);

// Uniform random member of the colony's space: depth uniform in
// [1, max_depth], then a walk with every legal option equiprobable.
Architecture random_architecture(const AcoConfig& config, Rng& rng);

// Depth schedule: for d = 1..max_depth every ant walks d slots (local update
// after each walk, in ant order), the round is evaluated, and the round's most
// accurate ant reinforces its path. Returns the most accurate architecture seen.
// When `final_graph` is non-null it receives the pheromone state at exit.
SearchResult aco_run(const AcoConfig& config, Evaluator& evaluator, const SearchOptions& options = {},
                     PheromoneGraph* final_graph = nullptr);

} // namespace opennas::aco
