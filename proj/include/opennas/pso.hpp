#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "opennas/arch.hpp"
#include "opennas/evaluation.hpp"
#include "opennas/rng.hpp"
#include "opennas/search.hpp"

namespace opennas::pso {

struct PsoConfig {
    int swarm_size = 20;
    int iterations = 10;
    double cg = 0.5; // probability of taking a velocity slot from gbest
    int epochs_particle = 5;
    int epochs_gbest = 100;
    SpaceConfig space = SpaceConfig::pso_default();
    std::uint64_t seed = 0;
    // Give a particle sitting on both of its bests a one-slot random edit
    // instead of an empty move.
    bool perturb_stagnant = true;

    static PsoConfig preset_a(); // swarm 20, 10 iterations
    static PsoConfig preset_b(); // swarm 10, 20 iterations

    void check() const;

    friend bool operator==(const PsoConfig&, const PsoConfig&) = default;
};

struct Keep {
    friend bool operator==(const Keep&, const Keep&) = default;
};
struct Replace {
    LayerSpec layer;
    friend bool operator==(const Replace&, const Replace&) = default;
};
struct Add {
    LayerSpec layer;
    friend bool operator==(const Add&, const Add&) = default;
};
struct Remove {
    friend bool operator==(const Remove&, const Remove&) = default;
};

// Slot-wise edit moving a particle; slot i addresses layer i of the position.
using SlotOp = std::variant<Keep, Replace, Add, Remove>;
using OpSequence = std::vector<SlotOp>;

struct Particle {
    Architecture position;
    Architecture pbest;
    std::optional<FitnessReport> pbest_fitness; // empty until evaluated
    int index = 0;
};

// Positions are sampled from per-particle substreams of config.seed.
std::vector<Particle> init_swarm(const PsoConfig& config);

// Edit plan turning `current` into `reference`.
OpSequence diff(const Architecture& current, const Architecture& reference);

// Per slot, takes the gbest op with probability cg, else the pbest op. The
// shorter sequence is padded with Keep.
OpSequence combine_velocity(const OpSequence& toward_gbest, const OpSequence& toward_pbest, double cg, Rng& rng);

// Applies ops left to right (Removes ignored at the minimum length, Adds at
// the maximum), then repairs. The result always passes validate.
Architecture apply_velocity(const Architecture& position, const OpSequence& velocity, const SpaceConfig& space,
                            Rng& rng);

// Makes an architecture valid for the space with the fewest local changes:
// clamps length, forces a leading Conv, turns Conv/pool after an FC into FC
// and turns an underflowing pool into Conv. Valid input is returned unchanged
// without consuming randomness.
Architecture repair(Architecture arch, const SpaceConfig& space, Rng& rng);

// Redraws one uniformly chosen slot, then repairs.
Architecture perturb(const Architecture& arch, const SpaceConfig& space, Rng& rng);

// Synchronous PSO: evaluate the initial swarm, then per iteration move every
// particle, evaluate the wave, update pbests and finally gbest. The winning
// architecture is re-evaluated once at epochs_gbest. Selection uses
// validation loss; ties keep the incumbent.
SearchResult pso_run(const PsoConfig& config, Evaluator& evaluator, const SearchOptions& options = {});

} // namespace opennas::pso
