#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "opennas/arch.hpp"
#include "opennas/evaluation.hpp"
#include "opennas/rng.hpp"

namespace opennas {

struct RandomSearchResult {
    Architecture best;
    FitnessReport best_report;
    std::vector<double> best_so_far; // accuracy after each sample
};

using ArchitectureSampler = std::function<Architecture(Rng&)>;

// Baseline: `budget` independent samples, sample i drawn from substream
// (seed, i); keeps the most accurate (earliest on ties).
RandomSearchResult random_search(const ArchitectureSampler& sampler, Evaluator& evaluator, int budget,
                                 std::uint64_t seed, const std::string& dataset_ref = "synthetic");

} // namespace opennas
