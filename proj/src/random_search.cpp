#include "opennas/random_search.hpp"

#include <stdexcept>

namespace opennas {

RandomSearchResult random_search(const ArchitectureSampler& sampler, Evaluator& evaluator, int budget,
                                 std::uint64_t seed, const std::string& dataset_ref) {
    if (budget < 1) throw std::invalid_argument("random search budget must be >= 1");
    RandomSearchResult result;
    result.best_so_far.reserve(static_cast<std::size_t>(budget));
    for (int i = 0; i < budget; ++i) {
        Rng rng = substream(seed, {static_cast<std::uint64_t>(i)});
        EvalRequest req;
        req.architecture = sampler(rng);
        req.dataset_ref = dataset_ref;
        req.seed = derive_seed(seed, {static_cast<std::uint64_t>(i), 1});
        FitnessReport report = evaluator.evaluate(req);
        if (i == 0 || report.val_accuracy > result.best_report.val_accuracy) {
            result.best = req.architecture;
            result.best_report = report;
        }
        result.best_so_far.push_back(result.best_report.val_accuracy);
    }
    return result;
}

} // namespace opennas
