#include "opennas/search.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

namespace opennas {

std::vector<FitnessReport> evaluate_wave(Evaluator& evaluator, const std::vector<EvalRequest>& requests,
                                         int parallelism) {
    std::vector<FitnessReport> reports(requests.size());
    std::vector<std::exception_ptr> errors(requests.size());

    std::size_t workers = static_cast<std::size_t>(std::max(parallelism, 1));
    if (evaluator.max_parallelism() > 0) {
        workers = std::min(workers, static_cast<std::size_t>(evaluator.max_parallelism()));
    }
    workers = std::min(workers, requests.size());

    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < requests.size(); i = next++) {
            try {
                reports[i] = evaluator.evaluate(requests[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    if (workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    for (const auto& error : errors) {
        if (error) std::rethrow_exception(error);
    }
    return reports;
}

} // namespace opennas
