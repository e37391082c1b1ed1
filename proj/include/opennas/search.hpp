#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "opennas/arch.hpp"
#include "opennas/evaluation.hpp"

namespace opennas {

// One row per PSO iteration or ACO depth round. Fields a given algorithm does
// not track stay zero. `elapsed_s` accumulates evaluator-reported wall time.
struct HistoryRow {
    int step = 0;
    double best_loss = 0.0;
    double best_acc = 0.0;
    double mean_loss = 0.0;
    double mean_acc = 0.0;
    double elapsed_s = 0.0;

    friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

struct SearchOptions {
    std::string dataset_ref = "synthetic";
    std::optional<std::int64_t> subset_size;
    // Requested concurrent evaluations, capped by the evaluator's own limit.
    int parallelism = 1;
    // Called on the coordinating thread for every evaluated candidate, in
    // candidate order: (searched architecture, evaluated architecture, report).
    std::function<void(const Architecture&, const Architecture&, const FitnessReport&)> on_evaluated;
};

struct SearchResult {
    std::vector<HistoryRow> history;
    Architecture best;            // as searched
    Architecture best_evaluated;  // as handed to the evaluator
    FitnessReport best_search_report;
    FitnessReport final_report;
    long evaluations = 0;
    double search_eval_seconds = 0.0;
    double final_eval_seconds = 0.0;
    double retrain_wall_seconds = 0.0; // measured, not evaluator-reported
    // Set when an EvaluatorFailure aborted the run; history is partial.
    std::optional<std::string> failure;

    bool ok() const noexcept { return !failure.has_value(); }
};

// Evaluates a batch, running at most min(parallelism, evaluator limit)
// requests at once. Reports come back in request order. The first failing
// request's exception is rethrown after every worker has finished.
std::vector<FitnessReport> evaluate_wave(Evaluator& evaluator, const std::vector<EvalRequest>& requests,
                                         int parallelism);

} // namespace opennas
