#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "opennas/arch.hpp"

namespace opennas {

struct DatasetInfo {
    std::string_view name;
    Shape input_shape;
    int num_classes;
};

// Throws UnknownDataset for anything other than fashion_mnist, cifar10 or
// synthetic.
const DatasetInfo& dataset_info(std::string_view ref);

struct EvalRequest {
    Architecture architecture;
    int epochs = 1;
    std::string dataset_ref = "synthetic";
    std::optional<std::int64_t> subset_size;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument for epochs < 1, UnknownDataset for an
    // unrecognized dataset.
    void check() const;
};

struct FitnessReport {
    double val_accuracy = 0.0;
    double val_loss = 0.0; // cross-entropy for real training
    double wall_seconds = 0.0;
    std::int64_t param_count = 0;

    friend bool operator==(const FitnessReport&, const FitnessReport&) = default;
};

class Evaluator {
public:
    virtual ~Evaluator() = default;

    // Throws EvaluatorFailure when the backend cannot produce a report.
    virtual FitnessReport evaluate(const EvalRequest& request) = 0;

    // Upper bound on concurrent evaluate() calls; 0 means unlimited.
    virtual int max_parallelism() const { return 1; }
};

// Fitness is one minus the normalized slot-wise edit distance to a hidden
// target. Ignores epochs. Reports zero wall time so runs stay reproducible.
class TargetSurrogate final : public Evaluator {
public:
    explicit TargetSurrogate(Architecture target) : target_(std::move(target)) {}

    // Per slot: wrong kind 1, right kind with different attributes 0.5; every
    // missing or extra slot 1. Normalized by the longer length.
    static double distance(const Architecture& candidate, const Architecture& target);

    FitnessReport evaluate(const EvalRequest& request) override;
    int max_parallelism() const override { return 0; }

    const Architecture& target() const noexcept { return target_; }

private:
    Architecture target_;
};

// Fitness exp(-(log10 p - log10 p*)^2) over the parameter count p.
class ParamBandSurrogate final : public Evaluator {
public:
    explicit ParamBandSurrogate(double center_params);

    static double fitness(double params, double center_params);

    FitnessReport evaluate(const EvalRequest& request) override;
    int max_parallelism() const override { return 0; }

private:
    double center_;
};

// Forwards to another evaluator and counts calls.
class CountingEvaluator final : public Evaluator {
public:
    explicit CountingEvaluator(Evaluator& inner) : inner_(inner) {}

    FitnessReport evaluate(const EvalRequest& request) override {
        calls_.fetch_add(1, std::memory_order_relaxed);
        return inner_.evaluate(request);
    }
    int max_parallelism() const override { return inner_.max_parallelism(); }

    long calls() const noexcept { return calls_.load(); }

private:
    Evaluator& inner_;
    std::atomic<long> calls_{0};
};

} // namespace opennas
