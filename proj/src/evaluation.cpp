#include "opennas/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "opennas/errors.hpp"

namespace opennas {

namespace {

constexpr std::array<DatasetInfo, 3> kDatasets{{
    {"fashion_mnist", Shape{28, 28, 1}, 10},
    {"cifar10", Shape{32, 32, 3}, 10},
    {"synthetic", Shape{28, 28, 1}, 10},
}};

} // namespace

const DatasetInfo& dataset_info(std::string_view ref) {
    for (const auto& info : kDatasets) {
        if (info.name == ref) return info;
    }
    throw UnknownDataset(fmt::format("unknown dataset \"{}\"", ref));
}

void EvalRequest::check() const {
    if (epochs < 1) throw std::invalid_argument(fmt::format("epochs must be >= 1, got {}", epochs));
    if (subset_size && *subset_size < 1) throw std::invalid_argument("subset_size must be positive");
    dataset_info(dataset_ref);
}

double TargetSurrogate::distance(const Architecture& candidate, const Architecture& target) {
    const std::size_t n = std::max(candidate.layers.size(), target.layers.size());
    if (n == 0) return 0.0;
    const std::size_t common = std::min(candidate.layers.size(), target.layers.size());
    double cost = static_cast<double>(n - common);
    for (std::size_t i = 0; i < common; ++i) {
        const LayerSpec& a = candidate.layers[i];
        const LayerSpec& b = target.layers[i];
        if (a.kind != b.kind) {
            cost += 1.0;
        } else if (!(a == b)) {
            cost += 0.5;
        }
    }
    return cost / static_cast<double>(n);
}

FitnessReport TargetSurrogate::evaluate(const EvalRequest& request) {
    request.check();
    FitnessReport report;
    report.val_accuracy = 1.0 - distance(request.architecture, target_);
    report.val_loss = 1.0 - report.val_accuracy;
    report.param_count = param_count(request.architecture);
    return report;
}

ParamBandSurrogate::ParamBandSurrogate(double center_params) : center_(center_params) {
    if (!(center_params > 0.0)) throw std::invalid_argument("parameter band center must be positive");
}

double ParamBandSurrogate::fitness(double params, double center_params) {
    const double d = std::log10(std::max(params, 1.0)) - std::log10(center_params);
    return std::exp(-d * d);
}

FitnessReport ParamBandSurrogate::evaluate(const EvalRequest& request) {
    request.check();
    FitnessReport report;
    report.param_count = param_count(request.architecture);
    report.val_accuracy = fitness(static_cast<double>(report.param_count), center_);
    report.val_loss = 1.0 - report.val_accuracy;
    return report;
}

} // namespace opennas
