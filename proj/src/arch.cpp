#include "opennas/arch.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "opennas/errors.hpp"

namespace opennas {

std::string_view kind_name(LayerKind kind) noexcept {
    switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::FullyConnected: return "fc";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::BatchNorm: return "batchnorm";
    }
    return "unknown";
}

std::optional<LayerKind> parse_kind(std::string_view name) noexcept {
    for (LayerKind kind : kAllLayerKinds) {
        if (kind_name(kind) == name) return kind;
    }
    return std::nullopt;
}

std::string to_string(const LayerSpec& layer) {
    switch (layer.kind) {
    case LayerKind::Conv: return fmt::format("Conv({}, {}x{})", layer.out_channels, layer.kernel, layer.kernel);
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::AvgPool: return "AvgPool";
    case LayerKind::FullyConnected: return fmt::format("FC({})", layer.units);
    case LayerKind::Dropout: return fmt::format("Dropout({})", layer.rate);
    case LayerKind::BatchNorm: return "BatchNorm";
    }
    return "?";
}

SpaceConfig SpaceConfig::pso_default() {
    return SpaceConfig{};
}

SpaceConfig SpaceConfig::aco_default() {
    SpaceConfig space;
    space.conv_channels_set = {32, 64, 128};
    space.kernel_set = {1, 3, 5};
    space.fc_units_set = {64, 128, 256};
    space.dropout_set = {0.1, 0.3, 0.5};
    space.layer_bounds = {1, 20};
    // The colony places BatchNorm and Dropout as explicit graph nodes, so
    // nothing is expanded at materialization time.
    space.dropout_rate_default = 0.0;
    return space;
}

namespace {

bool contains_rate(const std::vector<double>& set, double rate) {
    return std::any_of(set.begin(), set.end(), [rate](double r) { return std::abs(r - rate) <= 1e-12; });
}

bool contains(const std::vector<int>& set, int value) {
    return std::find(set.begin(), set.end(), value) != set.end();
}

} // namespace

void SpaceConfig::check() const {
    auto fail = [](const std::string& msg) { throw ConfigError("space: " + msg); };

    const auto& p = layer_type_probabilities;
    if (p.conv < 0 || p.pool < 0 || p.fc < 0) fail("layer_type_probabilities must be non-negative");
    if (std::abs(p.conv + p.pool + p.fc - 1.0) > 1e-9) fail("layer_type_probabilities must sum to 1");
    if (conv_channels_band.first < 1 || conv_channels_band.first > conv_channels_band.second)
        fail("conv_channels_band must satisfy 1 <= min <= max");
    for (int c : conv_channels_set) {
        if (c < conv_channels_band.first || c > conv_channels_band.second)
            fail(fmt::format("conv_channels_set value {} outside band", c));
    }
    if (kernel_set.empty()) fail("kernel_set is empty");
    for (int k : kernel_set) {
        if (k < 1 || k % 2 == 0) fail(fmt::format("kernel {} is not a positive odd size", k));
    }
    if (fc_units_max < 1) fail("fc_units_max must be positive");
    for (int u : fc_units_set) {
        if (u < 1 || u > fc_units_max) fail(fmt::format("fc_units_set value {} outside [1, fc_units_max]", u));
    }
    for (double r : dropout_set) {
        if (!(r > 0.0 && r < 1.0)) fail(fmt::format("dropout rate {} outside (0, 1)", r));
    }
    if (layer_bounds.first < 0 || layer_bounds.first > layer_bounds.second)
        fail("layer_bounds must satisfy 0 <= min <= max");
    if (dropout_rate_default != 0.0 && !contains_rate(dropout_set, dropout_rate_default))
        fail("dropout_rate_default must be 0 or a member of dropout_set");
    if (input_shape.height < 1 || input_shape.width < 1 || input_shape.channels < 1)
        fail("input_shape must be positive");
    if (num_classes < 1) fail("num_classes must be positive");
}

namespace {

// Shape walk shared by shape_infer and validate. Reports problems through
// `on_error` and keeps going; returns the shapes it could compute.
template <typename OnError>
ShapeTrace walk_shapes(const Architecture& arch, OnError&& on_error) {
    ShapeTrace trace;
    trace.shapes.reserve(arch.layers.size());
    Shape shape = arch.input_shape;
    bool seen_fc = false;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& layer = arch.layers[i];
        switch (layer.kind) {
        case LayerKind::Conv:
            if (seen_fc) on_error(ShapeError::Kind::OrderingViolation, i, "conv layer after a fully connected layer");
            shape.channels = layer.out_channels;
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool: {
            if (seen_fc) on_error(ShapeError::Kind::OrderingViolation, i, "pooling layer after a fully connected layer");
            const std::int64_t h = shape.height / kPoolStride;
            const std::int64_t w = shape.width / kPoolStride;
            if (h == 0 || w == 0) {
                on_error(ShapeError::Kind::PoolUnderflow, i,
                         fmt::format("pooling {}x{} would reach zero spatial size", shape.height, shape.width));
            } else {
                shape.height = h;
                shape.width = w;
            }
            break;
        }
        case LayerKind::FullyConnected:
            seen_fc = true;
            shape = Shape{1, 1, layer.units};
            break;
        case LayerKind::Dropout:
        case LayerKind::BatchNorm:
            break;
        }
        trace.shapes.push_back(shape);
    }
    trace.head_flat_width = shape.flat();
    return trace;
}

} // namespace

ShapeTrace shape_infer(const Architecture& arch) {
    return walk_shapes(arch, [](ShapeError::Kind kind, std::size_t index, const std::string& msg) {
        throw ShapeError(kind, index, fmt::format("layer {}: {}", index, msg));
    });
}

bool ValidationReport::has(std::string_view rule_id) const noexcept {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.rule_id == rule_id; });
}

bool ValidationReport::has(std::string_view rule_id, std::size_t layer_index) const noexcept {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) {
        return v.rule_id == rule_id && v.layer_index == layer_index;
    });
}

ValidationReport validate(const Architecture& arch, const SpaceConfig& space) {
    ValidationReport report;
    auto add = [&report](std::string rule, std::optional<std::size_t> index, std::string msg) {
        report.violations.push_back({std::move(rule), index, std::move(msg)});
    };

    const Shape& in = arch.input_shape;
    if (in.height < 1 || in.width < 1 || in.channels < 1) {
        add("input_shape", std::nullopt, "input shape must be positive");
    }
    if (arch.num_classes < 1) add("num_classes", std::nullopt, "num_classes must be positive");

    const auto depth = static_cast<int>(arch.layers.size());
    if (depth < space.layer_bounds.first || depth > space.layer_bounds.second) {
        add("layer_count", std::nullopt,
            fmt::format("{} layers outside [{}, {}]", depth, space.layer_bounds.first, space.layer_bounds.second));
    }
    if (!arch.layers.empty() && arch.layers.front().kind != LayerKind::Conv) {
        add("first_layer", 0, "first layer must be conv");
    }

    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& layer = arch.layers[i];
        switch (layer.kind) {
        case LayerKind::Conv:
            if (layer.out_channels < space.conv_channels_band.first ||
                layer.out_channels > space.conv_channels_band.second) {
                add("conv_channels", i,
                    fmt::format("{} output channels outside [{}, {}]", layer.out_channels,
                                space.conv_channels_band.first, space.conv_channels_band.second));
            }
            if (!contains(space.kernel_set, layer.kernel)) {
                add("conv_kernel", i, fmt::format("kernel {}x{} not in the kernel set", layer.kernel, layer.kernel));
            }
            break;
        case LayerKind::FullyConnected:
            if (layer.units < 1 || layer.units > space.fc_units_max) {
                add("fc_units", i, fmt::format("{} units outside [1, {}]", layer.units, space.fc_units_max));
            }
            break;
        case LayerKind::Dropout:
            if (!contains_rate(space.dropout_set, layer.rate)) {
                add("dropout_rate", i, fmt::format("dropout rate {} not in the dropout set", layer.rate));
            }
            break;
        default:
            break;
        }
    }

    if (in.height >= 1 && in.width >= 1) {
        walk_shapes(arch, [&](ShapeError::Kind kind, std::size_t index, const std::string& msg) {
            add(kind == ShapeError::Kind::PoolUnderflow ? "pool_underflow" : "ordering", index, msg);
        });
    }
    return report;
}

std::int64_t param_count(const Architecture& arch) {
    const ShapeTrace trace = shape_infer(arch);
    std::int64_t total = 0;
    Shape prev = arch.input_shape;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& layer = arch.layers[i];
        switch (layer.kind) {
        case LayerKind::Conv: {
            const std::int64_t k = layer.kernel;
            total += (k * k * prev.channels + 1) * layer.out_channels;
            break;
        }
        case LayerKind::FullyConnected:
            total += (prev.flat() + 1) * layer.units;
            break;
        case LayerKind::BatchNorm:
            total += 2 * prev.channels;
            break;
        default:
            break;
        }
        prev = trace.shapes[i];
    }
    total += (trace.head_flat_width + 1) * arch.num_classes;
    return total;
}

LayerKind draw_slot_kind(const SpaceConfig& space, Rng& rng) {
    const auto& p = space.layer_type_probabilities;
    const double u = uniform01(rng);
    if (u < p.conv) return LayerKind::Conv;
    if (u < p.conv + p.pool) return uniform01(rng) < 0.5 ? LayerKind::MaxPool : LayerKind::AvgPool;
    return LayerKind::FullyConnected;
}

namespace {

template <typename T>
T pick(const std::vector<T>& set, Rng& rng) {
    return set[uniform_int<std::size_t>(rng, 0, set.size() - 1)];
}

} // namespace

LayerSpec sample_layer(LayerKind kind, const SpaceConfig& space, Rng& rng) {
    switch (kind) {
    case LayerKind::Conv: {
        const int channels = space.conv_channels_set.empty()
                                 ? uniform_int(rng, space.conv_channels_band.first, space.conv_channels_band.second)
                                 : pick(space.conv_channels_set, rng);
        return LayerSpec::conv(channels, pick(space.kernel_set, rng));
    }
    case LayerKind::FullyConnected:
        return LayerSpec::fc(space.fc_units_set.empty() ? uniform_int(rng, 1, space.fc_units_max)
                                                        : pick(space.fc_units_set, rng));
    case LayerKind::Dropout:
        return LayerSpec::dropout(pick(space.dropout_set, rng));
    case LayerKind::MaxPool: return LayerSpec::maxpool();
    case LayerKind::AvgPool: return LayerSpec::avgpool();
    case LayerKind::BatchNorm: return LayerSpec::batchnorm();
    }
    return LayerSpec::batchnorm();
}

Architecture sample_random(const SpaceConfig& space, Rng& rng) {
    Architecture arch;
    arch.input_shape = space.input_shape;
    arch.num_classes = space.num_classes;

    const int depth = uniform_int(rng, space.layer_bounds.first, space.layer_bounds.second);
    arch.layers.reserve(static_cast<std::size_t>(depth));
    Shape shape = space.input_shape;
    bool fc_mode = false;
    for (int i = 0; i < depth; ++i) {
        LayerKind kind = LayerKind::Conv;
        if (i > 0) kind = fc_mode ? LayerKind::FullyConnected : draw_slot_kind(space, rng);
        if (is_pool(kind) && (shape.height / kPoolStride == 0 || shape.width / kPoolStride == 0)) {
            kind = LayerKind::Conv;
        }
        LayerSpec layer = sample_layer(kind, space, rng);
        switch (kind) {
        case LayerKind::Conv: shape.channels = layer.out_channels; break;
        case LayerKind::FullyConnected:
            fc_mode = true;
            shape = Shape{1, 1, layer.units};
            break;
        default:
            if (is_pool(kind)) {
                shape.height /= kPoolStride;
                shape.width /= kPoolStride;
            }
            break;
        }
        arch.layers.push_back(layer);
    }
    return arch;
}

Architecture materialize(const Architecture& arch, const SpaceConfig& space) {
    Architecture out;
    out.input_shape = arch.input_shape;
    out.num_classes = arch.num_classes;
    out.layers.reserve(arch.layers.size() * 2);
    const bool add_dropout = space.dropout_rate_default > 0.0;
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& layer = arch.layers[i];
        out.layers.push_back(layer);
        const bool last = i + 1 == arch.layers.size();
        const LayerKind next = last ? layer.kind : arch.layers[i + 1].kind;
        if (layer.kind == LayerKind::Conv && space.batch_norm_enabled && (last || next != LayerKind::BatchNorm)) {
            out.layers.push_back(LayerSpec::batchnorm());
        } else if (layer.kind == LayerKind::FullyConnected && add_dropout && (last || next != LayerKind::Dropout)) {
            out.layers.push_back(LayerSpec::dropout(space.dropout_rate_default));
        }
    }
    return out;
}

} // namespace opennas
