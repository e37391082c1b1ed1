#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "opennas/rng.hpp"

namespace opennas {

enum class LayerKind { Conv, MaxPool, AvgPool, FullyConnected, Dropout, BatchNorm };

inline constexpr LayerKind kAllLayerKinds[] = {
    LayerKind::Conv,    LayerKind::MaxPool,   LayerKind::AvgPool,
    LayerKind::FullyConnected, LayerKind::Dropout, LayerKind::BatchNorm,
};

// Pooling geometry is fixed for every pooling layer in the space.
inline constexpr int kPoolWindow = 2;
inline constexpr int kPoolStride = 2;

std::string_view kind_name(LayerKind kind) noexcept;
std::optional<LayerKind> parse_kind(std::string_view name) noexcept;

constexpr bool is_pool(LayerKind kind) noexcept {
    return kind == LayerKind::MaxPool || kind == LayerKind::AvgPool;
}

// One layer of the searchable stack. Only the attributes belonging to `kind`
// are meaningful; the others stay zero so that equality is structural.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv;
    int out_channels = 0; // Conv
    int kernel = 0;       // Conv, square
    int units = 0;        // FullyConnected
    double rate = 0.0;    // Dropout

    static LayerSpec conv(int out_channels, int kernel) {
        return {LayerKind::Conv, out_channels, kernel, 0, 0.0};
    }
    static LayerSpec maxpool() { return {LayerKind::MaxPool}; }
    static LayerSpec avgpool() { return {LayerKind::AvgPool}; }
    static LayerSpec fc(int units) { return {LayerKind::FullyConnected, 0, 0, units, 0.0}; }
    static LayerSpec dropout(double rate) { return {LayerKind::Dropout, 0, 0, 0, rate}; }
    static LayerSpec batchnorm() { return {LayerKind::BatchNorm}; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

std::string to_string(const LayerSpec& layer);

struct Shape {
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::int64_t channels = 0;

    std::int64_t flat() const noexcept { return height * width * channels; }
    friend bool operator==(const Shape&, const Shape&) = default;
};

// Sequential stack of layers. The classifier head (flatten + softmax over
// num_classes) is implicit and never stored in `layers`.
struct Architecture {
    std::vector<LayerSpec> layers;
    Shape input_shape{28, 28, 1};
    int num_classes = 10;

    std::size_t depth() const noexcept { return layers.size(); }
    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct LayerTypeProbabilities {
    double conv = 0.6;
    double pool = 0.3;
    double fc = 0.1;

    friend bool operator==(const LayerTypeProbabilities&, const LayerTypeProbabilities&) = default;
};

// Bounds and sampling distributions of an architecture space. Defaults are the
// particle-swarm space; aco_default() gives the ant-colony space.
struct SpaceConfig {
    std::pair<int, int> conv_channels_band{3, 256};
    // Discrete channel choices. Empty means "uniform over the band".
    std::vector<int> conv_channels_set;
    std::vector<int> kernel_set{3, 5, 7};
    int fc_units_max = 300;
    // Discrete unit choices. Empty means "uniform over [1, fc_units_max]".
    std::vector<int> fc_units_set;
    std::vector<double> dropout_set{0.5};
    std::pair<int, int> layer_bounds{3, 20};
    LayerTypeProbabilities layer_type_probabilities;
    // Insert a BatchNorm after every Conv when materializing.
    bool batch_norm_enabled = true;
    // Rate of the Dropout inserted after every FullyConnected when
    // materializing; 0 disables the expansion.
    double dropout_rate_default = 0.5;
    Shape input_shape{28, 28, 1};
    int num_classes = 10;

    static SpaceConfig pso_default();
    static SpaceConfig aco_default();

    // Throws ConfigError describing the first broken invariant.
    void check() const;

    friend bool operator==(const SpaceConfig&, const SpaceConfig&) = default;
};

struct ShapeTrace {
    std::vector<Shape> shapes; // one per layer
    std::int64_t head_flat_width = 0;
};

// Throws ShapeError on pooling underflow or a Conv/pool after a
// FullyConnected layer.
ShapeTrace shape_infer(const Architecture& arch);

struct Violation {
    std::string rule_id;
    std::optional<std::size_t> layer_index;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;

    bool valid() const noexcept { return violations.empty(); }
    bool has(std::string_view rule_id) const noexcept;
    bool has(std::string_view rule_id, std::size_t layer_index) const noexcept;
};

// Reports every broken rule, never throws.
ValidationReport validate(const Architecture& arch, const SpaceConfig& space);

// Trainable parameters including the classifier head. Propagates ShapeError.
std::int64_t param_count(const Architecture& arch);

// Draws a slot kind (Conv, MaxPool, AvgPool or FullyConnected) from the
// configured layer-type probabilities; pooling kind is a fair coin.
LayerKind draw_slot_kind(const SpaceConfig& space, Rng& rng);

// Fresh layer of the given kind with attributes drawn uniformly from the space.
LayerSpec sample_layer(LayerKind kind, const SpaceConfig& space, Rng& rng);

Architecture sample_random(const SpaceConfig& space, Rng& rng);

// Expands regularizers as the trainer builds them: BatchNorm after each Conv
// (when enabled) and Dropout after each FullyConnected (when the default rate
// is non-zero). Layers already followed by the regularizer are left alone.
Architecture materialize(const Architecture& arch, const SpaceConfig& space);

} // namespace opennas
