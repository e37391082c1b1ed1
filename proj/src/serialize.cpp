#include "opennas/serialize.hpp"

#include <fmt/format.h>

#include "opennas/errors.hpp"

namespace opennas {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json layer_to_json(const LayerSpec& layer) {
    ordered_json out;
    out["kind"] = kind_name(layer.kind);
    switch (layer.kind) {
    case LayerKind::Conv:
        out["out_channels"] = layer.out_channels;
        out["kernel"] = layer.kernel;
        break;
    case LayerKind::FullyConnected:
        out["units"] = layer.units;
        break;
    case LayerKind::Dropout:
        out["rate"] = layer.rate;
        break;
    default:
        break;
    }
    return out;
}

void expect_keys(const json& obj, std::initializer_list<std::string_view> keys, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        bool known = false;
        for (auto k : keys) known = known || k == key;
        if (!known) throw SchemaError(fmt::format("{}: unexpected field \"{}\"", where, key));
    }
    for (auto k : keys) {
        if (!obj.contains(std::string(k))) throw SchemaError(fmt::format("{}: missing field \"{}\"", where, k));
    }
}

int positive_int(const json& value, const std::string& where) {
    if (!value.is_number_integer()) throw SchemaError(where + ": expected an integer");
    const auto v = value.get<long long>();
    if (v < 1 || v > std::numeric_limits<int>::max()) throw SchemaError(where + ": expected a positive integer");
    return static_cast<int>(v);
}

LayerSpec layer_from_json(const json& obj, std::size_t index) {
    const std::string where = fmt::format("layers[{}]", index);
    if (!obj.is_object()) throw SchemaError(where + ": expected an object");
    if (!obj.contains("kind") || !obj["kind"].is_string()) throw SchemaError(where + ": missing string field \"kind\"");
    const auto name = obj["kind"].get<std::string>();
    const auto kind = parse_kind(name);
    if (!kind) throw SchemaError(fmt::format("{}: unknown layer kind \"{}\"", where, name));

    switch (*kind) {
    case LayerKind::Conv:
        expect_keys(obj, {"kind", "out_channels", "kernel"}, where);
        return LayerSpec::conv(positive_int(obj["out_channels"], where + ".out_channels"),
                               positive_int(obj["kernel"], where + ".kernel"));
    case LayerKind::FullyConnected:
        expect_keys(obj, {"kind", "units"}, where);
        return LayerSpec::fc(positive_int(obj["units"], where + ".units"));
    case LayerKind::Dropout: {
        expect_keys(obj, {"kind", "rate"}, where);
        const json& rate = obj["rate"];
        if (!rate.is_number() || !(rate.get<double>() > 0.0 && rate.get<double>() < 1.0))
            throw SchemaError(where + ".rate: expected a number in (0, 1)");
        return LayerSpec::dropout(rate.get<double>());
    }
    default:
        expect_keys(obj, {"kind"}, where);
        return LayerSpec{*kind};
    }
}

} // namespace

ordered_json to_json(const Architecture& arch) {
    ordered_json doc;
    doc["input_shape"] = {arch.input_shape.height, arch.input_shape.width, arch.input_shape.channels};
    doc["num_classes"] = arch.num_classes;
    doc["layers"] = ordered_json::array();
    for (const LayerSpec& layer : arch.layers) doc["layers"].push_back(layer_to_json(layer));
    return doc;
}

std::string serialize(const Architecture& arch) {
    return to_json(arch).dump();
}

Architecture architecture_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaError("architecture: expected an object");
    expect_keys(doc, {"input_shape", "num_classes", "layers"}, "architecture");

    const json& shape = doc["input_shape"];
    if (!shape.is_array() || shape.size() != 3) throw SchemaError("input_shape: expected [H, W, C]");
    Architecture arch;
    arch.input_shape = Shape{positive_int(shape[0], "input_shape[0]"), positive_int(shape[1], "input_shape[1]"),
                             positive_int(shape[2], "input_shape[2]")};
    arch.num_classes = positive_int(doc["num_classes"], "num_classes");

    const json& layers = doc["layers"];
    if (!layers.is_array()) throw SchemaError("layers: expected an array");
    arch.layers.reserve(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) arch.layers.push_back(layer_from_json(layers[i], i));
    return arch;
}

Architecture deserialize(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document.begin(), document.end());
    } catch (const json::parse_error& e) {
        throw ParseError(e.byte, e.what());
    }
    return architecture_from_json(doc);
}

} // namespace opennas
