#include <doctest.h>

#include "opennas/aco.hpp"
#include "opennas/errors.hpp"
#include "opennas/serialize.hpp"

using namespace opennas;

TEST_CASE("canonical document layout") {
    Architecture a;
    a.input_shape = {28, 28, 1};
    a.layers = {LayerSpec::conv(8, 3), LayerSpec::maxpool(), LayerSpec::avgpool(), LayerSpec::batchnorm(),
                LayerSpec::fc(64), LayerSpec::dropout(0.5)};
    CHECK(serialize(a) ==
          R"({"input_shape":[28,28,1],"num_classes":10,"layers":[{"kind":"conv","out_channels":8,"kernel":3},)"
          R"({"kind":"maxpool"},{"kind":"avgpool"},{"kind":"batchnorm"},{"kind":"fc","units":64},)"
          R"({"kind":"dropout","rate":0.5}]})");
}

TEST_CASE("round trip") {
    Rng rng = substream(21, {});
    const SpaceConfig pso = SpaceConfig::pso_default();
    const aco::AcoConfig aco_config;
    for (int i = 0; i < 2000; ++i) {
        const Architecture a = i % 2 ? materialize(sample_random(pso, rng), pso) : aco::random_architecture(aco_config, rng);
        const std::string doc = serialize(a);
        const Architecture back = deserialize(doc);
        CHECK(back == a);
        CHECK(serialize(back) == doc);
    }
}

TEST_CASE("equal architectures give identical bytes") {
    Architecture a;
    a.layers = {LayerSpec::conv(16, 5), LayerSpec::fc(10)};
    Architecture b;
    b.layers.push_back(LayerSpec::conv(16, 5));
    b.layers.push_back(LayerSpec::fc(10));
    CHECK(serialize(a) == serialize(b));
}

TEST_CASE("whitespace and key order on input do not matter") {
    const Architecture a = deserialize(
        "{ \"layers\": [ {\"kernel\": 3, \"kind\": \"conv\", \"out_channels\": 8} ],\n"
        "  \"num_classes\": 10, \"input_shape\": [28, 28, 1] }");
    CHECK(serialize(a) ==
          R"({"input_shape":[28,28,1],"num_classes":10,"layers":[{"kind":"conv","out_channels":8,"kernel":3}]})");
}

TEST_CASE("schema errors") {
    CHECK_THROWS_AS(deserialize("{}"), SchemaError);
    CHECK_THROWS_AS(deserialize(R"({"input_shape":[28,28,1],"num_classes":10,"layers":[{"kind":"residual"}]})"),
                    SchemaError);
    CHECK_THROWS_AS(deserialize(R"({"input_shape":[28,28],"num_classes":10,"layers":[]})"), SchemaError);
    CHECK_THROWS_AS(deserialize(R"({"input_shape":[28,28,1],"num_classes":10,"layers":[],"extra":1})"), SchemaError);
    CHECK_THROWS_AS(deserialize(R"({"input_shape":[28,28,1],"num_classes":10,"layers":[{"kind":"conv","kernel":3}]})"),
                    SchemaError);
    CHECK_THROWS_AS(
        deserialize(R"({"input_shape":[28,28,1],"num_classes":10,"layers":[{"kind":"maxpool","units":3}]})"),
        SchemaError);
    CHECK_THROWS_AS(deserialize(R"({"input_shape":[28,28,1],"num_classes":"ten","layers":[]})"), SchemaError);
    CHECK_THROWS_AS(deserialize("[]"), SchemaError);
}

TEST_CASE("parse errors carry a position") {
    const std::string text = R"({"input_shape":[28,28,1],"num_classes":10 "layers":[]})";
    try {
        deserialize(text);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() > 0);
        CHECK(e.position() <= text.size());
    }
    CHECK_THROWS_AS(deserialize(""), ParseError);
    CHECK_THROWS_AS(deserialize("{\"input_shape\":"), ParseError);
}
