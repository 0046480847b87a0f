// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "memsave/builtins.hpp"
#include "memsave/network.hpp"
#include "support/corpus.hpp"

namespace memsave {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no memsave::Error thrown";
  return ErrorCode::Io;
}

NetworkDescription conv_relu_chain(int pairs) {
  NetworkDescription net;
  net.name = "conv_relu";
  net.input_shape = Shape{2, 4, 8, 8};
  for (int i = 0; i < pairs; ++i) {
    LayerSpec c;
    c.kind = LayerKind::Conv2d;
    c.out = 4;
    c.padding = 1;
    net.layers.push_back(c);
    LayerSpec r;
    r.kind = LayerKind::ReLU;
    net.layers.push_back(r);
  }
  return net;
}

TEST(LayerKinds, NamesRoundTrip) {
  for (LayerKind k : all_layer_kinds()) EXPECT_EQ(parse_layer_kind(layer_kind_name(k)), k);
  EXPECT_EQ(code_of([] { (void)parse_layer_kind("gelu"); }), ErrorCode::UnknownLayerKind);
  EXPECT_TRUE(has_parameters(LayerKind::BatchNorm2d));
  EXPECT_FALSE(has_parameters(LayerKind::ReLU));
  EXPECT_TRUE(is_normalization(LayerKind::LayerNorm));
  EXPECT_FALSE(is_normalization(LayerKind::Conv2d));
}

TEST(Json, RoundTripPreservesDescription) {
  for (const auto& net : oracle::corpus_networks(oracle::CorpusScale::Tiny)) {
    const std::string text = network_to_json(net);
    EXPECT_EQ(network_to_json(network_from_json(text)), text) << net.name;
  }
}

TEST(Json, DataFilesLoad) {
  const auto net = load_network(oracle::test_data_dir() / "mixed_residual_cnn.json");
  EXPECT_EQ(net.name, "mixed_residual_cnn");
  EXPECT_EQ(net.input_shape, (Shape{2, 3, 8, 8}));
  ASSERT_EQ(net.layers.size(), 11u);
  EXPECT_EQ(net.layers[1].bn_mode, BatchNormMode::Eval);
  EXPECT_EQ(net.layers[3].pool_stride, 2);
  EXPECT_EQ(net.layers[8].inputs, (std::vector<int>{2, 7}));
  EXPECT_EQ(net.layers[9].weight_requires_grad, std::optional<bool>(false));
  EXPECT_EQ(policy_summary(net), "mixed");
}

TEST(Json, ErrorsAreTyped) {
  EXPECT_EQ(code_of([] { (void)network_from_json("{not json"); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { (void)network_from_json(R"({"input_shape": [2], "layers": [{"kind": "swish"}]})"); }),
            ErrorCode::UnknownLayerKind);
  EXPECT_EQ(code_of([] { (void)load_network("/nonexistent/net.json"); }), ErrorCode::Io);
}

TEST(Json, SaveAndLoad) {
  const auto path = std::filesystem::temp_directory_path() / "memsave_network_test.json";
  const auto net = builtins::attention_block();
  save_network(net, path);
  EXPECT_EQ(network_to_json(load_network(path)), network_to_json(net));
  std::filesystem::remove(path);
}

TEST(Shapes, BuiltinsPropagate) {
  const auto s = propagate_shapes(builtins::bottleneck_chain(2, 4, 3, 2, 8));
  EXPECT_EQ(s.outputs.back(), (Shape{2, 4, 8, 8}));
  const auto a = propagate_shapes(builtins::attention_block(16, 8, 2));
  EXPECT_EQ(a.outputs.back(), (Shape{2, 8, 16}));
  const auto d = propagate_shapes(builtins::deep_cnn(3));
  for (const auto& o : d.outputs) EXPECT_EQ(o.numel() * 4, 131072u);
  EXPECT_EQ(d.parameters[0].weight, (Shape{8, 8, 3, 3}));
  EXPECT_FALSE(d.parameters[0].bias.has_value());
}

TEST(Shapes, DataNetPropagates) {
  const auto s = propagate_shapes(load_network(oracle::test_data_dir() / "mixed_residual_cnn.json"));
  EXPECT_EQ(s.outputs[3], (Shape{2, 4, 4, 4}));
  EXPECT_EQ(s.outputs[6], (Shape{2, 4, 8, 8}));
  EXPECT_EQ(s.parameters[6].weight, (Shape{4, 4, 2, 2}));
  EXPECT_EQ(s.outputs.back(), (Shape{2, 3, 8, 8}));
}

TEST(Shapes, ErrorsNameTheLayer) {
  auto net = builtins::deep_cnn(2);
  net.layers[1].inputs = {1};  // refers to itself
  EXPECT_EQ(code_of([&] { (void)propagate_shapes(net); }), ErrorCode::ShapePropagation);

  auto bad = builtins::mlp(2, 8, 4);
  LayerSpec add;
  add.kind = LayerKind::Add;
  add.inputs = {-1, 0};
  bad.layers.push_back(add);
  bad.layers[0].out = 5;
  try {
    (void)propagate_shapes(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapePropagation);
    EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos);
  }
  NetworkDescription empty;
  EXPECT_EQ(code_of([&] { (void)propagate_shapes(empty); }), ErrorCode::ShapePropagation);
}

TEST(Convert, FilterSwapsOnlyNamedKinds) {
  const auto net = convert_network(conv_relu_chain(3), Policy::MemSave, std::set{LayerKind::Conv2d});
  for (const auto& l : net.layers) {
    EXPECT_EQ(l.policy, l.kind == LayerKind::Conv2d ? Policy::MemSave : Policy::Naive);
  }
  EXPECT_EQ(policy_summary(net), "mixed");
}

TEST(Convert, AllAndIdempotent) {
  const auto once = convert_network(conv_relu_chain(2), Policy::MemSave);
  for (const auto& l : once.layers) EXPECT_EQ(l.policy, Policy::MemSave);
  EXPECT_EQ(network_to_json(convert_network(once, Policy::MemSave)), network_to_json(once));
  EXPECT_EQ(policy_summary(once), "memsave");
  EXPECT_EQ(policy_summary(convert_network(once, Policy::Naive)), "naive");
}

TEST(Convert, RejectsKindsWithoutVariant) {
  EXPECT_EQ(code_of([] { (void)convert_network(conv_relu_chain(1), Policy::MemSave, std::set{LayerKind::Softmax}); }),
            ErrorCode::UnknownLayerKind);
}

TEST(ScenarioNames, ParseRoundTrip) {
  for (const char* s : {"all", "input", "norm", "surgical", "none", "everything", "from:3", "only:4"}) {
    EXPECT_EQ(Scenario::parse(s).name(), s);
  }
  for (const char* s : {"", "All", "only:0", "from:x", "only:2x"}) {
    EXPECT_EQ(code_of([&] { (void)Scenario::parse(s); }), ErrorCode::InvalidConfig) << s;
  }
}

std::vector<bool> weights(const NetworkDescription& net, const Scenario& s) { return resolve_flags(net, s).weight; }

TEST(Flags, AllAndInput) {
  const auto net = builtins::deep_cnn(3);
  EXPECT_FALSE(resolve_flags(net, Scenario::all()).input);
  EXPECT_EQ(weights(net, Scenario::all()), (std::vector<bool>{true, true, true}));
  EXPECT_TRUE(resolve_flags(net, Scenario::input()).input);
  EXPECT_EQ(weights(net, Scenario::input()), (std::vector<bool>{false, false, false}));
  EXPECT_TRUE(resolve_flags(net, Scenario::everything()).input);
  EXPECT_EQ(weights(net, Scenario::none()), (std::vector<bool>{false, false, false}));
}

TEST(Flags, NormSelectsNormalizationLayers) {
  const auto net = builtins::bottleneck_chain(1);
  const auto f = resolve_flags(net, Scenario::norm());
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    EXPECT_EQ(f.weight[i], is_normalization(net.layers[i].kind)) << i;
    EXPECT_EQ(f.bias[i], f.weight[i]);
  }
  EXPECT_FALSE(f.input);
}

// Parameterized layers are counted; ceil(P / 4) of them are differentiable.
TEST(Flags, SurgicalTakesFirstQuarterOfParameterizedLayers) {
  for (int depth : {1, 4, 5, 8, 9}) {
    const auto f = weights(builtins::deep_cnn(depth), Scenario::surgical());
    const int expected = (depth + 3) / 4;
    for (int i = 0; i < depth; ++i) EXPECT_EQ(f[i], i < expected) << depth << " " << i;
  }
  // MLP(3): fc1 relu1 fc2 relu2 fc3 -> P = 3, one differentiable.
  const auto f = weights(builtins::mlp(3), Scenario::surgical());
  EXPECT_EQ(f, (std::vector<bool>{true, false, false, false, false}));
}

TEST(Flags, FromAndOnlyCountParameterizedLayers) {
  const auto net = builtins::deep_cnn(6);
  EXPECT_EQ(weights(net, Scenario::from(4)), (std::vector<bool>{false, false, false, true, true, true}));
  EXPECT_EQ(weights(net, Scenario::only(4)), (std::vector<bool>{false, false, false, true, false, false}));
}

TEST(Flags, OverridesApplyAfterScenario) {
  auto net = load_network(oracle::test_data_dir() / "layernorm_mlp.json");
  const auto f = resolve_flags(net, Scenario::input());
  EXPECT_TRUE(f.input);
  EXPECT_TRUE(f.weight[4]);
  EXPECT_FALSE(f.bias[4]);
  EXPECT_FALSE(f.weight[0]);
  net.input_requires_grad = false;
  EXPECT_FALSE(resolve_flags(net, Scenario::input()).input);
}

}  // namespace
}  // namespace memsave
