#include <gtest/gtest.h>

#include "fxrnn/graph.hpp"

using namespace fxrnn;

TEST(Graph, LstmParamCount) {
  EXPECT_EQ(lstm_param_count(128, 3), 67968);
  EXPECT_EQ(lstm_param_count(1, 0), 11);
  EXPECT_EQ(lstm_param_count(128, 64), 4 * 128 * 128 + 4 * 128 * 64 + 7 * 128);
  EXPECT_EQ(lstm_param_count(128, 64), 99200);
}

TEST(Graph, ImagePresetShapes) {
  const auto g = make_preset(kImagePreset);
  const auto out = g.output_shapes();
  const std::vector<Shape3> expected{{32, 28, 28}, {32, 28, 28}, {32, 14, 14}, {32, 10, 10}, {32, 10, 10},
                                     {32, 5, 5},   {64, 1, 1},   {64, 1, 1},   {64, 1, 1},   {128, 1, 1},
                                     {9, 1, 1},    {9, 1, 1}};
  EXPECT_EQ(out, expected);
  EXPECT_EQ(g.input_shape, (Shape3{3, 32, 32}));
  EXPECT_EQ(g.output_classes, 9);
}

TEST(Graph, ImagePresetGroups) {
  const auto g = make_preset(kImagePreset);
  std::vector<std::string> weights;
  std::size_t cnn = 0;
  for (const auto& w : g.weight_groups()) {
    weights.push_back(w.name);
    if (w.role == WeightRole::conv) cnn += w.count;
  }
  EXPECT_EQ(weights, (std::vector<std::string>{"In-C1", "S1-C2", "S2-C3", "S3-L1", "L1", "L1-Out"}));
  EXPECT_EQ(cnn, 79328u);
  EXPECT_EQ(g.weight_group("In-C1").count, 2432u);
  EXPECT_EQ(g.weight_group("L1-Out").count, 1161u);
  EXPECT_EQ(g.weight_group("S3-L1").count + g.weight_group("L1").count, 99200u);
  EXPECT_EQ(g.weight_count(), 179689u);

  std::vector<std::string> signals;
  for (const auto& s : g.signal_groups()) signals.push_back(s.name);
  EXPECT_EQ(signals, (std::vector<std::string>{"In", "C1", "S1", "C2", "S2", "C3", "S3", "L1"}));
  EXPECT_EQ(g.signal_group("In").kind, QuantKind::signal_bounded_unit);
  EXPECT_EQ(g.signal_group("C1").kind, QuantKind::signal_unbounded);
  EXPECT_EQ(g.signal_group("L1").kind, QuantKind::signal_bounded_sym);
}

TEST(Graph, AccelPreset) {
  const auto g = make_preset(kAccelPreset);
  EXPECT_EQ(g.weight_count(), 69000u);
  EXPECT_EQ(g.weight_group("In-L1").count + g.weight_group("L1").count, 67968u);
  EXPECT_EQ(g.weight_group("L1-Out").count, 1032u);
  EXPECT_EQ(g.signal_groups().size(), 2u);
  EXPECT_EQ(g.output_classes, 8);
  EXPECT_FALSE(is_image_graph(g));
  EXPECT_TRUE(is_image_graph(make_preset(kImagePreset)));
  for (int n : {32, 64, 256}) EXPECT_EQ(make_preset("smartwatch-lstm-" + std::to_string(n)).layers[0].units, n);
}

TEST(Graph, UnknownPresetAndGroup) {
  EXPECT_THROW(make_preset("resnet"), GraphError);
  EXPECT_THROW(make_preset("smartwatch-lstm-"), GraphError);
  EXPECT_THROW(make_preset(kAccelPreset).weight_group("C1"), GraphError);
}

TEST(Graph, ValidationRejectsBadGraphs) {
  auto g = make_accel_lstm(8);
  g.layers[1].weight_group = "L1";  // duplicate weight group
  EXPECT_THROW(g.validate(), GraphError);

  EXPECT_THROW(make_cnn_lstm({1, 6, 6}, 4, 3), GraphError);

  auto no_lstm = make_accel_lstm(8);
  no_lstm.layers.erase(no_lstm.layers.begin());
  EXPECT_THROW(no_lstm.validate(), GraphError);
}
