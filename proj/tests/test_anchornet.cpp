#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fattack/anchornet/decode.hpp"
#include "fattack/anchornet/model.hpp"
#include "fattack/anchornet/sparsity.hpp"
#include "fattack/anchornet/train.hpp"
#include "fattack/anchornet/weights_io.hpp"
#include "fattack/synthdata/scene.hpp"
#include "support.hpp"

using namespace fattack;
using namespace fattack::anchornet;
using fattack::testkit::Gen;

namespace {

FeatureMap background_map(const DetectorConfig& cfg) {
  Tensor t(Shape{cfg.num_anchors(), cfg.num_classes}, 0.0);
  for (std::size_t a = 0; a < cfg.num_anchors(); ++a) t.at(a, 0) = 1.0;
  return FeatureMap{t};
}

void set_row(FeatureMap& m, std::size_t a, std::size_t cls, double p) {
  const std::size_t C = m.classes();
  for (std::size_t c = 0; c < C; ++c) m.values.at(a, c) = (1.0 - p) / static_cast<double>(C - 1);
  m.values.at(a, cls) = p;
}

}  // namespace

// ---------------------------------------------------------------- config

TEST(DetectorConfig, DefaultIsValid) {
  const DetectorConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.num_anchors(), 64u);
  EXPECT_EQ(c.cell_size(), 8.0);
}

TEST(DetectorConfig, RejectsInconsistentGeometry) {
  DetectorConfig c;
  c.grid = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.widths = {8, 16};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.anchors_per_cell = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c.anchor_scales = {1.0, -1.0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(DetectorConfig, AnchorBoxCenteredAndClipped) {
  const DetectorConfig c;
  const Box inner = c.anchor_box(9);  // cell (1, 1)
  EXPECT_EQ(inner, (Box{6, 6, 18, 18}));
  const Box corner = c.anchor_box(0);
  EXPECT_EQ(corner, (Box{0, 0, 10, 10}));
}

// ---------------------------------------------------------------- forward

TEST(Forward, OutputIsRowStochastic) {
  Gen g(1);
  const DetectorConfig cfg;
  const auto model = DetectorModel::initialize(cfg, 1);
  const auto map = forward(model, testkit::random_image(g, cfg));
  ASSERT_EQ(map.values.shape(), (Shape{64, 5}));
  for (std::size_t a = 0; a < 64; ++a) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_GT(map.at(a, c), 0.0);
      EXPECT_LT(map.at(a, c), 1.0);
      s += map.at(a, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, ZeroWeightsGiveUniformOutput) {
  Gen g(2);
  const DetectorConfig cfg;
  const auto map = forward(DetectorModel::zeros(cfg), testkit::random_image(g, cfg));
  for (double v : map.values.data()) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Forward, DeterministicAndContinuous) {
  Gen g(3);
  const auto cfg = testkit::small_config();
  const auto model = DetectorModel::initialize(cfg, 2);
  const Tensor img = testkit::random_image(g, cfg);
  EXPECT_EQ(forward(model, img).values, forward(model, img).values);
  Tensor nudged = img;
  nudged[17] += 1e-9;
  const auto a = forward(model, img).values, b = forward(model, nudged).values;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Forward, RejectsWrongImageShape) {
  const auto model = DetectorModel::initialize(DetectorConfig{}, 1);
  EXPECT_THROW(forward(model, Tensor(Shape{3, 32, 32})), DimensionError);
  EXPECT_THROW(forward(model, Tensor(Shape{1, 64, 64})), DimensionError);
}

TEST(Forward, InitializationDependsOnSeed) {
  const DetectorConfig cfg;
  EXPECT_TRUE(DetectorModel::initialize(cfg, 4).same_weights(DetectorModel::initialize(cfg, 4)));
  EXPECT_FALSE(DetectorModel::initialize(cfg, 4).same_weights(DetectorModel::initialize(cfg, 5)));
}

TEST(Model, ParameterValidation) {
  const DetectorConfig cfg;
  auto params = DetectorModel::initialize(cfg, 1).parameters();
  params[0].name = "bogus";
  EXPECT_THROW(DetectorModel(cfg, params), FormatError);
  params = DetectorModel::initialize(cfg, 1).parameters();
  params.pop_back();
  EXPECT_THROW(DetectorModel(cfg, params), FormatError);
  EXPECT_THROW(DetectorModel::initialize(cfg, 1).parameter("nope"), UsageError);
}

// ---------------------------------------------------------------- decode

TEST(Decode, AllBackgroundGivesNothing) {
  const DetectorConfig cfg;
  EXPECT_TRUE(decode(background_map(cfg), cfg).empty());
}

TEST(Decode, OneConfidentAnchor) {
  const DetectorConfig cfg;
  auto map = background_map(cfg);
  set_row(map, 9, 3, 0.9);
  const auto dets = decode(map, cfg);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].class_id, 3u);
  EXPECT_EQ(dets[0].anchor_index, 9u);
  EXPECT_EQ(dets[0].score, 0.9);
  EXPECT_EQ(dets[0].box, cfg.anchor_box(9));
}

TEST(Decode, ConfidenceBoundIsStrict) {
  const DetectorConfig cfg;
  auto map = background_map(cfg);
  set_row(map, 9, 2, 0.5);
  EXPECT_TRUE(decode(map, cfg).empty());
}

TEST(Decode, AdjacentSameClassSuppressedAtLowIou) {
  const DetectorConfig cfg;
  auto map = background_map(cfg);
  set_row(map, 9, 2, 0.9);
  set_row(map, 10, 2, 0.8);
  // Neighbouring anchors overlap with IoU 0.2.
  EXPECT_NEAR(iou(cfg.anchor_box(9), cfg.anchor_box(10)), 0.2, 1e-15);
  EXPECT_EQ(decode(map, cfg).size(), 2u);
  const auto dets = decode(map, cfg, DecodeParams{0.5, 0.1});
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].anchor_index, 9u);
}

TEST(Decode, DifferentClassesNotSuppressed) {
  const DetectorConfig cfg;
  auto map = background_map(cfg);
  set_row(map, 9, 2, 0.9);
  set_row(map, 10, 3, 0.8);
  EXPECT_EQ(decode(map, cfg, DecodeParams{0.5, 0.1}).size(), 2u);
}

TEST(Decode, ParameterAndShapeErrors) {
  const DetectorConfig cfg;
  EXPECT_THROW(decode(background_map(cfg), cfg, DecodeParams{0.0, 0.5}), ConfigError);
  EXPECT_THROW(decode(background_map(cfg), cfg, DecodeParams{0.5, 0.0}), ConfigError);
  EXPECT_THROW(decode(FeatureMap{Tensor(Shape{16, 5}, 0.2)}, cfg), DimensionError);
}

TEST(Nms, IsIdempotent) {
  Gen g(4);
  const DetectorConfig cfg;
  std::vector<Detection> dets;
  for (std::uint32_t a = 0; a < 64; ++a) {
    if (g() % 2) dets.push_back({cfg.anchor_box(a), static_cast<std::uint32_t>(1 + g() % 4), (g() % 1000) / 1000.0, a});
  }
  for (double t : {0.1, 0.3, 0.5}) {
    const auto once = nms(dets, t);
    EXPECT_EQ(nms(once, t), once);
    for (std::size_t i = 0; i < once.size(); ++i) {
      for (std::size_t j = i + 1; j < once.size(); ++j) {
        if (once[i].class_id == once[j].class_id) EXPECT_LE(iou(once[i].box, once[j].box), t);
      }
    }
  }
}

// ---------------------------------------------------------------- train

namespace {

const synthdata::Dataset& tiny_dataset() {
  static const synthdata::Dataset ds = synthdata::generate(11, 12, testkit::small_config());
  return ds;
}

}  // namespace

TEST(Train, ZeroLearningRateLeavesWeightsUnchanged) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  const auto r = train(init, tiny_dataset(), TrainOptions{2, 0.0, 4, 1});
  EXPECT_TRUE(r.model.same_weights(init));
  ASSERT_EQ(r.loss_trace.size(), 2u);
  // Only the visiting order differs between epochs.
  EXPECT_NEAR(r.loss_trace[0], r.loss_trace[1], 1e-12);
  EXPECT_NEAR(r.loss_trace[0], mean_loss(init, tiny_dataset()), 1e-12);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  const TrainOptions opt{3, 0.5, 4, 7};
  const auto a = train(init, tiny_dataset(), opt);
  const auto b = train(init, tiny_dataset(), opt);
  EXPECT_TRUE(a.model.same_weights(b.model));
  EXPECT_EQ(a.loss_trace, b.loss_trace);
  EXPECT_FALSE(a.model.same_weights(init));
}

TEST(Train, LossDecreasesOnTinySet) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  const auto r = train(init, tiny_dataset(), TrainOptions{8, 0.5, 4, 1});
  EXPECT_LT(mean_loss(r.model, tiny_dataset()), mean_loss(init, tiny_dataset()));
}

TEST(Train, EpochCallbackSeesEveryEpoch) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  std::vector<int> seen;
  train(init, tiny_dataset(), TrainOptions{3, 0.1, 4, 1}, [&](int e, double, const DetectorModel&) { seen.push_back(e); });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
}

TEST(Train, DivergenceRaisesTrainingError) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  EXPECT_THROW(train(init, tiny_dataset(), TrainOptions{3, 1e100, 4, 1}), TrainingError);
}

TEST(Train, OptionErrors) {
  const auto init = DetectorModel::initialize(testkit::small_config(), 3);
  EXPECT_THROW(train(init, tiny_dataset(), TrainOptions{1, 0.5, 0, 1}), ConfigError);
  EXPECT_THROW(train(init, tiny_dataset(), TrainOptions{-1, 0.5, 4, 1}), ConfigError);
  EXPECT_THROW(train(init, tiny_dataset(), TrainOptions{1, -0.5, 4, 1}), ConfigError);
  synthdata::Dataset empty = tiny_dataset();
  empty.samples.clear();
  EXPECT_THROW(train(init, empty, TrainOptions{}), UsageError);
  const auto other = DetectorModel::initialize(testkit::small_config(7), 3);
  EXPECT_THROW(train(other, tiny_dataset(), TrainOptions{}), ConfigError);
}

// ---------------------------------------------------------------- weights io

TEST(WeightsIo, RoundTripIsExact) {
  const auto cfg = testkit::small_config();
  const auto model = DetectorModel::initialize(cfg, 9);
  EXPECT_TRUE(decode_weights(cfg, encode_weights(model)).same_weights(model));
  const auto dir = testkit::scratch_dir("weights");
  save_weights(model, dir / "m.faw");
  EXPECT_TRUE(load_weights(cfg, dir / "m.faw").same_weights(model));
}

TEST(WeightsIo, Truncated) {
  const auto cfg = testkit::small_config();
  const std::string bytes = encode_weights(DetectorModel::initialize(cfg, 9));
  EXPECT_THROW(decode_weights(cfg, bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_weights(cfg, bytes.substr(0, 10)), FormatError);
  EXPECT_THROW(decode_weights(cfg, bytes + "x"), FormatError);
}

TEST(WeightsIo, BadMagic) {
  const auto cfg = testkit::small_config();
  std::string bytes = encode_weights(DetectorModel::initialize(cfg, 9));
  bytes[3] = '2';
  EXPECT_THROW(decode_weights(cfg, bytes), FormatError);
}

TEST(WeightsIo, UnknownTensorName) {
  const auto cfg = testkit::small_config();
  std::string bytes = encode_weights(DetectorModel::initialize(cfg, 9));
  const auto at = bytes.find("head.bias");
  ASSERT_NE(at, std::string::npos);
  bytes[at] = 'H';
  try {
    decode_weights(cfg, bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("Head.bias"), std::string::npos);
  }
}

TEST(WeightsIo, ShapeMismatchAgainstConfig) {
  const auto bytes = encode_weights(DetectorModel::initialize(testkit::small_config(5), 9));
  EXPECT_THROW(decode_weights(testkit::small_config(7), bytes), FormatError);
}

TEST(WeightsIo, MissingFileIsUsageError) {
  EXPECT_THROW(load_weights(testkit::small_config(), "/nonexistent/m.faw"), UsageError);
}

// ---------------------------------------------------------------- sparsity

TEST(Sparsity, UniformMapsWithFewClassesAreDense) {
  const DetectorConfig cfg;
  const std::vector<FeatureMap> maps{FeatureMap{Tensor(Shape{64, 5}, 0.2)}};
  const std::vector<double> th{0.05};
  const auto s = sparsity_stats(maps, th);
  EXPECT_EQ(s.total, 64u * 4u);
  EXPECT_EQ(s.fraction_le[0], 0.0);
}

TEST(Sparsity, UniformMapsWithManyClassesAreSparse) {
  const std::vector<FeatureMap> maps{FeatureMap{Tensor(Shape{64, 21}, 1.0 / 21.0)}};
  const std::vector<double> th{0.05};
  EXPECT_EQ(sparsity_stats(maps, th).fraction_le[0], 1.0);
}

TEST(Sparsity, BackgroundColumnOptional) {
  const std::vector<FeatureMap> maps{FeatureMap{Tensor(Shape{4, 3}, std::vector<double>{1, 0, 0, 1, 0, 0, 1, 0, 0, 1, 0, 0})}};
  const std::vector<double> th{0.05};
  EXPECT_EQ(sparsity_stats(maps, th).fraction_le[0], 1.0);
  const auto with_bg = sparsity_stats(maps, th, 20, 0.0002, true);
  EXPECT_EQ(with_bg.total, 12u);
  EXPECT_NEAR(with_bg.fraction_le[0], 8.0 / 12.0, 1e-15);
}

TEST(Sparsity, FractionsMonotoneAndHistogramComplete) {
  Gen g(5);
  std::vector<FeatureMap> maps;
  for (int i = 0; i < 5; ++i) maps.push_back(FeatureMap{testkit::random_prob_map(g, 64, 5)});
  const std::vector<double> th{0.01, 0.05, 0.1, 0.2, 0.5, 1.0};
  const auto s = sparsity_stats(maps, th, 10, 0.01);
  for (std::size_t i = 1; i < th.size(); ++i) EXPECT_LE(s.fraction_le[i - 1], s.fraction_le[i]);
  EXPECT_EQ(s.fraction_le.back(), 1.0);
  EXPECT_EQ(s.histogram.total(), s.total);
  EXPECT_EQ(s.histogram.edges.size(), 11u);
  EXPECT_EQ(s.top.total(), static_cast<std::size_t>(std::ceil(0.01 * static_cast<double>(s.total))));
}

TEST(Sparsity, ArgumentErrors) {
  const std::vector<FeatureMap> maps{FeatureMap{Tensor(Shape{4, 5}, 0.2)}};
  const std::vector<double> unsorted{0.5, 0.1};
  EXPECT_THROW(sparsity_stats(maps, unsorted), ConfigError);
  const std::vector<double> th{0.1};
  EXPECT_THROW(sparsity_stats(maps, th, 0), ConfigError);
  EXPECT_THROW(sparsity_stats(maps, th, 20, 0.0), ConfigError);
}

TEST(Histogram, LastBinClosedOnRight) {
  const std::vector<double> v{0.0, 0.5, 1.0, 0.99};
  const auto h = make_histogram(v, 0.0, 1.0, 2);
  EXPECT_EQ(h.counts, (std::vector<std::size_t>{1, 3}));
}
