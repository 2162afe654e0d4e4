#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include "fattack/synthdata/dataset_io.hpp"
#include "fattack/synthdata/pnm.hpp"
#include "fattack/synthdata/scene.hpp"
#include "support.hpp"

using namespace fattack;
using namespace fattack::synthdata;

namespace {

const Dataset& corpus() {
  static const Dataset ds = generate(1, 500, DetectorConfig{});
  return ds;
}

Box centered(double cx, double cy, double side) { return Box{cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2}; }

std::size_t one_row(const GridLabel& g) {
  const auto cls = g.classes();
  std::size_t row = cls.size();
  for (std::size_t a = 0; a < cls.size(); ++a) {
    if (cls[a] != 0) {
      EXPECT_EQ(row, cls.size()) << "more than one object row";
      row = a;
    }
  }
  return row;
}

}  // namespace

// ---------------------------------------------------------------- generation

TEST(Generate, SameSeedSameImages) {
  const auto a = generate(3, 6, DetectorConfig{});
  const auto b = generate(3, 6, DetectorConfig{});
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(a.samples[i].image, b.samples[i].image);
    EXPECT_EQ(a.samples[i].annotation, b.samples[i].annotation);
  }
  const auto c = generate(4, 6, DetectorConfig{});
  EXPECT_NE(a.samples[0].image, c.samples[0].image);
}

TEST(Generate, PrefixStable) {
  // Image i depends only on (seed, i), not on the dataset size.
  const auto small = generate(3, 3, DetectorConfig{});
  EXPECT_EQ(small.samples[2].image, generate(3, 8, DetectorConfig{}).samples[2].image);
}

TEST(Generate, ImagesAreByteValued) {
  for (std::size_t i = 0; i < 5; ++i) {
    for (double v : corpus().samples[i].image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_EQ(std::round(v * 255.0) / 255.0, v);
    }
  }
}

TEST(Generate, SomeImagesHaveNoObjects) {
  std::size_t empty = 0;
  for (const auto& s : corpus().samples) {
    if (s.annotation.boxes.empty()) {
      ++empty;
      for (auto c : s.label.classes()) EXPECT_EQ(c, 0u);
    }
  }
  EXPECT_GT(empty, 0u);
}

TEST(Generate, ClassesBalanced) {
  std::map<std::uint32_t, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : corpus().samples) {
    for (const auto& b : s.annotation.boxes) {
      ++counts[b.class_id];
      ++total;
    }
  }
  ASSERT_EQ(counts.size(), 4u);
  const double mean = static_cast<double>(total) / 4.0;
  for (const auto& [cls, n] : counts) {
    EXPECT_GE(n, 50u) << "class " << cls;
    EXPECT_LE(std::abs(static_cast<double>(n) - mean), 0.2 * mean) << "class " << cls;
  }
}

TEST(Generate, BoxesInsideImageAndNearAnchorSize) {
  const DetectorConfig cfg;
  const double side = cfg.anchor_side(0);
  for (const auto& s : corpus().samples) {
    EXPECT_LE(s.annotation.boxes.size(), kMaxObjects);
    for (const auto& b : s.annotation.boxes) {
      EXPECT_GE(b.box.x_min, 0.0);
      EXPECT_GE(b.box.y_min, 0.0);
      EXPECT_LE(b.box.x_max, 64.0);
      EXPECT_LE(b.box.y_max, 64.0);
      EXPECT_GE(b.box.width(), 0.5 * side);
      EXPECT_LE(b.box.width(), 1.5 * side);
    }
  }
}

TEST(Generate, EveryObjectOwnsOneAnchor) {
  for (const auto& s : corpus().samples) {
    std::size_t rows = 0;
    for (auto c : s.label.classes()) rows += c != 0;
    EXPECT_EQ(rows, s.annotation.boxes.size()) << s.name;
  }
}

TEST(Generate, ManyClassesUsePalette) {
  DetectorConfig cfg;
  cfg.num_classes = 21;
  const auto ds = generate(2, 40, cfg);
  std::size_t max_cls = 0;
  for (const auto& s : ds.samples) {
    for (const auto& b : s.annotation.boxes) max_cls = std::max<std::size_t>(max_cls, b.class_id);
  }
  EXPECT_GT(max_cls, 4u);
  cfg.num_classes = max_supported_classes() + 1;
  EXPECT_THROW(generate(2, 1, cfg), ConfigError);
}

TEST(Generate, ZeroImagesRejected) { EXPECT_THROW(generate(1, 0, DetectorConfig{}), UsageError); }

// ---------------------------------------------------------------- labels

TEST(GridLabel, CenterCellPicksRow) {
  const DetectorConfig cfg;
  Annotation ann{{ObjectBox{2, centered(28, 20, 12)}}};  // cell x = 3, y = 2
  const auto g = annotation_to_grid(ann, cfg);
  EXPECT_EQ(one_row(g), 19u);
  EXPECT_EQ(g.classes()[19], 2u);
  EXPECT_EQ(g.one_hot.at(19, 2), 1.0);
  EXPECT_EQ(g.one_hot.at(19, 0), 0.0);
}

TEST(GridLabel, EmptyAnnotationIsAllBackground) {
  const DetectorConfig cfg;
  const auto g = annotation_to_grid(Annotation{}, cfg);
  for (std::size_t a = 0; a < 64; ++a) EXPECT_EQ(g.one_hot.at(a, 0), 1.0);
}

TEST(GridLabel, LargerObjectWinsSharedAnchor) {
  const DetectorConfig cfg;
  Annotation ann{{ObjectBox{1, centered(28, 20, 10)}, ObjectBox{3, centered(29, 21, 20)}}};
  EXPECT_EQ(annotation_to_grid(ann, cfg).classes()[19], 3u);
  std::swap(ann.boxes[0], ann.boxes[1]);
  EXPECT_EQ(annotation_to_grid(ann, cfg).classes()[19], 3u);
}

TEST(GridLabel, RejectsBadClassOrBox) {
  const DetectorConfig cfg;
  EXPECT_THROW(annotation_to_grid(Annotation{{ObjectBox{0, centered(20, 20, 10)}}}, cfg), ConfigError);
  EXPECT_THROW(annotation_to_grid(Annotation{{ObjectBox{5, centered(20, 20, 10)}}}, cfg), ConfigError);
  EXPECT_THROW(annotation_to_grid(Annotation{{ObjectBox{1, Box{5, 5, 5, 9}}}}, cfg), ConfigError);
}

// ---------------------------------------------------------------- pnm

TEST(Pnm, BlackAndWhiteBytes) {
  const std::string black = encode_ppm(Tensor(Shape{3, 2, 2}, 0.0));
  EXPECT_EQ(black, std::string("P6\n2 2\n255\n") + std::string(12, '\0'));
  const std::string white = encode_ppm(Tensor(Shape{3, 1, 1}, 1.0));
  EXPECT_EQ(white.substr(white.size() - 3), std::string(3, '\xff'));
}

TEST(Pnm, RoundTripOfQuantizedImage) {
  testkit::Gen g(1);
  const Tensor img = quantize(testkit::random_tensor(g, Shape{3, 5, 7}, 0.0, 1.0));
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  const auto dir = testkit::scratch_dir("pnm");
  write_image(dir / "a.ppm", img);
  EXPECT_EQ(read_image(dir / "a.ppm", 5, 7), img);
  EXPECT_THROW(read_image(dir / "a.ppm", 7, 5), FormatError);
}

TEST(Pnm, QuantizeClampsAndRounds) {
  const Tensor q = quantize(Tensor(Shape{3}, std::vector<double>{-0.5, 1.5, 0.5}));
  EXPECT_EQ(q[0], 0.0);
  EXPECT_EQ(q[1], 1.0);
  EXPECT_EQ(q[2], 128.0 / 255.0);
}

TEST(Pnm, MalformedInputs) {
  EXPECT_THROW(decode_ppm("P5\n1 1\n255\n\0"), FormatError);
  EXPECT_THROW(decode_ppm("P6\n1 1\n65535\n" + std::string(6, 'a')), FormatError);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\n" + std::string(5, 'a')), FormatError);
  EXPECT_THROW(decode_ppm("P6\n0 2\n255\n"), FormatError);
  EXPECT_THROW(decode_ppm("P6\nx"), FormatError);
  EXPECT_NO_THROW(decode_ppm("P6 # comment\n1 1\n255\nabc"));
  EXPECT_THROW(encode_ppm(Tensor(Shape{1, 2, 2})), DimensionError);
}

// ---------------------------------------------------------------- dataset io

TEST(Annotations, FormatParseRoundTrip) {
  std::vector<std::pair<std::string, Annotation>> recs{
      {"a.ppm", Annotation{{ObjectBox{1, Box{0.5, 1, 12.25, 13}}, ObjectBox{4, Box{20, 20, 31, 31}}}}},
      {"b.ppm", Annotation{}},
      {"c.ppm", Annotation{{ObjectBox{2, Box{1.0 / 3.0, 2, 3, 4}}}}}};
  EXPECT_EQ(parse_annotations(format_annotations(recs)), recs);
}

TEST(Annotations, MalformedLines) {
  EXPECT_THROW(parse_annotations("a.ppm\n1,2,3\n"), FormatError);
  EXPECT_THROW(parse_annotations("a.ppm\n1,2,3,1,4\n"), FormatError);
  EXPECT_THROW(parse_annotations("a.ppm\nx,2,3,5,6\n"), FormatError);
}

TEST(DatasetIo, WriteReadRoundTrip) {
  const auto cfg = testkit::small_config();
  const auto ds = generate(5, 7, cfg);
  const auto dir = testkit::scratch_dir("dataset");
  write_dataset(ds, dir / "d");
  const auto back = read_dataset(dir / "d");
  EXPECT_EQ(back.seed, 5u);
  // Geometry is stored; backbone widths are not part of the dataset.
  EXPECT_EQ(back.config.input_size, cfg.input_size);
  EXPECT_EQ(back.config.grid, cfg.grid);
  EXPECT_EQ(back.config.num_classes, cfg.num_classes);
  EXPECT_EQ(back.config.anchor_scales, cfg.anchor_scales);
  ASSERT_EQ(back.size(), 7u);
  for (std::size_t i = 0; i < 7; ++i) {
    EXPECT_EQ(back.samples[i].name, ds.samples[i].name);
    EXPECT_EQ(back.samples[i].image, ds.samples[i].image);
    EXPECT_EQ(back.samples[i].annotation, ds.samples[i].annotation);
    EXPECT_EQ(back.samples[i].label.one_hot, ds.samples[i].label.one_hot);
  }
}

TEST(DatasetIo, RefusesNonEmptyDirectoryWithoutForce) {
  const auto ds = generate(5, 2, testkit::small_config());
  const auto dir = testkit::scratch_dir("dataset_force");
  std::ofstream(dir / "junk.txt") << "x";
  EXPECT_THROW(write_dataset(ds, dir), UsageError);
  EXPECT_NO_THROW(write_dataset(ds, dir, true));
  EXPECT_EQ(read_dataset(dir).size(), 2u);
}

TEST(DatasetIo, MissingOrCorruptManifest) {
  const auto dir = testkit::scratch_dir("dataset_bad");
  EXPECT_THROW(read_dataset(dir), UsageError);
  std::ofstream(dir / kManifestName) << "something else\n";
  EXPECT_THROW(read_dataset(dir), FormatError);
}
