#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "signdet/io.hpp"
#include "signdet/labelfmt.hpp"

#include "../support/temp_dir.hpp"

using namespace signdet;
using namespace signdet::labelfmt;

namespace {

ErrorKind kind_of(std::string_view line, const ParseOptions &opt = {}) {
  try {
    parse_label_line(line, opt);
  } catch (const LabelError &e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error for '" << line << "'";
  return ErrorKind::FieldCount;
}

} // namespace

TEST(LabelLine, ParsesFields) {
  Annotation a = parse_label_line("3 0.5 0.5 0.25 0.25");
  EXPECT_EQ(a.class_id, 3);
  EXPECT_EQ(a.box, (NormBox{0.5, 0.5, 0.25, 0.25}));
}

TEST(LabelLine, FullImageBoxIsLegal) {
  Annotation a = parse_label_line("0 0.5 0.5 1.0 1.0");
  EXPECT_EQ(a.class_id, 0);
  EXPECT_EQ(a.box, (NormBox{0.5, 0.5, 1.0, 1.0}));
}

TEST(LabelLine, ToleratesTabsAndCarriageReturn) {
  Annotation a = parse_label_line("\t1  0.5\t0.5 0.2 0.2\r");
  EXPECT_EQ(a.class_id, 1);
  EXPECT_DOUBLE_EQ(a.box.w, 0.2);
}

TEST(LabelLine, DistinctErrorKinds) {
  EXPECT_EQ(kind_of("2 0.5 0.5 1.2 0.1"), ErrorKind::OutOfRange);
  EXPECT_EQ(kind_of("2 0.5 0.5 0.1"), ErrorKind::FieldCount);
  EXPECT_EQ(kind_of("2 0.5 0.5 0.1 0.1 0.3"), ErrorKind::FieldCount);
  EXPECT_EQ(kind_of("2 0.5 abc 0.1 0.1"), ErrorKind::NonNumeric);
  EXPECT_EQ(kind_of("-1 0.5 0.5 0.1 0.1"), ErrorKind::NegativeClassId);
  EXPECT_EQ(kind_of("1.5 0.5 0.5 0.1 0.1"), ErrorKind::NonIntegerClassId);
  EXPECT_EQ(kind_of("1 nan 0.5 0.1 0.1"), ErrorKind::OutOfRange);
  EXPECT_EQ(kind_of("1 0.5 0.5 0 0.1"), ErrorKind::OutOfRange);
}

TEST(LabelLine, ErrorNamesTheField) {
  try {
    parse_label_line("2 0.5 0.5 1.2 0.1");
    FAIL();
  } catch (const LabelError &e) {
    EXPECT_EQ(e.field(), "w");
  }
}

TEST(LabelLine, IntegralFloatClassIdAccepted) {
  EXPECT_EQ(parse_label_line("4.0 0.5 0.5 0.1 0.1").class_id, 4);
}

TEST(LabelLine, CornerOverflowRejectedInStrictMode) {
  // cx - w/2 = -0.1
  EXPECT_EQ(kind_of("0 0.1 0.5 0.4 0.2"), ErrorKind::OutOfRange);
  ParseOptions tolerant;
  tolerant.corner_tolerance = 0.2;
  EXPECT_NO_THROW(parse_label_line("0 0.1 0.5 0.4 0.2", tolerant));
}

TEST(LabelLine, LenientModeClampsSmallOverflow) {
  ParseOptions opt;
  opt.mode = ParseMode::Lenient;
  std::vector<std::string> warnings;
  // right edge at 1.0005
  Annotation a = parse_label_line("0 0.9005 0.5 0.2 0.2", opt, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NEAR(a.box.cx + a.box.w / 2, 1.0, 1e-12);
  EXPECT_NEAR(a.box.cx - a.box.w / 2, 0.8005, 1e-12);
  EXPECT_TRUE(check_box(a.box).empty());
}

TEST(LabelLine, LenientModeRejectsLargeOverflow) {
  ParseOptions opt;
  opt.mode = ParseMode::Lenient;
  EXPECT_EQ(kind_of("0 0.95 0.5 0.2 0.2", opt), ErrorKind::OutOfRange);
}

TEST(LabelFile, TwoLines) {
  auto anns = parse_label_file("0 0.5 0.5 0.2 0.2\n1 0.3 0.3 0.1 0.1\n");
  ASSERT_EQ(anns.size(), 2u);
  EXPECT_EQ(anns[1].class_id, 1);
}

TEST(LabelFile, EmptyIsNegativeSample) {
  EXPECT_TRUE(parse_label_file("").empty());
  EXPECT_TRUE(parse_label_file("\n\n  \n").empty());
}

TEST(LabelFile, ErrorCarriesLineNumber) {
  try {
    parse_label_file("0 0.5 0.5 0.2 0.2\n1 0.5 0.5\n");
    FAIL();
  } catch (const LabelError &e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.kind(), ErrorKind::FieldCount);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LabelFile, BlankLinesCountTowardLineNumbers) {
  try {
    parse_label_file("0 0.5 0.5 0.2 0.2\n\n7 x 0.5 0.2 0.2\n");
    FAIL();
  } catch (const LabelError &e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Emit, FixedSixDecimals) {
  std::vector<Annotation> a{{3, {0.5, 0.5, 0.25, 0.25}}};
  EXPECT_EQ(emit_label_file(a), "3 0.500000 0.500000 0.250000 0.250000\n");
  EXPECT_EQ(emit_label_file({}), "");
}

TEST(Emit, PreservesSixDecimalValue) {
  // The left edge sits at -0.026544, so the corner rule needs some slack.
  ParseOptions opt;
  opt.corner_tolerance = 0.03;
  EXPECT_THROW(parse_label_line("1 0.123456 0.2 0.3 0.4"), LabelError);
  auto a = parse_label_line("1 0.123456 0.2 0.3 0.4", opt);
  EXPECT_EQ(emit_label_line(a), "1 0.123456 0.200000 0.300000 0.400000\n");
  EXPECT_EQ(parse_label_line(emit_label_line(a), opt), a);
  EXPECT_EQ(parse_label_line(emit_label_line(a), opt).box.cx, 0.123456);
}

TEST(Emit, RejectsInvalidAnnotation) {
  std::vector<Annotation> bad{{0, {0.5, 0.5, 1.5, 0.2}}};
  EXPECT_THROW(emit_label_file(bad), LabelError);
  std::vector<Annotation> neg{{-1, {0.5, 0.5, 0.5, 0.2}}};
  EXPECT_THROW(emit_label_file(neg), LabelError);
}

// Values on the 1e-6 grid that satisfy the strict corner rule.
std::vector<Annotation> random_grid_list(std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> count(0, 12), cls(0, 11);
  std::uniform_int_distribution<long> micro(1, 1'000'000);
  std::vector<Annotation> out(static_cast<std::size_t>(count(rng)));
  for (auto &a : out) {
    a.class_id = cls(rng);
    long w = micro(rng), h = micro(rng);
    std::uniform_int_distribution<long> cx(w / 2 + w % 2, 1'000'000 - w / 2 - w % 2);
    std::uniform_int_distribution<long> cy(h / 2 + h % 2, 1'000'000 - h / 2 - h % 2);
    a.box = {cx(rng) / 1e6, cy(rng) / 1e6, w / 1e6, h / 1e6};
  }
  return out;
}

TEST(RoundTrip, RandomListsOnTheMicroGrid) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    auto list = random_grid_list(rng);
    std::string text = emit_label_file(list);
    ASSERT_EQ(parse_label_file(text), list) << text;
    ASSERT_EQ(emit_label_file(parse_label_file(text)), text);
  }
}

TEST(Predictions, ParseAndEmit) {
  auto d = parse_prediction_line("2 0.5 0.5 0.2 0.2 0.75");
  EXPECT_EQ(d.class_id, 2);
  EXPECT_DOUBLE_EQ(d.confidence, 0.75);
  EXPECT_THROW(parse_prediction_line("2 0.5 0.5 0.2 0.2 1.5"), LabelError);
  EXPECT_THROW(parse_prediction_line("2 0.5 0.5 0.2 0.2"), LabelError);
  std::vector<Detection> dets{d};
  EXPECT_EQ(parse_prediction_file(emit_prediction_file(dets)), dets);
}

TEST(ClassTableTest, DefaultHasTwelveInOrder) {
  auto t = default_class_table();
  ASSERT_EQ(t.size(), 12u);
  const char *names[] = {"illu",     "prema",    "dabbulu", "kadhu",  "okati",  "avunu",
                         "bagunna",  "kutumbam", "Namasthe", "sahayam", "enduku", "ekkada"};
  const char *glosses[] = {"Home", "Love", "Money", "No",   "One", "Yes",
                           "Fine", "Family", "Pray", "Help", "Why", "Where"};
  for (int i = 0; i < 12; ++i) {
    EXPECT_EQ(t.at(i).index, i);
    EXPECT_EQ(t.at(i).name, names[i]);
    EXPECT_EQ(t.at(i).gloss, glosses[i]);
  }
  EXPECT_FALSE(t.contains(12));
  EXPECT_THROW(t.at(12), std::out_of_range);
}

TEST(ClassTableTest, RejectsGapsAndDuplicates) {
  EXPECT_THROW(ClassTable({{0, "a", "a"}, {2, "b", "b"}}), std::invalid_argument);
  EXPECT_THROW(ClassTable::from_names({"a", "a"}), std::invalid_argument);
}

TEST(Descriptor, ParsesListNames) {
  auto d = parse_descriptor("train: images/train\nval: images/val\nnc: 2\nnames: ['a', 'b']\n");
  EXPECT_EQ(d.train_dir, "images/train");
  EXPECT_EQ(d.val_dir, "images/val");
  EXPECT_EQ(d.class_count, 2);
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"a", "b"}));
}

TEST(Descriptor, ParsesMapNames) {
  auto d = parse_descriptor("train: t\nval: v\nnc: 2\nnames:\n  0: x\n  1: y\n");
  EXPECT_EQ(d.class_names, (std::vector<std::string>{"x", "y"}));
}

TEST(Descriptor, CountMismatchRejected) {
  EXPECT_THROW(parse_descriptor("train: t\nval: v\nnc: 3\nnames: [a, b]\n"), std::invalid_argument);
  EXPECT_THROW(parse_descriptor("val: v\nnc: 1\nnames: [a]\n"), std::invalid_argument);
  EXPECT_THROW(parse_descriptor("[1, 2]"), std::invalid_argument);
}

TEST(Descriptor, EmitRoundTrips) {
  DatasetDescriptor d{"", "images/train", "images/val", 12, default_class_table().names()};
  EXPECT_EQ(parse_descriptor(emit_descriptor(d)), d);
  DatasetDescriptor quoted{"", "a dir", "it's", 1, {"o'neil"}};
  EXPECT_EQ(parse_descriptor(emit_descriptor(quoted)), quoted);
}

TEST(Descriptor, LoadResolvesRelativeDirs) {
  test::TempDir tmp;
  auto file = tmp.write("cfg/data.yaml", "train: images/train\nval: images/val\nnc: 1\nnames: [a]\n");
  auto d = load_descriptor(file);
  EXPECT_EQ(std::filesystem::path(d.train_dir), tmp.path() / "cfg" / "images/train");

  auto rooted = tmp.write("cfg/rooted.yaml",
                          "path: " + (tmp.path() / "ds").string() + "\ntrain: tr\nval: va\nnc: 1\nnames: [a]\n");
  EXPECT_EQ(std::filesystem::path(load_descriptor(rooted).val_dir), tmp.path() / "ds" / "va");
}

TEST(Io, LabelDirForReplacesLastImagesComponent) {
  EXPECT_EQ(io::label_dir_for("data/images/train"), std::filesystem::path("data/labels/train"));
  EXPECT_EQ(io::label_dir_for("images/x/images/val"), std::filesystem::path("images/x/labels/val"));
}

TEST(Io, WriteAtomicReplacesContent) {
  test::TempDir tmp;
  auto f = tmp / "out/a.txt";
  io::write_atomic(f, "one");
  io::write_atomic(f, "two");
  EXPECT_EQ(io::read_text(f), "two");
  std::size_t entries = 0;
  for ([[maybe_unused]] auto &e : std::filesystem::directory_iterator(tmp / "out"))
    ++entries;
  EXPECT_EQ(entries, 1u);
}

TEST(Golden, FixtureFilesEmitExactly) {
  std::filesystem::path root = std::filesystem::path(SIGNDET_SOURCE_DIR) / "tests/fixtures/labels";
  auto inputs = io::list_files(root / "input", {".txt"});
  ASSERT_EQ(inputs.size(), 4u);
  for (const auto &file : inputs) {
    auto parsed = parse_label_file(io::read_text(file));
    std::string expect = io::read_text(root / "expected" / file.filename());
    EXPECT_EQ(emit_label_file(parsed), expect) << file.filename();
    EXPECT_EQ(parse_label_file(expect), parse_label_file(emit_label_file(parsed)));
  }
}
