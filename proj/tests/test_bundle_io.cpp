#include "helpers.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sacn;
namespace fs = std::filesystem;

namespace {

class BundleDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sacn_bundle_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name, std::ios::binary) << text;
  }

  static std::string read(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  void write_minimal(const std::string& edges) {
    write("meta.json", R"({"name": "tiny", "num_nodes": 3, "num_features": 2, "num_classes": 2})");
    write("edges.tsv", edges);
    write("features.tsv", "0\t0\t1.0\n2\t1\t0.5\n");
    write("labels.tsv", "0\t0\n1\t1\n");
  }

  /// Expects load_bundle to fail with a message naming `file:line`.
  void expect_error_at(const std::string& file, std::size_t line) {
    try {
      load_bundle(dir_);
      FAIL() << "expected BundleError";
    } catch (const BundleError& e) {
      EXPECT_EQ(e.file().filename(), file);
      EXPECT_EQ(e.line(), line);
      EXPECT_NE(std::string(e.what()).find(file + ":" + std::to_string(line)), std::string::npos) << e.what();
    }
  }

  fs::path dir_;
};

}  // namespace

TEST_F(BundleDir, SingleEdgeIsSymmetrized) {
  write_minimal("0\t1\n");
  const auto g = load_bundle(dir_);
  EXPECT_EQ(g.num_nodes, 3);
  EXPECT_EQ(g.adjacency.nnz(), 2);
  EXPECT_TRUE(g.adjacency.contains(0, 1));
  EXPECT_TRUE(g.adjacency.contains(1, 0));
  EXPECT_EQ(g.labels, (std::vector<int>{0, 1, kUnlabeled}));
  EXPECT_TRUE(g.split.empty());
  EXPECT_DOUBLE_EQ(g.features.to_dense()(2, 1), 0.5);
}

TEST_F(BundleDir, EmptyEdgeFile) {
  write_minimal("");
  EXPECT_EQ(load_bundle(dir_).adjacency.nnz(), 0);
}

TEST_F(BundleDir, ReversedAndRepeatedEdgesCollapse) {
  write_minimal("1\t0\n0\t1\n1\t2\n");
  EXPECT_EQ(load_bundle(dir_).num_edges(), 2);
}

TEST_F(BundleDir, SelfLoopRejected) {
  write_minimal("0\t1\n2\t2\n");
  expect_error_at("edges.tsv", 2);
}

TEST_F(BundleDir, IndexOutOfRange) {
  write_minimal("0\t3\n");
  expect_error_at("edges.tsv", 1);
}

TEST_F(BundleDir, MalformedField) {
  write_minimal("0\tx\n");
  expect_error_at("edges.tsv", 1);
}

TEST_F(BundleDir, FeatureDimensionOutOfRange) {
  write_minimal("0\t1\n");
  write("features.tsv", "0\t0\t1.0\n1\t2\t1.0\n");
  expect_error_at("features.tsv", 2);
}

TEST_F(BundleDir, NonFiniteFeatureRejected) {
  write_minimal("0\t1\n");
  write("features.tsv", "0\t0\tnan\n");
  expect_error_at("features.tsv", 1);
}

TEST_F(BundleDir, DuplicateLabeledNode) {
  write_minimal("0\t1\n");
  write("labels.tsv", "0\t0\n1\t1\n0\t1\n");
  expect_error_at("labels.tsv", 3);
}

TEST_F(BundleDir, OverlappingSplits) {
  write_minimal("0\t1\n");
  write("splits.json", R"({"train": [0], "val": [0], "test": [1]})");
  EXPECT_THROW(load_bundle(dir_), BundleError);
}

TEST_F(BundleDir, MissingFileNamesPath) {
  write_minimal("0\t1\n");
  fs::remove(dir_ / "labels.tsv");
  try {
    load_bundle(dir_);
    FAIL();
  } catch (const BundleError& e) {
    EXPECT_NE(std::string(e.what()).find("labels.tsv"), std::string::npos);
  }
  EXPECT_THROW(load_bundle(dir_ / "nope"), BundleError);
}

TEST_F(BundleDir, RoundTripIsByteIdentical) {
  auto g = generate_sbm({.num_nodes = 40, .num_classes = 3, .p_in = 0.3, .p_out = 0.05,
                         .num_features = 9, .feature_flip = 0.2, .seed = 5});
  // Awkward values that must survive the text format exactly.
  for (std::size_t i = 0; i < g.features.values.size(); ++i) {
    g.features.values[i] = (i % 3 == 0) ? 0.1 * static_cast<double>(i) : 1.0 / static_cast<double>(i + 7);
  }
  g = make_split(std::move(g), {.label_rate = 0.2, .val_size = 10, .test_size = 10, .seed = 3});
  save_bundle(g, dir_ / "a");
  const auto loaded = load_bundle(dir_ / "a");
  EXPECT_EQ(loaded.adjacency, g.adjacency);
  EXPECT_EQ(loaded.features.values, g.features.values);
  EXPECT_EQ(loaded.labels, g.labels);
  EXPECT_EQ(loaded.split, g.split);
  save_bundle(loaded, dir_ / "b");
  for (const char* f : {"meta.json", "edges.tsv", "features.tsv", "labels.tsv", "splits.json"}) {
    EXPECT_EQ(read(dir_ / "a" / f), read(dir_ / "b" / f)) << f;
  }
}

TEST(FormatDecimal, MatchesPythonRepr) {
  EXPECT_EQ(format_decimal(1.0), "1.0");
  EXPECT_EQ(format_decimal(0.0), "0.0");
  EXPECT_EQ(format_decimal(-2.5), "-2.5");
  EXPECT_EQ(format_decimal(0.1), "0.1");
  EXPECT_EQ(format_decimal(0.0001), "0.0001");
  EXPECT_EQ(format_decimal(1e-05), "1e-05");
  EXPECT_EQ(format_decimal(123456.0), "123456.0");
  EXPECT_EQ(format_decimal(1e16), "1e+16");
  EXPECT_EQ(format_decimal(1.5e16), "1.5e+16");
  EXPECT_EQ(format_decimal(1e15), "1000000000000000.0");
  EXPECT_EQ(format_decimal(0.1 + 0.2), "0.30000000000000004");
  EXPECT_EQ(format_decimal(1.0 / 3.0), "0.3333333333333333");
  EXPECT_EQ(format_decimal(2.5e-7), "2.5e-07");
  EXPECT_EQ(format_decimal(1.2345e-100), "1.2345e-100");
  EXPECT_THROW(format_decimal(std::nan("")), std::invalid_argument);
}

TEST(FormatDecimal, RoundTripsRandomDoubles) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> exponent(-30, 30);
  std::normal_distribution<double> mantissa(0, 1);
  for (int i = 0; i < 10000; ++i) {
    const double v = mantissa(rng) * std::pow(10.0, exponent(rng));
    EXPECT_EQ(std::stod(format_decimal(v)), v);
  }
}
