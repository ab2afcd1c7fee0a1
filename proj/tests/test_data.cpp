#include <doctest.h>

#include <fstream>

#include "concov/data.hpp"
#include "concov/error.hpp"
#include "support/temp_dir.hpp"

using namespace concov;

namespace {

void write_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_images(const std::filesystem::path& p, std::uint32_t magic, std::uint32_t n,
                      const std::vector<unsigned char>& pixels) {
  std::ofstream out(p, std::ios::binary);
  write_be32(out, magic);
  write_be32(out, n);
  write_be32(out, 2);
  write_be32(out, 2);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& p, const std::vector<unsigned char>& labels) {
  std::ofstream out(p, std::ios::binary);
  write_be32(out, 0x00000801);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("IDX fixture scales pixel bytes into [0, 1]") {
  testing::TempDir dir;
  write_idx_images(dir / "img", 0x00000803, 2, {0, 255, 0, 255, 255, 0, 255, 0});
  write_idx_labels(dir / "lbl", {3, 1});
  const auto set = load_idx(dir / "img", dir / "lbl");
  REQUIRE(set.images.size() == 2);
  CHECK(set.shape == Shape{2, 2, 1});
  CHECK(set.images[0].data() == std::vector<double>{0.0, 1.0, 0.0, 1.0});
  CHECK(set.images[1].data() == std::vector<double>{1.0, 0.0, 1.0, 0.0});
  CHECK(set.labels == std::vector<std::size_t>{3, 1});
}

TEST_CASE("IDX errors") {
  testing::TempDir dir;
  write_idx_images(dir / "img", 0x00000803, 2, {0, 255, 0, 255, 255, 0, 255, 0});
  write_idx_labels(dir / "one", {3});
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "one"), DataError);
  write_idx_images(dir / "bad", 0x00000802, 2, {0, 255, 0, 255, 255, 0, 255, 0});
  write_idx_labels(dir / "two", {3, 1});
  CHECK_THROWS_WITH_AS(load_idx(dir / "bad", dir / "two"), doctest::Contains("magic"), DataError);
  write_idx_images(dir / "short", 0x00000803, 2, {0, 255, 0});
  CHECK_THROWS_WITH_AS(load_idx(dir / "short", dir / "two"), doctest::Contains("truncated"), DataError);
  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "two"), DataError);
}

TEST_CASE("idx: dataset spec splits and records [0, 1] bounds") {
  testing::TempDir dir;
  std::vector<unsigned char> px(10 * 4);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(i * 7);
  write_idx_images(dir / "img", 0x00000803, 10, px);
  write_idx_labels(dir / "lbl", {0, 1, 2, 0, 1, 2, 0, 1, 2, 0});
  DatasetOptions opts;
  opts.test_fraction = 0.3;
  const auto d = load_dataset("idx:" + (dir / "img").string() + "," + (dir / "lbl").string(), opts);
  CHECK(d.kind == DataKind::image);
  CHECK(d.train_x.size() == 7);
  CHECK(d.test_x.size() == 3);
  CHECK(d.n_classes == 3);
  CHECK(d.lower == std::vector<double>(4, 0.0));
  CHECK(d.upper == std::vector<double>(4, 1.0));
}

TEST_CASE("CSV minmax maps a feature column onto [0, 1]") {
  testing::TempDir dir;
  write_text(dir / "toy.csv", "a,b,class\n0,5,x\n1,5,y\n2,5,x\n3,5,z\n");
  Dataset d = load_csv(dir / "toy.csv", "class");
  CHECK(d.n_features == 2);
  CHECK(d.n_classes == 3);
  CHECK(d.class_names == std::vector<std::string>{"x", "y", "z"});
  CHECK(d.train_y == std::vector<std::size_t>{0, 1, 0, 2});
  normalize(d, Normalization::minmax);
  CHECK(d.train_x[0][0] == 0.0);
  CHECK(d.train_x[1][0] == doctest::Approx(1.0 / 3.0));
  CHECK(d.train_x[2][0] == doctest::Approx(2.0 / 3.0));
  CHECK(d.train_x[3][0] == 1.0);
  // constant column maps to 0 and the map stays invertible
  CHECK(d.train_x[0][1] == 0.0);
  CHECK(d.train_x[2][0] * d.norm_scale[0] + d.norm_offset[0] == doctest::Approx(2.0));
}

TEST_CASE("CSV normalization none keeps values and bounds them") {
  testing::TempDir dir;
  write_text(dir / "t.csv", "f0,f1,class\n-1,0.5,0\n0.25,1,1\n1,-0.5,0\n");
  Dataset d = load_csv(dir / "t.csv", "class");
  normalize(d, Normalization::none);
  CHECK(d.train_x[0].data() == std::vector<double>{-1, 0.5});
  CHECK(d.lower == std::vector<double>{-1, -0.5});
  CHECK(d.upper == std::vector<double>{1, 1});
  CHECK(d.n_classes == 2);
}

TEST_CASE("CSV errors") {
  testing::TempDir dir;
  write_text(dir / "ragged.csv", "a,b,class\n1,2,x\n1,x\n");
  CHECK_THROWS_AS(load_csv(dir / "ragged.csv", "class"), DataError);
  write_text(dir / "text.csv", "a,b,class\n1,abc,x\n");
  CHECK_THROWS_WITH_AS(load_csv(dir / "text.csv", "class"), doctest::Contains("non-numeric"), DataError);
  write_text(dir / "nolabel.csv", "a,b\n1,2\n");
  CHECK_THROWS_AS(load_csv(dir / "nolabel.csv", "class"), DataError);
  write_text(dir / "train.csv", "a,class\n1,walk\n2,sit\n");
  write_text(dir / "test.csv", "a,class\n1,run\n");
  CHECK_THROWS_WITH_AS(load_csv(dir / "train.csv", dir / "test.csv", "class"), doctest::Contains("run"), DataError);
}

TEST_CASE("split sizes and determinism") {
  testing::TempDir dir;
  std::string csv = "a,class\n";
  for (int i = 0; i < 1000; ++i) csv += std::to_string(i) + "," + std::to_string(i % 3) + "\n";
  write_text(dir / "big.csv", csv);
  write_text(dir / "ten.csv", "a,class\n0,0\n1,0\n2,0\n3,1\n4,1\n5,1\n6,0\n7,0\n8,1\n9,1\n");

  const Dataset ten = split(load_csv(dir / "ten.csv", "class"), 0.3, 1);
  CHECK(ten.test_x.size() == 3);
  CHECK(ten.train_x.size() == 7);

  const Dataset base = load_csv(dir / "big.csv", "class");
  const Dataset a = split(base, 0.25, 5);
  const Dataset b = split(base, 0.25, 5);
  const Dataset c = split(base, 0.25, 6);
  CHECK(a.test_x == b.test_x);
  CHECK(a.train_y == b.train_y);
  CHECK(a.test_x != c.test_x);
  // labels travel with their rows
  for (std::size_t i = 0; i < a.test_x.size(); ++i) {
    CHECK(a.test_y[i] == static_cast<std::size_t>(a.test_x[i][0]) % 3);
  }
  CHECK_THROWS_AS(split(base, 0.0, 1), InputError);
  CHECK_THROWS_AS(split(base, 1.0, 1), InputError);
}

TEST_CASE("loading is deterministic") {
  testing::TempDir dir;
  write_text(dir / "t.csv", "f0,f1,class\n-1,0.5,0\n0.25,1,1\n1,-0.5,0\n3,3,1\n");
  DatasetOptions opts;
  opts.normalize = Normalization::minmax;
  opts.test_fraction = 0.5;
  const auto a = load_dataset("csv:" + (dir / "t.csv").string(), opts);
  const auto b = load_dataset("csv:" + (dir / "t.csv").string(), opts);
  CHECK(a.train_x == b.train_x);
  CHECK(a.test_x == b.test_x);
  CHECK_THROWS_AS(load_dataset("har", opts), InputError);
}
