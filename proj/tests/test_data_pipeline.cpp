#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lth/dataset.hpp"
#include "lth/rng.hpp"

using namespace lth;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  auto dir = fs::temp_directory_path() / "lth_data_tests";
  fs::create_directories(dir);
  return dir;
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                        (unsigned char)(v >> 8), (unsigned char)v};
  out.write(reinterpret_cast<char*>(b), 4);
}

// n tiny 2x2 images with labels i % 10
void write_idx_pair(const fs::path& imgs, const fs::path& labs, int n, bool corrupt_magic = false,
                    bool truncate = false, bool bad_label = false) {
  {
    std::ofstream out(imgs, std::ios::binary);
    write_be32(out, corrupt_magic ? 0x00000804 : 0x00000803);
    write_be32(out, std::uint32_t(n));
    write_be32(out, 2);
    write_be32(out, 2);
    const int pixels = truncate ? n * 4 - 3 : n * 4;
    for (int i = 0; i < pixels; ++i) out.put(char(i % 256));
  }
  {
    std::ofstream out(labs, std::ios::binary);
    write_be32(out, 0x00000801);
    write_be32(out, std::uint32_t(n));
    for (int i = 0; i < n; ++i) out.put(char(bad_label && i == 1 ? 200 : i % 10));
  }
}

const char* kBlobSpec = R"({
  "kind": "blobs", "per_class": 50, "dims": 8, "separation": 4.0,
  "seed": 42, "classes": 2, "split": "train"
})";

}  // namespace

TEST_CASE("idx loader honors the header contract") {
  auto dir = temp_dir();
  write_idx_pair(dir / "t-images-idx3-ubyte", dir / "t-labels-idx1-ubyte", 60);
  auto ds = load_dataset((dir / "t-images-idx3-ubyte").string(), DataFormat::kIdx);
  CHECK(ds.size() == 60);
  CHECK(ds.images.shape == Shape{60, 1, 2, 2});
  CHECK(ds.ids[0] == 0);
  CHECK(ds.ids[59] == 59);
  CHECK(ds.labels[3] == 3);
  // pixels scaled into [0,1]
  for (auto v : ds.images.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("idx loader rejects bad files") {
  auto dir = temp_dir();
  write_idx_pair(dir / "bad-images-idx3-ubyte", dir / "bad-labels-idx1-ubyte", 5, true);
  CHECK_THROWS_WITH_AS(load_idx((dir / "bad-images-idx3-ubyte").string(),
                                (dir / "bad-labels-idx1-ubyte").string()),
                       doctest::Contains("magic"), std::runtime_error);

  write_idx_pair(dir / "tr-images-idx3-ubyte", dir / "tr-labels-idx1-ubyte", 5, false, true);
  CHECK_THROWS_WITH_AS(load_idx((dir / "tr-images-idx3-ubyte").string(),
                                (dir / "tr-labels-idx1-ubyte").string()),
                       doctest::Contains("truncated"), std::runtime_error);

  write_idx_pair(dir / "bl-images-idx3-ubyte", dir / "bl-labels-idx1-ubyte", 5, false, false, true);
  CHECK_THROWS_WITH_AS(load_idx((dir / "bl-images-idx3-ubyte").string(),
                                (dir / "bl-labels-idx1-ubyte").string()),
                       doctest::Contains("label byte"), std::runtime_error);
}

TEST_CASE("cifar binary record layout") {
  auto dir = temp_dir();
  auto path = dir / "batch.bin";
  {
    std::ofstream out(path, std::ios::binary);
    for (int rec = 0; rec < 2; ++rec) {
      out.put(char(rec + 1));  // label
      for (int i = 0; i < 3072; ++i) out.put(char((i + rec) % 256));
    }
  }
  auto ds = load_cifar_binary(path.string());
  CHECK(ds.size() == 2);
  CHECK(ds.images.shape == Shape{2, 3, 32, 32});
  CHECK(ds.labels[0] == 1);
  CHECK(ds.labels[1] == 2);
  CHECK(ds.class_count == 10);
}

TEST_CASE("synthetic blobs are bitwise reproducible") {
  auto a = load_synthetic(kBlobSpec);
  auto b = load_synthetic(kBlobSpec);
  CHECK(a.size() == 100);
  CHECK(a.class_count == 2);
  REQUIRE(a.images.data.size() == b.images.data.size());
  for (std::size_t i = 0; i < a.images.data.size(); ++i)
    CHECK(a.images.data[i] == b.images.data[i]);
  CHECK(a.labels == b.labels);
  // train/test splits share means but draw different noise
  std::string test_spec(kBlobSpec);
  test_spec.replace(test_spec.find("train"), 5, "test");
  auto t = load_synthetic(test_spec);
  CHECK(t.images.data != a.images.data);
}

TEST_CASE("normalize centers and scales per channel") {
  auto ds = load_synthetic(kBlobSpec);
  auto norm = normalize(ds);
  auto st = compute_stats(norm);
  for (auto m : st.mean) CHECK(m == doctest::Approx(0.0).epsilon(1e-3));
  for (auto s : st.stdev) CHECK(s == doctest::Approx(1.0).epsilon(1e-3));
  // second normalization with freshly computed stats is a no-op
  auto twice = normalize(norm);
  for (std::size_t i = 0; i < norm.images.data.size(); ++i)
    CHECK(twice.images.data[i] == doctest::Approx(norm.images.data[i]).epsilon(1e-3));
}

TEST_CASE("constant channel centers to zero under the std floor") {
  Dataset ds;
  ds.images = TensorF({3, 1, 2, 2});
  std::fill(ds.images.data.begin(), ds.images.data.end(), 0.7f);
  ds.labels = {0, 1, 0};
  ds.ids = {0, 1, 2};
  ds.class_count = 2;
  auto norm = normalize(ds);
  for (auto v : norm.images.data) CHECK(v == doctest::Approx(0.0));
  CHECK(norm.stats->stdev[0] >= 1e-8f);
}

TEST_CASE("normalization stats match hand arithmetic on a toy set") {
  Dataset ds;
  ds.images = TensorF({2, 1, 1, 2}, {1.0f, 2.0f, 3.0f, 6.0f});
  ds.labels = {0, 1};
  ds.ids = {0, 1};
  ds.class_count = 2;
  auto st = compute_stats(ds);
  // mean = (1+2+3+6)/4 = 3; var = (4+1+0+9)/4 = 3.5
  CHECK(st.mean[0] == doctest::Approx(3.0));
  CHECK(st.stdev[0] == doctest::Approx(std::sqrt(3.5)));
}

TEST_CASE("augment crop identity and flip involution") {
  TensorF img({1, 1, 4, 4});
  for (std::int64_t i = 0; i < 16; ++i) img[i] = float(i);

  // crop offset (pad, pad) with no flip reproduces the image
  TensorF out({1, 1, 4, 4});
  augment_example(img.ptr(), out.ptr(), 1, 4, 4, 4, 4, false, 4);
  for (std::int64_t i = 0; i < 16; ++i) CHECK(out[i] == img[i]);

  // flipping twice at the identity crop restores the original
  TensorF once({1, 1, 4, 4}), twice({1, 1, 4, 4});
  augment_example(img.ptr(), once.ptr(), 1, 4, 4, 4, 4, true, 4);
  augment_example(once.ptr(), twice.ptr(), 1, 4, 4, 4, 4, true, 4);
  for (std::int64_t i = 0; i < 16; ++i) CHECK(twice[i] == img[i]);
}

TEST_CASE("augment output shape and determinism under the stream") {
  TensorF batch({3, 1, 6, 6});
  for (std::int64_t i = 0; i < batch.numel(); ++i) batch[i] = float(i % 7);
  SplitMix s1(99), s2(99);
  auto a = augment(batch, s1);
  auto b = augment(batch, s2);
  CHECK(a.shape == batch.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("flip frequency is one half") {
  TensorF batch({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  SplitMix stream(123);
  int flips = 0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    // identical draw structure to augment(): dy, dx, then the flip bit
    stream.next_below(9);
    stream.next_below(9);
    if (stream.next_u64() & 1) ++flips;
  }
  const double freq = double(flips) / draws;
  CHECK(freq == doctest::Approx(0.5).epsilon(0.04));
  CHECK(std::abs(freq - 0.5) <= 0.02);
}

TEST_CASE("corrupt_labels at fraction half on ten classes differs about 45 percent") {
  std::string spec = R"({"kind":"blobs","per_class":1000,"dims":4,"separation":3.0,
                         "seed":7,"classes":10})";
  auto ds = load_synthetic(spec);
  auto corrupted = corrupt_labels(ds, 0.5, 11);
  std::int64_t differing = 0, selected = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    if (corrupted.labels[std::size_t(i)] != ds.labels[std::size_t(i)]) ++differing;
    if (corrupted.label_resampled[std::size_t(i)]) ++selected;
  }
  CHECK(selected == 5000);
  CHECK(double(differing) / double(ds.size()) == doctest::Approx(0.45).epsilon(0.05));
}

TEST_CASE("corrupt_labels edge fractions") {
  auto ds = load_synthetic(kBlobSpec);
  auto same = corrupt_labels(ds, 0.0, 3);
  CHECK(same.labels == ds.labels);

  // fraction 1 on two classes: about half the labels change across seeds
  std::int64_t differing = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto c = corrupt_labels(ds, 1.0, seed);
    for (std::int64_t i = 0; i < ds.size(); ++i, ++total)
      if (c.labels[std::size_t(i)] != ds.labels[std::size_t(i)]) ++differing;
  }
  CHECK(double(differing) / double(total) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("random balanced subset is exactly balanced") {
  std::string spec = R"({"kind":"blobs","per_class":40,"dims":4,"separation":3.0,
                         "seed":5,"classes":10})";
  auto ds = load_synthetic(spec);
  SubsetSelector sel;
  sel.strategy = SubsetStrategy::kRandomBalanced;
  sel.size = 100;
  sel.seed = 17;
  auto sub = select_subset(ds, sel);
  CHECK(sub.size() == 100);
  std::vector<int> per_class(10, 0);
  for (auto l : sub.labels) per_class[std::size_t(l)]++;
  for (auto c : per_class) CHECK(c == 10);
}

TEST_CASE("balanced counts differ by at most one when M is not a multiple of K") {
  std::string spec = R"({"kind":"blobs","per_class":40,"dims":4,"separation":3.0,
                         "seed":5,"classes":3})";
  auto ds = load_synthetic(spec);
  SubsetSelector sel;
  sel.strategy = SubsetStrategy::kRandomBalanced;
  sel.size = 50;
  sel.seed = 1;
  auto sub = select_subset(ds, sel);
  CHECK(sub.size() == 50);
  std::vector<int> per_class(3, 0);
  for (auto l : sub.labels) per_class[std::size_t(l)]++;
  const auto [mn, mx] = std::minmax_element(per_class.begin(), per_class.end());
  CHECK(*mx - *mn <= 1);
}

TEST_CASE("score-ranked selection with deterministic tie-break") {
  Dataset ds;
  ds.images = TensorF({3, 1, 1, 1}, {0.0f, 0.0f, 0.0f});
  ds.labels = {0, 1, 0};
  ds.ids = {10, 20, 30};
  ds.class_count = 2;

  std::unordered_map<std::int64_t, double> scores{{10, 0.1}, {20, 0.9}, {30, 0.5}};
  SubsetSelector sel;
  sel.strategy = SubsetStrategy::kLowestScore;
  sel.size = 2;
  sel.scores = &scores;
  auto sub = select_subset(ds, sel);
  REQUIRE(sub.size() == 2);
  CHECK(sub.ids[0] == 10);
  CHECK(sub.ids[1] == 30);

  std::unordered_map<std::int64_t, double> equal{{10, 0.5}, {20, 0.5}, {30, 0.5}};
  sel.scores = &equal;
  sel.size = 2;
  auto tie = select_subset(ds, sel);
  CHECK(tie.ids == std::vector<std::int64_t>{10, 20});

  std::unordered_map<std::int64_t, double> missing{{10, 0.5}};
  sel.scores = &missing;
  CHECK_THROWS_AS(select_subset(ds, sel), std::invalid_argument);
}

TEST_CASE("oversized subset clamps with a warning") {
  auto ds = load_synthetic(kBlobSpec);
  SubsetSelector sel;
  sel.strategy = SubsetStrategy::kRandomBalanced;
  sel.size = 100000;
  sel.seed = 2;
  auto sub = select_subset(ds, sel);
  CHECK(sub.size() == ds.size());
}

TEST_CASE("batch iterator reproducibility and sizes") {
  auto p1 = epoch_permutation(100, 5, 0);
  auto p2 = epoch_permutation(100, 5, 0);
  CHECK(p1 == p2);
  auto p3 = epoch_permutation(100, 6, 0);
  CHECK(p1 != p3);
  auto p4 = epoch_permutation(100, 5, 1);
  CHECK(p1 != p4);

  BatchIterator it(100, 32, 5, 0);
  std::vector<std::size_t> sizes;
  for (auto b = it.next(); !b.empty(); b = it.next()) sizes.push_back(b.size());
  CHECK(sizes == std::vector<std::size_t>{32, 32, 32, 4});
}

TEST_CASE("ids stay attached to their images through subset and corruption chains") {
  std::string spec = R"({"kind":"blobs","per_class":30,"dims":6,"separation":3.0,
                         "seed":9,"classes":4})";
  auto ds = load_synthetic(spec);
  auto corrupted = corrupt_labels(ds, 0.3, 4);
  SubsetSelector sel;
  sel.strategy = SubsetStrategy::kRandomBalanced;
  sel.size = 40;
  sel.seed = 8;
  auto sub = select_subset(corrupted, sel);
  SubsetSelector sel2;
  sel2.strategy = SubsetStrategy::kExplicitIds;
  sel2.explicit_ids = {sub.ids[0], sub.ids[5]};
  auto sub2 = select_subset(sub, sel2);

  const std::int64_t per = ds.example_numel();
  for (std::int64_t row = 0; row < sub2.size(); ++row) {
    const std::int64_t id = sub2.ids[std::size_t(row)];
    const std::int64_t orig = ds.position_of(id);
    for (std::int64_t j = 0; j < per; ++j)
      CHECK(sub2.images[row * per + j] == ds.images[orig * per + j]);
  }
}
