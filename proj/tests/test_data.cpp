#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <set>

#include "hcl/data.hpp"

using namespace hcl;
using namespace hcl::data;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("synthetic generator: ids, determinism, range") {
  auto ds = generate_synthetic(123, 17, 32);
  REQUIRE(ds.count() == 17);
  for (int i = 0; i < 17; ++i) CHECK(ds.records[size_t(i)].id == i);
  for (const auto& rec : ds.records) {
    CHECK(rec.pixels.data.minCoeff() >= 0.0f);
    CHECK(rec.pixels.data.maxCoeff() <= 1.0f);
  }

  auto again = generate_synthetic(123, 17, 32);
  for (int i = 0; i < 17; ++i)
    CHECK(again.records[size_t(i)].pixels.data == ds.records[size_t(i)].pixels.data);

  auto other_seed = generate_synthetic(124, 1, 32);
  CHECK(other_seed.records[0].pixels.data != ds.records[0].pixels.data);
}

TEST_CASE("synthetic images are pairwise distinct in >= 1% of pixels") {
  const int n = 100, size = 32;
  auto ds = generate_synthetic(7, n, size);
  const Index plane = Index(size) * size;
  const Index min_diff = plane / 100 + 1;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) {
      const auto& pa = ds.records[size_t(a)].pixels.data;
      const auto& pb = ds.records[size_t(b)].pixels.data;
      Index differing = 0;
      for (Index p = 0; p < plane && differing < min_diff; ++p) {
        for (int c = 0; c < 3; ++c)
          if (std::abs(pa[c * plane + p] - pb[c * plane + p]) > 1.0f / 255.0f) {
            ++differing;
            break;
          }
      }
      if (differing < min_diff) {
        CAPTURE(a);
        CAPTURE(b);
        REQUIRE(differing >= min_diff);
      }
    }
  CHECK(true);
}

TEST_CASE("corpus: record arithmetic and byte round trip") {
  const int size = 16;
  auto ds = generate_synthetic(3, 5, size);
  TempFile f("hcl_corpus_test.bin");
  save_corpus(ds, f.path);

  const auto bytes = serial::read_file(f.path);
  CHECK(bytes.size() == 5u * (1 + 3 * size * size));

  auto loaded = load_corpus(f.path, size);
  REQUIRE(loaded.count() == 5);
  for (size_t i = 0; i < 5; ++i) CHECK(loaded.records[i].id == std::int64_t(i));

  TempFile f2("hcl_corpus_test2.bin");
  save_corpus(loaded, f2.path);
  CHECK(serial::read_file(f2.path) == bytes);  // pixel bytes preserved exactly
}

TEST_CASE("corpus: truncation and missing files are rejected") {
  const int size = 8;
  auto ds = generate_synthetic(4, 3, size);
  TempFile f("hcl_corpus_trunc.bin");
  save_corpus(ds, f.path);
  auto bytes = serial::read_file(f.path);
  bytes.pop_back();
  serial::write_file(f.path, bytes);
  CHECK_THROWS_AS(load_corpus(f.path, size), serial::ParseError);
  CHECK_THROWS_AS(load_corpus("/nonexistent/nowhere.bin", size), serial::IoError);
}

TEST_CASE("epoch_batches: sizes, bijection, epoch-to-epoch difference") {
  auto batches = epoch_batches(10, 4, 42, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);

  std::set<Index> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 9);

  // recorded fixture for (seed=42): permutations of epochs 0 and 1
  auto flat = [](const std::vector<std::vector<Index>>& bs) {
    std::vector<Index> out;
    for (const auto& b : bs) out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  CHECK(flat(batches) == std::vector<Index>{4, 2, 6, 7, 1, 9, 5, 0, 3, 8});
  CHECK(flat(epoch_batches(10, 4, 42, 1)) == std::vector<Index>{4, 6, 7, 3, 8, 1, 5, 0, 9, 2});

  // repeatable
  CHECK(flat(epoch_batches(10, 4, 42, 0)) == flat(batches));
}
