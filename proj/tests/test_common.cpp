#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "docbreg/common.hpp"

using namespace docbreg;

TEST_CASE("rng streams are reproducible and seed dependent") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng d(42), e(43);
  int same = 0;
  for (int i = 0; i < 100; ++i) same += d.next_u64() == e.next_u64();
  CHECK(same == 0);
}

TEST_CASE("uniform and below stay in range") {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.below(7) < 7u);
  }
}

TEST_CASE("normal and gamma draws have the expected first moment") {
  Rng r(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0, g = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
    g += r.gamma(2.0);
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(g / n - 2.0) < 0.03);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, {0, 0}) != derive_seed(1, {0, 1}));
  CHECK(derive_seed(1, {0, 1}) != derive_seed(1, {1, 0}));
  CHECK(derive_seed(1, {3}) == derive_seed(1, {3}));
  CHECK(substream(5, "train") != substream(5, "probe"));
  CHECK(substream(5, "train") == substream(5, "train"));
}

TEST_CASE("fnv1a matches published 64-bit reference values") {
  CHECK(fnv1a(std::string_view("")) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a(std::string_view("foobar")) == 0x85944171f73967e8ULL);
}

TEST_CASE("atomic writes round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "docbreg_test_common";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "x.bin").string();
  const std::string payload("abc\0def", 7);
  write_file_atomic(path, payload);
  CHECK(read_file(path) == payload);
  write_file_atomic(path, "second");
  CHECK(read_file(path) == "second");
  CHECK_THROWS(read_file((dir / "missing").string()));
  std::filesystem::remove_all(dir);
}

TEST_CASE("matrix accessors") {
  Matrix m(2, 3);
  m(1, 2) = 5.0;
  CHECK(m.row(1)[2] == 5.0);
  CHECK(m.size() == 6);
  CHECK(all_finite(m.data));
  m(0, 0) = std::nan("");
  CHECK_FALSE(all_finite(m.data));
}
