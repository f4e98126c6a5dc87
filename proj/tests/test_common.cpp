#include "spcagan/common.hpp"

#include <doctest.h>

#include <set>

using namespace spcagan;

TEST_SUITE("common") {
  TEST_CASE("timestamps round-trip through the CERT text format") {
    const auto ts = parse_timestamp("01/04/2010 07:59:59");
    REQUIRE(ts.has_value());
    CHECK(format_timestamp(*ts) == "01/04/2010 07:59:59");
    CHECK(day_of(*ts) == 14613);
    CHECK(format_date(14613) == "01/04/2010");
    CHECK(parse_date("01/04/2010") == 14613);
  }

  TEST_CASE("malformed timestamps are rejected") {
    for (const char* bad : {"", "1/4/2010 07:00:00", "13/01/2010 00:00:00", "02/30/2010 00:00:00",
                            "01/04/2010 24:00:00", "01/04/2010 07:60:00", "01/04/2010T07:00:00",
                            "01/04/2010 07:00:00 extra"}) {
      CAPTURE(bad);
      CHECK_FALSE(parse_timestamp(bad).has_value());
    }
  }

  TEST_CASE("working hours are the half-open interval [08:00, 18:00)") {
    CHECK(is_after_hours(*parse_timestamp("01/04/2010 07:59:59")));
    CHECK_FALSE(is_after_hours(*parse_timestamp("01/04/2010 08:00:00")));
    CHECK_FALSE(is_after_hours(*parse_timestamp("01/04/2010 17:59:59")));
    CHECK(is_after_hours(*parse_timestamp("01/04/2010 18:00:00")));
  }

  TEST_CASE("weekend detection") {
    CHECK_FALSE(is_weekend(*parse_date("01/04/2010")));  // Monday
    CHECK(is_weekend(*parse_date("01/09/2010")));
    CHECK(is_weekend(*parse_date("01/10/2010")));
  }

  TEST_CASE("derived seeds are deterministic and distinct per stream") {
    CHECK(derive_seed(42, 1) == derive_seed(42, 1));
    std::set<std::uint64_t> seen;
    for (std::uint64_t s = 0; s < 1000; ++s) seen.insert(derive_seed(7, s));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  }

  TEST_CASE("fnv1a matches the published test vectors") {
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }

  TEST_CASE("hash_matrix depends on shape and content") {
    Matrix a = Matrix::Zero(2, 3), b = Matrix::Zero(3, 2);
    CHECK(hash_matrix(a) != hash_matrix(b));
    Matrix c = a;
    c(1, 2) = 1e-300;
    CHECK(hash_matrix(a) != hash_matrix(c));
    CHECK(hash_matrix(a) == hash_matrix(Matrix::Zero(2, 3)));
  }

  TEST_CASE("one_hot") {
    const auto m = one_hot({2, 0, 1}, 3);
    CHECK(m.rowwise().sum().isOnes());
    CHECK(m(0, 2) == 1.0);
    CHECK(m(1, 0) == 1.0);
    CHECK_THROWS_AS(one_hot({3}, 3), Error);
  }

  TEST_CASE("errors carry their kind and an optional stage tag") {
    const Error e(ErrorKind::Numeric, "bad pivot");
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()) == "numeric error: bad pivot");
    const auto t = e.tagged("train-gan");
    CHECK(std::string(t.what()) == "[train-gan] numeric error: bad pivot");
    CHECK(t.stage() == "train-gan");
    CHECK(std::string(t.tagged("run").what()) == std::string(t.what()));
  }
}
