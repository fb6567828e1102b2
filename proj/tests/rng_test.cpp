#include <doctest.h>

#include <cmath>
#include <vector>

#include "frontflow/rng.hpp"

using namespace frontflow;

TEST_SUITE("rng") {
  TEST_CASE("philox known answers") {
    using B = Philox4x32::Block;
    CHECK(Philox4x32::generate(0, 0, 0) == B{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32::generate(~0ull, ~0ull, ~0ull) == B{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32::generate(0x299f31d0a4093822ull, 0x0370734413198a2eull, 0x85a308d3243f6a88ull) ==
          B{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
  }

  TEST_CASE("named streams are reproducible and distinct") {
    auto a = RandomStream::named(5, "L");
    auto b = RandomStream::named(5, "L");
    auto c = RandomStream::named(5, "xi_T");
    int same = 0;
    for (int i = 0; i < 100; ++i) {
      const auto x = a.next_u32();
      CHECK(x == b.next_u32());
      same += x == c.next_u32();
    }
    CHECK(same < 3);
    CHECK(substream_key(1, "a") != substream_key(2, "a"));
  }

  TEST_CASE("uniform is open and normal has unit moments") {
    RandomStream r(123);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const double u = r.uniform();
      REQUIRE(u > 0.0);
      REQUIRE(u < 1.0);
      const double z = r.normal();
      s += z;
      s2 += z * z;
    }
    CHECK(std::abs(s / n) < 3.0 / std::sqrt(n) * 1.5);
    CHECK(std::abs(s2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n) * 1.5);
  }

  TEST_CASE("below stays in range") {
    RandomStream r(9);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
      const auto k = r.below(7);
      REQUIRE(k < 7);
      ++hits[k];
    }
    for (int h : hits) CHECK(h > 800);
  }
}
