#include "doctest.h"
#include "lmpc/oracles.hpp"

TEST_CASE("brute-force property suite") {
  for (const auto& c : lmpc::oracle::run_property_suite(7)) {
    CAPTURE(c.detail);
    CHECK_MESSAGE(c.passed, c.name);
  }
}
