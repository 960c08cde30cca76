#pragma once

#include <gtest/gtest.h>

#include "salvs/error.hpp"

namespace salvs::test {

inline void expect_error(ErrorCode code, auto&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace salvs::test
