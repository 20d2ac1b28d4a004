#pragma once

#include <gtest/gtest.h>

#include "asldn/error.hpp"
#include "oracles.hpp"

#define EXPECT_ERROR_CODE(statement, expected_code)                          \
  do {                                                                      \
    try {                                                                   \
      statement;                                                            \
      ADD_FAILURE() << "expected asldn::Error from: " #statement;           \
    } catch (const asldn::Error& error_) {                                  \
      EXPECT_EQ(error_.code(), expected_code) << error_.what();             \
    }                                                                       \
  } while (0)
