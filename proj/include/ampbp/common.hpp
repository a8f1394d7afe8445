#pragma once

#include <stdexcept>
#include <string>

// Precondition violations -> invalid_argument; numeric failures detected at
// run time -> runtime_error.
#define AMPBP_REQUIRE(cond, msg)                                            \
  do {                                                                      \
    if (!(cond)) throw std::invalid_argument(std::string("ampbp: ") + msg); \
  } while (0)

#define AMPBP_CHECK(cond, msg)                                           \
  do {                                                                   \
    if (!(cond)) throw std::runtime_error(std::string("ampbp: ") + msg); \
  } while (0)
