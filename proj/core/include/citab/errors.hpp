// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace citab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
struct DimensionError : Error {
  using Error::Error;
};

// Bad values: non-finite numbers, unparseable cells, malformed records.
struct ValueError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Operation applied in the wrong object state.
struct StateError : Error {
  using Error::Error;
};

// File I/O and on-disk format problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace citab
