#pragma once

#include <stdexcept>
#include <string>

namespace featlab {

// Bad inputs or violated preconditions. The CLI maps this to exit code 2.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A loss or parameter went non-finite. The CLI maps this to exit code 3.
struct NumericAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

}  // namespace featlab
