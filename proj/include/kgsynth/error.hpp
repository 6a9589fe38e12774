#pragma once

#include <stdexcept>
#include <string>

namespace kgsynth {

// Base for all toolkit failures. ValidationError covers bad inputs (missing
// files, malformed rows, bad configuration); everything else is a runtime
// failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

}  // namespace kgsynth
