#pragma once

#include <stdexcept>
#include <string>

namespace evlcal {

struct LengthMismatchError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EmptyInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct UnsortedStreamError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct OutOfBoundsError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct NoLidarEdgesError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteParametersError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceDetectedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace evlcal
