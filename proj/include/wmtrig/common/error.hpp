#pragma once

#include <stdexcept>
#include <string>

namespace wmtrig {

// Root of every error thrown by the toolkit. Callers that only need a
// message can catch this; the CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Input bytes that parse but are not something we can consume.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// A request that cannot be satisfied, e.g. more poison slots than
// non-target samples.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace wmtrig
