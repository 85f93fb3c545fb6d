#pragma once

#include <stdexcept>
#include <string>

namespace spdelab {

// Every failure surfaced by the library derives from this so the CLI can map
// categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class RootBracketExhausted : public Error {
 public:
  using Error::Error;
};

class UnsupportedModel : public Error {
 public:
  using Error::Error;
};

class StiffnessFailure : public Error {
 public:
  using Error::Error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

// Raised when a coefficient becomes inf/nan during time stepping.
class NonFinite : public Error {
 public:
  NonFinite(const std::string& what, double t) : Error(what), time_(t) {}
  double time() const { return time_; }

 private:
  double time_;
};

class DegeneratePoints : public Error {
 public:
  using Error::Error;
};

class BracketNotFound : public Error {
 public:
  using Error::Error;
};

class UnknownEvent : public Error {
 public:
  using Error::Error;
};

}  // namespace spdelab
