#pragma once

#include <stdexcept>
#include <string>

namespace citta {

// Caller passed something outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An external model process or socket timed out or broke protocol.
class BackendFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CorruptModel : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace citta
