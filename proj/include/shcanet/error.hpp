#pragma once

#include <stdexcept>
#include <string>

namespace shcanet {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied something malformed: bad shapes, bad file contents, bad config.
// The CLI maps this to exit code 2.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// The environment failed us: missing file, unwritable directory, non-finite loss.
// The CLI maps this to exit code 1.
class OperationalError : public Error {
 public:
  using Error::Error;
};

[[noreturn]] inline void fail_input(const std::string& what) { throw InvalidInput(what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace shcanet
