#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace msdml {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad invocation: missing flags, unknown subcommand, invalid configuration.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Bad data: corrupt audio, corrupt store, unknown class, too-small class.
class DataError : public Error {
 public:
  using Error::Error;
};

// Tensor or configuration shapes that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

}  // namespace detail

template <typename E = Error, typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw E(detail::concat(std::forward<Args>(args)...));
}

template <typename E = Error, typename... Args>
void require(bool cond, Args&&... args) {
  if (!cond) fail<E>(std::forward<Args>(args)...);
}

}  // namespace msdml
