#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace akb {

/// Base for every error raised by the library. `kind()` is the short tag
/// surfaced in the CLI's machine-readable error JSON.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what, std::string kind = "error")
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class shape_error : public error {
 public:
  explicit shape_error(const std::string& what) : error(what, "shape") {}
};

class invalid_argument : public error {
 public:
  explicit invalid_argument(const std::string& what) : error(what, "invalid_argument") {}
};

class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& what) : error(what, "numeric") {}
};

class corrupt_file_error : public error {
 public:
  corrupt_file_error(const std::string& what, std::uint64_t offset)
      : error(what + " (at byte offset " + std::to_string(offset) + ")", "corrupt_file"),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Raised by external providers; `retryable()` drives the backoff loop.
class provider_error : public error {
 public:
  provider_error(const std::string& what, bool retryable)
      : error(what, "provider"), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class config_error : public error {
 public:
  explicit config_error(const std::string& what) : error(what, "config") {}
};

}  // namespace akb
