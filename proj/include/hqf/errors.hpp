// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hqf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category used in CLI error records.
  virtual const char* kind() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dimension_error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

/// A caller broke a documented precondition (e.g. an all-blocked mask row).
class ContractError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "contract_error"; }
};

class GenerationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "generation_error"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "format_error"; }
};

}  // namespace hqf
