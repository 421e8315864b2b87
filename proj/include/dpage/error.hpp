#pragma once

#include <stdexcept>
#include <string>

namespace dpage {

// Error categories double as CLI exit codes.
enum class ErrorKind : int {
  io = 1,
  config = 2,
  contract = 2,
  dimension = 2,
  domain = 2,
  data_format = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

  // Short machine-readable tag printed ahead of the message.
  virtual const char* code() const noexcept { return "E_INTERNAL"; }

 private:
  ErrorKind kind_;
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
  const char* code() const noexcept override { return "E_IO"; }
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
  const char* code() const noexcept override { return "E_CONFIG"; }
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
  const char* code() const noexcept override { return "E_CONTRACT"; }
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension, what) {}
  const char* code() const noexcept override { return "E_DIMENSION"; }
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
  const char* code() const noexcept override { return "E_DOMAIN"; }
};

class DataFormatError : public Error {
 public:
  explicit DataFormatError(const std::string& what) : Error(ErrorKind::data_format, what) {}
  const char* code() const noexcept override { return "E_DATA_FORMAT"; }
};

}  // namespace dpage
