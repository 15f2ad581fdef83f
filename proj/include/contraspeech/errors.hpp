#pragma once

#include <stdexcept>
#include <string>

namespace contraspeech {

/// Broad failure categories. The CLI maps these onto process exit codes
/// (argument -> 2, io and format -> 3, everything else -> 4).
enum class ErrorKind {
  Dimension,
  InputTooShort,
  Config,
  Format,
  Io,
  Contract,
  Alignment,
  DegenerateSequence,
  InsufficientData,
  OracleScope,
  Argument,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension error";
    case ErrorKind::InputTooShort: return "input too short";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Format: return "format error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Contract: return "contract error";
    case ErrorKind::Alignment: return "alignment error";
    case ErrorKind::DegenerateSequence: return "degenerate sequence";
    case ErrorKind::InsufficientData: return "insufficient data";
    case ErrorKind::OracleScope: return "oracle scope error";
    case ErrorKind::Argument: return "argument error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace contraspeech
