// Copyright (c) 2026, the memsave authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace memsave {

enum class ErrorCode {
  ShapeMismatch,
  DtypeMismatch,
  InvalidConfig,
  UnknownTensor,
  MissingSavedValue,
  UnknownLayerKind,
  UnknownNet,
  ShapePropagation,
  Io,
};

std::string_view error_code_name(ErrorCode code);

/// The single exception type raised by the library. `code()` identifies the
/// failure class; `what()` carries a human-readable message prefixed by it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::DtypeMismatch: return "DtypeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownTensor: return "UnknownTensor";
    case ErrorCode::MissingSavedValue: return "MissingSavedValue";
    case ErrorCode::UnknownLayerKind: return "UnknownLayerKind";
    case ErrorCode::UnknownNet: return "UnknownNet";
    case ErrorCode::ShapePropagation: return "ShapePropagationError";
    case ErrorCode::Io: return "IoError";
  }
  return "Error";
}

}  // namespace memsave
