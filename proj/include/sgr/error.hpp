// SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace sgr {

// Mirrors sgr_status in the C API; keep the numeric values in sync.
enum class ErrorCode : int {
  kOk = 0,
  kContract = 1,
  kNumeric = 2,
  kUnsupportedOp = 3,
  kFormat = 4,
  kIo = 5,
  kConfig = 6,
  kDegenerateEstimate = 7,
  kCapacity = 8,
  kInternal = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define SGR_DEFINE_ERROR(Name, Code)                                    \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  };

SGR_DEFINE_ERROR(ContractError, kContract)
SGR_DEFINE_ERROR(NumericError, kNumeric)
SGR_DEFINE_ERROR(UnsupportedOpError, kUnsupportedOp)
SGR_DEFINE_ERROR(FormatError, kFormat)
SGR_DEFINE_ERROR(IoError, kIo)
SGR_DEFINE_ERROR(ConfigError, kConfig)
SGR_DEFINE_ERROR(DegenerateEstimateError, kDegenerateEstimate)
SGR_DEFINE_ERROR(CapacityError, kCapacity)

#undef SGR_DEFINE_ERROR

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractError(message);
}

}  // namespace sgr
