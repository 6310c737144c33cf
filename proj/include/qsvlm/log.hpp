// Copyright 2026 The QSVLM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin logging front end. The backend lives in its own translation unit so
// that callers never see its formatting headers.

#pragma once

#include <string>

namespace qsvlm {

enum class LogLevel { kDebug, kInfo, kWarn, kError, kOff };

void log(LogLevel level, const std::string& message);
void set_log_level(LogLevel level);
/// "debug", "info", "warn", "error" or "off".
LogLevel parse_log_level(const std::string& name);

inline void log_debug(const std::string& message) { log(LogLevel::kDebug, message); }
inline void log_info(const std::string& message) { log(LogLevel::kInfo, message); }
inline void log_warn(const std::string& message) { log(LogLevel::kWarn, message); }

}  // namespace qsvlm
