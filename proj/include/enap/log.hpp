#pragma once

#include <string>

namespace enap {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

// Read once from ENAP_LOG (debug|info|warn|error|off); defaults to warn.
LogLevel log_level();
void set_log_level(LogLevel level);

void log_at(LogLevel level, const std::string& msg);
inline void log_debug(const std::string& m) { log_at(LogLevel::Debug, m); }
inline void log_info(const std::string& m) { log_at(LogLevel::Info, m); }
inline void log_warn(const std::string& m) { log_at(LogLevel::Warn, m); }

}  // namespace enap
