#include "tie/log.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

namespace tie {

namespace {

std::optional<LogLevel>& override_level() {
  static std::optional<LogLevel> level;
  return level;
}

LogLevel from_env() {
  const char* raw = std::getenv("TIE_LOG");
  if (raw == nullptr) return LogLevel::info;
  const std::string value(raw);
  if (value == "debug") return LogLevel::debug;
  if (value == "warn") return LogLevel::warn;
  return LogLevel::info;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
  }
  return "info";
}

}  // namespace

LogLevel log_threshold() {
  if (override_level()) return *override_level();
  static const LogLevel env = from_env();
  return env;
}

void set_log_threshold(LogLevel level) { override_level() = level; }

void log_event(LogLevel level, std::string_view event, nlohmann::json fields) {
  if (static_cast<int>(level) < static_cast<int>(log_threshold())) return;
  nlohmann::json line = nlohmann::json::object();
  line["level"] = level_name(level);
  line["event"] = std::string(event);
  for (auto& [key, value] : fields.items()) line[key] = value;
  std::cerr << line.dump() << '\n';
}

}  // namespace tie
