#ifndef TIE_LOG_HPP
#define TIE_LOG_HPP

#include <json.hpp>

#include <string_view>

namespace tie {

enum class LogLevel { debug = 0, info = 1, warn = 2 };

/// Threshold read once from TIE_LOG (debug|info|warn); defaults to info.
LogLevel log_threshold();
void set_log_threshold(LogLevel level);

/// Emits one JSON object per line on stderr.
void log_event(LogLevel level, std::string_view event, nlohmann::json fields = nlohmann::json::object());

}  // namespace tie

#endif  // TIE_LOG_HPP
