#pragma once

#include <string_view>

namespace psycode {

enum class LogLevel { debug, info, warning, error, quiet };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_info(std::string_view msg);
void log_warning(std::string_view msg);

}  // namespace psycode
