#pragma once

#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>

namespace dfr::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3 };

void set_level(Level level);
Level level();

// One structured line on stderr: level=... ts=... event=... key=value ...
void emit(Level level, std::string_view event,
          std::initializer_list<std::pair<std::string_view, std::string>> fields = {});

template <typename T>
std::string str(const T& value) {
  std::ostringstream os;
  os.precision(8);
  os << value;
  return os.str();
}

inline void info(std::string_view event,
                 std::initializer_list<std::pair<std::string_view, std::string>> fields = {}) {
  emit(Level::info, event, fields);
}
inline void warn(std::string_view event,
                 std::initializer_list<std::pair<std::string_view, std::string>> fields = {}) {
  emit(Level::warn, event, fields);
}
inline void debug(std::string_view event,
                  std::initializer_list<std::pair<std::string_view, std::string>> fields = {}) {
  emit(Level::debug, event, fields);
}

}  // namespace dfr::log
