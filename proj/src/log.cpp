#include "dfr/log.hpp"

#include <atomic>
#include <chrono>
#include <ctime>
#include <iostream>
#include <mutex>

namespace dfr::log {

namespace {
std::atomic<int> g_level{static_cast<int>(Level::info)};
std::mutex g_mutex;

const char* level_name(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
  }
  return "info";
}

bool needs_quotes(std::string_view v) {
  if (v.empty()) return true;
  for (char c : v) {
    if (c == ' ' || c == '"' || c == '=') return true;
  }
  return false;
}
}  // namespace

void set_level(Level level) { g_level = static_cast<int>(level); }
Level level() { return static_cast<Level>(g_level.load()); }

void emit(Level lvl, std::string_view event,
          std::initializer_list<std::pair<std::string_view, std::string>> fields) {
  if (static_cast<int>(lvl) < g_level.load()) return;
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char ts[32];
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", &tm);

  std::ostringstream line;
  line << "level=" << level_name(lvl) << " ts=" << ts << " event=" << event;
  for (const auto& [key, value] : fields) {
    line << ' ' << key << '=';
    if (needs_quotes(value)) {
      line << '"';
      for (char c : value) {
        if (c == '"') line << '\\';
        line << c;
      }
      line << '"';
    } else {
      line << value;
    }
  }
  line << '\n';
  std::lock_guard lock(g_mutex);
  std::cerr << line.str();
}

}  // namespace dfr::log
