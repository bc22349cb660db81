#include "brewrank/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace brewrank::log {

namespace {
std::atomic<Level> g_level{Level::Warn};
std::mutex g_mutex;

void emit(Level at, const char* tag, std::string_view message) {
  if (static_cast<int>(g_level.load()) < static_cast<int>(at)) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[brewrank " << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void warn(std::string_view message) { emit(Level::Warn, "warn", message); }
void info(std::string_view message) { emit(Level::Info, "info", message); }
void debug(std::string_view message) { emit(Level::Debug, "debug", message); }

}  // namespace brewrank::log
