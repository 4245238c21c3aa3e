#include "bamifun/errors.hpp"

#include <iostream>
#include <mutex>

namespace bamifun {
namespace {

thread_local WarningCapture* active_capture = nullptr;

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

std::function<void(const std::string&)>& global_sink() {
  static std::function<void(const std::string&)> sink;
  return sink;
}

}  // namespace

WarningCapture::WarningCapture() : previous_(active_capture) { active_capture = this; }

WarningCapture::~WarningCapture() { active_capture = previous_; }

bool WarningCapture::contains(const std::string& fragment) const {
  for (const auto& m : messages_) {
    if (m.find(fragment) != std::string::npos) return true;
  }
  return false;
}

void warn(const std::string& message) {
  if (active_capture != nullptr) {
    active_capture->messages_.push_back(message);
    return;
  }
  std::lock_guard<std::mutex> lock(sink_mutex());
  if (global_sink()) {
    global_sink()(message);
  } else {
    std::cerr << "bamifun: warning: " << message << '\n';
  }
}

void set_warning_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard<std::mutex> lock(sink_mutex());
  global_sink() = std::move(sink);
}

}  // namespace bamifun
