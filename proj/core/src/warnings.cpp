#include "sgsw/warnings.hpp"

#include <iostream>
#include <mutex>

namespace sgsw {
namespace {

std::mutex& handler_mutex() {
  static std::mutex m;
  return m;
}

void print_warning(std::string_view msg) { std::cerr << "warning: " << msg << '\n'; }

WarningHandler& handler() {
  static WarningHandler h = print_warning;
  return h;
}

}  // namespace

void set_warning_handler(WarningHandler h) {
  std::lock_guard lock(handler_mutex());
  handler() = h ? std::move(h) : WarningHandler(print_warning);
}

void warn(std::string_view message) {
  std::lock_guard lock(handler_mutex());
  handler()(message);
}

}  // namespace sgsw
