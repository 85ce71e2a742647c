#pragma once

#include <functional>
#include <string_view>

namespace sgsw {

/// Non-fatal conditions (CSP violation, clamped heights, dropped particles)
/// go through this hook. The default writes "warning: ..." to stderr; an
/// empty handler restores it.
using WarningHandler = std::function<void(std::string_view)>;

void set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace sgsw
