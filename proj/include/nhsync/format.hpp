#pragma once

#include <string>
#include <string_view>

namespace nhsync {

// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace nhsync
