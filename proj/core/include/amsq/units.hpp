#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace amsq {

// Parses a SPICE-style number with an optional SI suffix (f p n u m k meg g t,
// case-insensitive) followed by optional unit letters that are ignored, as in
// "10kohm" or "1pF". Returns nullopt on anything else or on non-finite values.
std::optional<double> parse_si_value(std::string_view text);

// Shortest decimal text that round-trips to the same double.
std::string format_number(double value);

} // namespace amsq
