#include "amsq/units.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

namespace amsq {

namespace {

char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool is_alpha(char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; }

} // namespace

std::optional<double> parse_si_value(std::string_view text) {
    if (text.empty()) return std::nullopt;
    // from_chars does not accept a leading '+'
    std::string_view body = text;
    if (body.front() == '+') body.remove_prefix(1);
    if (body.empty()) return std::nullopt;

    double value = 0.0;
    const char* first = body.data();
    const char* last = body.data() + body.size();
    auto [ptr, ec] = std::from_chars(first, last, value, std::chars_format::general);
    if (ec != std::errc{} || ptr == first) return std::nullopt;

    std::string_view rest(ptr, static_cast<std::size_t>(last - ptr));
    double scale = 1.0;
    if (!rest.empty()) {
        if (rest.size() >= 3 && lower(rest[0]) == 'm' && lower(rest[1]) == 'e' && lower(rest[2]) == 'g') {
            scale = 1e6;
            rest.remove_prefix(3);
        } else {
            switch (lower(rest[0])) {
            case 'f': scale = 1e-15; break;
            case 'p': scale = 1e-12; break;
            case 'n': scale = 1e-9; break;
            case 'u': scale = 1e-6; break;
            case 'm': scale = 1e-3; break;
            case 'k': scale = 1e3; break;
            case 'g': scale = 1e9; break;
            case 't': scale = 1e12; break;
            default: scale = 1.0; break;
            }
            if (scale != 1.0) rest.remove_prefix(1);
        }
        for (char c : rest) {
            if (!is_alpha(c)) return std::nullopt;
        }
    }
    const double scaled = value * scale;
    if (!std::isfinite(scaled)) return std::nullopt;
    return scaled;
}

std::string format_number(double value) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    (void)ec;
    return std::string(buf.data(), ptr);
}

} // namespace amsq
