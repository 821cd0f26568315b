#include "sifd/common.hpp"

#include <charconv>
#include <system_error>

namespace sifd {

uint64_t fnv1a64(std::string_view s) {
    Fnv1a h;
    h.update(s);
    return h.value();
}

std::string to_hex(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

std::string Fnv1a::hex() const {
    return to_hex(hash_);
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        return "nan";
    }
    return std::string(buf, ptr);
}

double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw DataError("could not parse number '" + std::string(s) + "' in " + std::string(what));
    }
    return v;
}

}  // namespace sifd
