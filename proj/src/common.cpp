#include "featdistill/common.hpp"

#include <cstdio>

namespace featdistill {

std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (const std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view text, std::uint64_t basis) noexcept {
    return fnv1a64(std::as_bytes(std::span(text.data(), text.size())), basis);
}

std::string to_hex(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    CompensatedSum sum;
    for (const double v : values) sum.add(v);
    const double mean = sum.value() / static_cast<double>(values.size());
    CompensatedSum sq;
    for (const double v : values) sq.add((v - mean) * (v - mean));
    return {mean, std::sqrt(sq.value() / static_cast<double>(values.size()))};
}

}  // namespace featdistill
