#pragma once

#include <cstdint>

namespace splitflow {

// Simulation clock: integer nanoseconds since simulation start.
using SimTime = std::int64_t;
using Duration = std::int64_t;

constexpr Duration kNanosecond = 1;
constexpr Duration kMicrosecond = 1'000;
constexpr Duration kMillisecond = 1'000'000;
constexpr Duration kSecond = 1'000'000'000;

constexpr Duration msec(std::int64_t v) { return v * kMillisecond; }
constexpr Duration usec(std::int64_t v) { return v * kMicrosecond; }
constexpr Duration sec(std::int64_t v) { return v * kSecond; }

constexpr double to_seconds(Duration d) { return static_cast<double>(d) / kSecond; }
constexpr Duration from_seconds(double s) { return static_cast<Duration>(s * kSecond + 0.5); }

}  // namespace splitflow
