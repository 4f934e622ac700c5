#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rsens {

struct Estimate {
    double mean = 0.0;
    double se = 0.0;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UnsupportedError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mean and standard error (unbiased variance) in index order.
Estimate mean_and_se(std::span<const double> values);
double sample_mean(std::span<const double> values);

// Seeding. Every path draws from its own generator, so results never depend
// on how paths are split between threads.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t path_seed(std::uint64_t seed, std::uint64_t index);
// Master seed split per component: fnv1a64(name) XOR master.
std::uint64_t component_seed(std::uint64_t master, std::string_view component);

// Worker count for parallel_for; 0 selects hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

inline constexpr std::size_t kChunk = 1024;

// Runs body(begin, end) over fixed chunks of [0, n). Bodies must only write
// to slots owned by their range.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace rsens
