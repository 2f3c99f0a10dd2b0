#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace geosem {

// Raised for malformed user input (files, configs, CLI arguments).
// The CLI maps these to exit code 1; every other exception exits 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raw-byte form under its own name: a string literal passed with a carry
// state must never bind to the pointer overload with the state as a size.
std::uint64_t fnv1a64_bytes(const void* data, std::size_t size,
                            std::uint64_t state = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(std::string_view text,
                      std::uint64_t state = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t value);

// Deterministic RNG. mt19937_64 has a fully specified stream, and the
// helpers below avoid std distributions so draws are identical across
// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform index in [0, n), rejection sampled.
    std::size_t index(std::size_t n);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

std::string trim(std::string_view text);

// Minimal RFC-4180 field handling: quoted fields with embedded commas and
// doubled quotes. Multi-line fields are not supported.
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_field(const std::string& value);

// Shortest representation that round-trips exactly (std::to_chars).
std::string format_double(double value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& contents);

}  // namespace geosem
