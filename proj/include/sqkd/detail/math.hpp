#pragma once

#include <cmath>
#include <cstdint>

namespace sqkd::detail {

inline constexpr double pi = 3.141592653589793238462643383279502884;

/// \brief Scaled complementary error function exp(x^2) erfc(x).
///
/// Stable for large positive arguments where erfc underflows; used to
/// evaluate exponentially modified Gaussian densities without overflow.
inline auto erfcx(double x) -> double {
    if (x < 0.0)
        return 2.0 * std::exp(x * x) - erfcx(-x);
    if (x <= 12.0)
        return std::exp(x * x) * std::erfc(x);
    // Asymptotic series 1/(x sqrt(pi)) (1 - 1/(2x^2) + 3/(4x^4) - ...).
    const double ix2 = 1.0 / (x * x);
    const double s =
        1.0 +
        ix2 * (-0.5 +
               ix2 * (0.75 +
                      ix2 * (-1.875 + ix2 * (6.5625 + ix2 * -29.53125))));
    return s / (x * std::sqrt(pi));
}

/// \brief Standard normal cumulative distribution function.
inline auto normal_cdf(double z) -> double {
    return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

/// \brief One step of the splitmix64 generator; advances state, returns output.
inline auto splitmix64(std::uint64_t &state) -> std::uint64_t {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// \brief Deterministic seed for substream \p stream of a run seeded with \p seed.
///
/// Parallel workers seed one generator per block from this function; the
/// produced stream depends only on (seed, stream), never on thread count.
inline auto derive_stream_seed(std::uint64_t seed, std::uint64_t stream)
    -> std::uint64_t {
    std::uint64_t s = seed ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    (void)splitmix64(s);
    return splitmix64(s);
}

/// \brief Uniform double in [0, 1) from the top 53 bits of a 64-bit draw.
template <typename Rng> auto uniform_unit(Rng &rng) -> double {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// \brief Exponential sample with the given mean, by inverse CDF.
template <typename Rng> auto sample_exponential(Rng &rng, double mean) -> double {
    return -mean * std::log1p(-uniform_unit(rng));
}

/// \brief Standard normal sample (Box-Muller, cosine branch only).
///
/// One value per call so every event consumes a fixed number of draws,
/// which keeps substream layouts reproducible.
template <typename Rng> auto sample_standard_normal(Rng &rng) -> double {
    const double u1 = 1.0 - uniform_unit(rng); // in (0, 1]
    const double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
}

} // namespace sqkd::detail
