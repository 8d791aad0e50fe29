#pragma once

#include "keyrate.hpp"
#include "pulse.hpp"
#include "simulate.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sqkd {

/// \brief Full source and receiver model for the reference tabletop setup:
/// 80 MHz excitation, mean photon number 0.0043 with g2(0) = 0.089, four
/// detectors at 14.22 % overall efficiency and 24.4 Hz dark counts each.
inline auto testbed_model() -> source_receiver_model {
    source_receiver_model m;
    m.mu = 0.0043;
    m.g2 = 0.089;
    m.channel_loss_db = 0.0;
    m.input_polarization = channel::h;
    m.crosstalk_q = 0.0048;
    m.detector_efficiency = {0.1422, 0.1422, 0.1422, 0.1422};
    m.dark_rate_hz = {24.4, 24.4, 24.4, 24.4};
    m.pulse = pulse_shape{1000.0, 500.0, 3000.0};
    m.clock = clock_config{12500};
    m.dead_time_ps = 0;
    return m;
}

/// \brief Key-rate parameters matching testbed_model(): the summed dark
/// probability per pulse is 4 * 24.4 Hz / 80 MHz = 1.22e-6.
inline auto testbed_key_rate_params() -> key_rate_params {
    return key_rate_params{};
}

/// \brief Operating points used for rate-loss comparisons: the unfiltered
/// window and two narrowed windows with their sifted fractions.
inline auto testbed_window_profiles() -> std::vector<window_profile> {
    std::vector<window_profile> profiles;
    profiles.push_back(window_profile{1.0, 1.0, std::nullopt, "full"});
    profiles.push_back(window_profile{0.55, 0.08, std::nullopt, "1ns"});
    profiles.push_back(window_profile{0.24, 0.02, std::nullopt, "0.25ns"});
    return profiles;
}

/// \brief Analytic arrival-time model for one of the four filter-benchmark
/// scenarios; index runs 1..4 over {short, long} lifetime x {low, high}
/// background as (1: short/low, 2: short/high, 3: long/low, 4: long/high).
inline auto fig5_model(int case_index) -> synthetic_channel_model {
    if (case_index < 1 || case_index > 4)
        throw std::invalid_argument("benchmark case index must be 1..4");
    const double decay_ps = (case_index == 3 || case_index == 4) ? 1500.0
                                                                 : 500.0;
    const double snr = (case_index == 2 || case_index == 4) ? 13.0 : 392.0;
    synthetic_channel_model m;
    m.signal = pulse_shape{decay_ps, 500.0, 5250.0};
    m.crosstalk_fraction = 0.01;
    m.noise_density_per_ps = noise_density_for_snr(snr, m.period_ps);
    m.train_length = 3;
    m.randomize_pileup = true;
    return m;
}

/// \brief Key-rate parameters used when optimizing the analytic benchmark
/// scenarios: an ideal single-photon source so the relative improvement is
/// governed purely by the arrival-time densities.
inline auto fig5_key_rate_params() -> key_rate_params {
    key_rate_params p;
    p.mu = 0.0043;
    p.g2 = 0.0;
    p.p_dc = 0.0;
    p.q = 0.01;
    p.f_ec = 1.16;
    return p;
}

/// \brief Maps a preset name of the form "fig5-caseN" to its case index.
inline auto find_fig5_case(std::string_view name) -> std::optional<int> {
    constexpr std::string_view prefix = "fig5-case";
    if (name.size() != prefix.size() + 1 ||
        name.substr(0, prefix.size()) != prefix)
        return std::nullopt;
    const char digit = name.back();
    if (digit < '1' || digit > '4')
        return std::nullopt;
    return digit - '0';
}

/// \brief Names accepted by the command-line --preset option.
inline auto preset_names() -> std::vector<std::string> {
    return {"testbed", "fig5-case1", "fig5-case2", "fig5-case3",
            "fig5-case4"};
}

} // namespace sqkd
