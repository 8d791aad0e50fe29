#pragma once

#include "core.hpp"
#include "keyrate.hpp"
#include "pulse.hpp"
#include "simulate.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sqkd {

/// \brief 64-bit FNV-1a hash of a byte string.
inline auto fnv1a64(std::string_view bytes) -> std::uint64_t {
    std::uint64_t h = 14695981039346656037ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

/// \brief Hash of a JSON document over its canonical (sorted-key) dump,
/// rendered as 16 lowercase hex digits.
inline auto config_hash_hex(nlohmann::json const &j) -> std::string {
    const std::uint64_t h = fnv1a64(j.dump());
    std::ostringstream out;
    out << std::hex << std::nouppercase;
    out.width(16);
    out.fill('0');
    out << h;
    return out.str();
}

namespace detail {

inline auto quad_from_json(nlohmann::json const &j,
                           std::array<double, 4> const &base)
    -> std::array<double, 4> {
    if (j.is_number())
        return {j.get<double>(), j.get<double>(), j.get<double>(),
                j.get<double>()};
    if (j.is_array() && j.size() == 4) {
        std::array<double, 4> out{};
        for (std::size_t i = 0; i < 4; ++i)
            out[i] = j[i].get<double>();
        return out;
    }
    if (j.is_null())
        return base;
    throw std::invalid_argument(
        "per-channel value must be a number or an array of four numbers");
}

template <typename T>
void assign_if(nlohmann::json const &j, char const *key, T &target) {
    if (auto it = j.find(key); it != j.end() && !it->is_null())
        target = it->get<T>();
}

} // namespace detail

/// \brief Serializes a pulse shape to JSON.
inline auto pulse_to_json(pulse_shape const &p) -> nlohmann::json {
    return {{"decay_ps", p.decay_ps},
            {"irf_fwhm_ps", p.irf_fwhm_ps},
            {"origin_ps", p.origin_ps}};
}

/// \brief Reads a pulse shape from JSON, keeping base values for absent
/// keys.
inline auto pulse_from_json(nlohmann::json const &j,
                            pulse_shape base = pulse_shape{})
    -> pulse_shape {
    detail::assign_if(j, "decay_ps", base.decay_ps);
    detail::assign_if(j, "irf_fwhm_ps", base.irf_fwhm_ps);
    detail::assign_if(j, "origin_ps", base.origin_ps);
    return base;
}

/// \brief Serializes a source and receiver model to JSON.
inline auto model_to_json(source_receiver_model const &m) -> nlohmann::json {
    return {{"mu", m.mu},
            {"g2", m.g2},
            {"channel_loss_db", m.channel_loss_db},
            {"input_polarization", to_string(m.input_polarization)},
            {"crosstalk_q", m.crosstalk_q},
            {"detector_efficiency", m.detector_efficiency},
            {"dark_rate_hz", m.dark_rate_hz},
            {"pulse", pulse_to_json(m.pulse)},
            {"period_ps", m.clock.period_ps},
            {"dead_time_ps", m.dead_time_ps}};
}

/// \brief Reads a source and receiver model from JSON, keeping base values
/// for absent keys. Detector efficiencies and dark rates accept either a
/// single number (applied to all channels) or an array of four.
inline auto model_from_json(nlohmann::json const &j,
                            source_receiver_model base =
                                source_receiver_model{})
    -> source_receiver_model {
    detail::assign_if(j, "mu", base.mu);
    detail::assign_if(j, "g2", base.g2);
    detail::assign_if(j, "channel_loss_db", base.channel_loss_db);
    if (auto it = j.find("input_polarization"); it != j.end())
        base.input_polarization = parse_channel(it->get<std::string>());
    detail::assign_if(j, "crosstalk_q", base.crosstalk_q);
    if (auto it = j.find("detector_efficiency"); it != j.end())
        base.detector_efficiency =
            detail::quad_from_json(*it, base.detector_efficiency);
    if (auto it = j.find("dark_rate_hz"); it != j.end())
        base.dark_rate_hz = detail::quad_from_json(*it, base.dark_rate_hz);
    if (auto it = j.find("pulse"); it != j.end())
        base.pulse = pulse_from_json(*it, base.pulse);
    detail::assign_if(j, "period_ps", base.clock.period_ps);
    detail::assign_if(j, "dead_time_ps", base.dead_time_ps);
    return base;
}

/// \brief Serializes key-rate parameters to JSON.
inline auto params_to_json(key_rate_params const &p) -> nlohmann::json {
    return {{"mu", p.mu},
            {"g2", p.g2},
            {"p_dc", p.p_dc},
            {"q", p.q},
            {"f_ec", p.f_ec},
            {"eta_bob", p.eta_bob},
            {"period_ps", p.clock.period_ps},
            {"tau_argument_plain_e", p.tau_argument_plain_e}};
}

/// \brief Reads key-rate parameters from JSON, keeping base values for
/// absent keys.
inline auto params_from_json(nlohmann::json const &j,
                             key_rate_params base = key_rate_params{})
    -> key_rate_params {
    detail::assign_if(j, "mu", base.mu);
    detail::assign_if(j, "g2", base.g2);
    detail::assign_if(j, "p_dc", base.p_dc);
    detail::assign_if(j, "q", base.q);
    detail::assign_if(j, "f_ec", base.f_ec);
    detail::assign_if(j, "eta_bob", base.eta_bob);
    detail::assign_if(j, "period_ps", base.clock.period_ps);
    detail::assign_if(j, "tau_argument_plain_e", base.tau_argument_plain_e);
    return base;
}

/// \brief Serializes a synthetic arrival-time model to JSON.
inline auto synthetic_to_json(synthetic_channel_model const &m)
    -> nlohmann::json {
    return {{"signal", pulse_to_json(m.signal)},
            {"crosstalk_fraction", m.crosstalk_fraction},
            {"noise_density_per_ps", m.noise_density_per_ps},
            {"train_length", m.train_length},
            {"period_ps", m.period_ps},
            {"randomize_pileup", m.randomize_pileup}};
}

/// \brief Reads a synthetic arrival-time model from JSON, keeping base
/// values for absent keys.
inline auto synthetic_from_json(nlohmann::json const &j,
                                synthetic_channel_model base =
                                    synthetic_channel_model{})
    -> synthetic_channel_model {
    if (auto it = j.find("signal"); it != j.end())
        base.signal = pulse_from_json(*it, base.signal);
    detail::assign_if(j, "crosstalk_fraction", base.crosstalk_fraction);
    detail::assign_if(j, "noise_density_per_ps", base.noise_density_per_ps);
    detail::assign_if(j, "train_length", base.train_length);
    detail::assign_if(j, "period_ps", base.period_ps);
    detail::assign_if(j, "randomize_pileup", base.randomize_pileup);
    return base;
}

/// \brief Loads and parses a JSON file. Throws std::runtime_error when the
/// file cannot be opened and std::invalid_argument when it is not valid
/// JSON.
inline auto load_json_file(std::string const &path) -> nlohmann::json {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config file: " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (nlohmann::json::parse_error const &e) {
        throw std::invalid_argument("invalid JSON in " + path + ": " +
                                    e.what());
    }
}

/// \brief Path of the metadata sidecar written next to an output file.
inline auto sidecar_path(std::string const &output_path) -> std::string {
    return output_path + ".meta.json";
}

/// \brief Writes the resolved-configuration sidecar for an output file.
/// The sidecar holds the full effective configuration and its hash; it
/// carries no timestamps so reruns are byte-identical.
inline void write_sidecar(std::string const &output_path,
                          nlohmann::json const &resolved) {
    nlohmann::json doc{{"config", resolved},
                       {"config_hash", config_hash_hex(resolved)}};
    const std::string path = sidecar_path(output_path);
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write sidecar: " + path);
    out << doc.dump(2) << '\n';
    if (!out)
        throw std::runtime_error("failed writing sidecar: " + path);
}

} // namespace sqkd
