#pragma once

#include "core.hpp"
#include "detail/math.hpp"
#include "pulse.hpp"
#include "ttag_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <thread>
#include <vector>

namespace sqkd {

/// \brief Emission-number probabilities of a sub-Poissonian pulsed source,
/// truncated at two photons: P(2) = mu^2 g2 / 2, P(1) = mu - 2 P(2).
struct photon_number_probs {
    double p0 = 1.0;
    double p1 = 0.0;
    double p2 = 0.0;
};

inline auto photon_number_distribution(double mu, double g2)
    -> photon_number_probs {
    if (!(mu >= 0.0) || !(g2 >= 0.0))
        throw std::invalid_argument("mu and g2 must be non-negative");
    photon_number_probs p;
    p.p2 = 0.5 * mu * mu * g2;
    p.p1 = mu - 2.0 * p.p2;
    p.p0 = 1.0 - p.p1 - p.p2;
    if (!(p.p1 >= 0.0 && p.p1 <= 1.0) || !(p.p2 >= 0.0 && p.p2 <= 1.0) ||
        !(p.p0 >= 0.0 && p.p0 <= 1.0))
        throw std::invalid_argument(
            "mu and g2 give no valid two-photon-truncated distribution");
    return p;
}

/// \brief Probability that a transmitted photon of the given input
/// polarization lands on each detector port: passive basis choice, then a
/// crosstalk_q chance of the wrong port in the matching basis.
inline auto routing_weights(channel input_polarization, double crosstalk_q)
    -> std::array<double, 4> {
    if (!(crosstalk_q >= 0.0 && crosstalk_q < 0.5))
        throw std::invalid_argument("crosstalk must be in [0, 0.5)");
    std::array<double, 4> w{};
    const int correct = static_cast<int>(input_polarization);
    const int wrong = static_cast<int>(conjugate_of(input_polarization));
    w[correct] = 0.5 * (1.0 - crosstalk_q);
    w[wrong] = 0.5 * crosstalk_q;
    for (int c = 0; c < channel_count; ++c)
        if (c != correct && c != wrong)
            w[c] = 0.25;
    return w;
}

/// \brief Full source-channel-receiver description for time-tag generation.
struct source_receiver_model {
    /// Mean photon number per pulse entering the channel.
    double mu = 0.0043;
    /// Second-order autocorrelation at zero delay.
    double g2 = 0.089;
    /// Variable channel attenuation.
    double channel_loss_db = 0.0;
    /// Prepared polarization of every pulse.
    channel input_polarization = channel::h;
    /// Wrong-port routing probability in the matching basis.
    double crosstalk_q = 0.0048;
    /// Per-detector efficiency (includes receiver optics).
    std::array<double, 4> detector_efficiency{1.0, 1.0, 1.0, 1.0};
    /// Per-detector dark count rate.
    std::array<double, 4> dark_rate_hz{0.0, 0.0, 0.0, 0.0};
    /// Detection-time distribution within the period: exponential decay
    /// convolved with Gaussian jitter, offset to origin_ps.
    pulse_shape pulse{500.0, 500.0, 3000.0};
    clock_config clock{12500};
    /// Per-detector dead time; zero disables it.
    std::uint64_t dead_time_ps = 0;

    void validate() const {
        (void)photon_number_distribution(mu, g2);
        (void)routing_weights(input_polarization, crosstalk_q);
        if (!(channel_loss_db >= 0.0))
            throw std::invalid_argument("loss must be non-negative");
        for (double e : detector_efficiency)
            if (!(e >= 0.0 && e <= 1.0))
                throw std::invalid_argument(
                    "detector efficiency must be in [0, 1]");
        for (double r : dark_rate_hz)
            if (!(r >= 0.0))
                throw std::invalid_argument(
                    "dark rate must be non-negative");
        pulse.validate();
        if (clock.period_ps == 0)
            throw std::invalid_argument("period must be positive");
    }
};

struct simulation_options {
    double duration_s = 1.0;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

/// \brief Analytic per-channel click rates and derived per-pulse
/// probabilities for a model, used to cross-check simulations.
struct rate_prediction {
    std::array<double, 4> rate_hz{};
    /// Signal-plus-dark error fraction in the sifting basis.
    double qber = 0.0;
    /// Per-pulse detected-signal probability summed over channels.
    double p_signal_per_pulse = 0.0;
    /// Per-pulse dark probability summed over channels.
    double p_dark_per_pulse = 0.0;
    /// Per-pulse any-click probability.
    double p_click_per_pulse = 0.0;
    double total_rate_hz = 0.0;
};

inline auto expected_rates(source_receiver_model const &model)
    -> rate_prediction {
    model.validate();
    const double transmission =
        std::pow(10.0, -model.channel_loss_db / 10.0);
    const auto w =
        routing_weights(model.input_polarization, model.crosstalk_q);
    const double rep = model.clock.repetition_rate_hz();
    const double period_s = 1.0 / rep;
    rate_prediction out;
    for (int c = 0; c < channel_count; ++c) {
        const double signal = model.mu * transmission * w[c] *
                              model.detector_efficiency[c];
        out.p_signal_per_pulse += signal;
        out.p_dark_per_pulse += model.dark_rate_hz[c] * period_s;
        out.rate_hz[c] = signal * rep + model.dark_rate_hz[c];
        out.total_rate_hz += out.rate_hz[c];
    }
    const double right =
        out.rate_hz[static_cast<int>(model.input_polarization)];
    const double wrong = out.rate_hz[static_cast<int>(
        conjugate_of(model.input_polarization))];
    out.qber = right + wrong > 0.0 ? wrong / (right + wrong) : 0.0;
    out.p_click_per_pulse = out.p_signal_per_pulse + out.p_dark_per_pulse -
                            out.p_signal_per_pulse * out.p_dark_per_pulse;
    return out;
}

namespace detail {

/// Precomputed per-period quantities shared by all simulation blocks.
struct sim_derived {
    double transmission = 1.0;
    photon_number_probs probs;
    std::array<double, 4> routing{};
    std::array<double, 4> routing_cdf{};
    double eta_mix = 0.0; // sum of routing * efficiency
    std::array<double, 4> detected_port_cdf{};
    double p_single_detected = 0.0;
    double log1m_p2 = 0.0;
    double log1m_p1d = 0.0;
};

inline auto derive(source_receiver_model const &model) -> sim_derived {
    sim_derived d;
    d.transmission = std::pow(10.0, -model.channel_loss_db / 10.0);
    d.probs = photon_number_distribution(model.mu, model.g2);
    d.routing = routing_weights(model.input_polarization, model.crosstalk_q);
    double acc = 0.0;
    for (int c = 0; c < channel_count; ++c) {
        acc += d.routing[c];
        d.routing_cdf[c] = acc;
        d.eta_mix += d.routing[c] * model.detector_efficiency[c];
    }
    d.routing_cdf[3] = 1.0;
    acc = 0.0;
    for (int c = 0; c < channel_count; ++c) {
        acc += d.eta_mix > 0.0
                   ? d.routing[c] * model.detector_efficiency[c] / d.eta_mix
                   : 0.25;
        d.detected_port_cdf[c] = acc;
    }
    d.detected_port_cdf[3] = 1.0;
    d.p_single_detected = d.probs.p1 * d.transmission * d.eta_mix;
    d.log1m_p2 = d.probs.p2 > 0.0 ? std::log1p(-d.probs.p2) : 0.0;
    d.log1m_p1d =
        d.p_single_detected > 0.0 ? std::log1p(-d.p_single_detected) : 0.0;
    return d;
}

constexpr std::uint64_t sim_block_periods = std::uint64_t{1} << 24;
constexpr std::uint64_t sim_no_event =
    std::numeric_limits<std::uint64_t>::max();

/// Periods skipped before the next success of probability p, where
/// log1m_p = log1p(-p); the sentinel marks "never".
template <typename Rng>
auto geometric_skip(Rng &rng, double log1m_p) -> std::uint64_t {
    if (log1m_p >= 0.0)
        return sim_no_event;
    const double e = -std::log1p(-uniform_unit(rng));
    const double k = std::floor(e / -log1m_p);
    if (!(k < 9e18))
        return sim_no_event;
    return static_cast<std::uint64_t>(k);
}

template <typename Rng>
auto pick_port(Rng &rng, std::array<double, 4> const &cdf) -> int {
    const double u = uniform_unit(rng);
    for (int c = 0; c < 3; ++c)
        if (u < cdf[c])
            return c;
    return 3;
}

inline auto simulate_block(source_receiver_model const &model,
                           sim_derived const &d, std::uint64_t seed,
                           std::uint64_t block_index,
                           std::uint64_t first_period,
                           std::uint64_t n_periods) -> std::vector<time_tag> {
    std::mt19937_64 rng(derive_stream_seed(seed, block_index));
    std::vector<time_tag> tags;
    const auto period = static_cast<std::int64_t>(model.clock.period_ps);
    const std::int64_t block_base =
        static_cast<std::int64_t>(first_period) * period;

    auto emit = [&](std::uint64_t offset, int port) {
        const double t = sample_arrival_time(model.pulse, rng);
        const std::int64_t stamp = block_base +
                                   static_cast<std::int64_t>(offset) * period +
                                   std::llround(t);
        if (stamp >= 0)
            tags.push_back({static_cast<std::uint64_t>(stamp),
                            static_cast<channel>(port)});
    };

    // Two-photon periods.
    std::vector<std::uint64_t> two_photon_offsets;
    for (std::uint64_t off = geometric_skip(rng, d.log1m_p2);
         off < n_periods; ) {
        two_photon_offsets.push_back(off);
        for (int photon = 0; photon < 2; ++photon) {
            if (uniform_unit(rng) >= d.transmission)
                continue;
            const int port = pick_port(rng, d.routing_cdf);
            if (uniform_unit(rng) >= model.detector_efficiency[port])
                continue;
            emit(off, port);
        }
        const auto skip = geometric_skip(rng, d.log1m_p2);
        if (skip == sim_no_event)
            break;
        off += 1 + skip;
    }

    // Detected single-photon periods.
    for (std::uint64_t off = geometric_skip(rng, d.log1m_p1d);
         off < n_periods; ) {
        if (!std::binary_search(two_photon_offsets.begin(),
                                two_photon_offsets.end(), off)) {
            const int port = pick_port(rng, d.detected_port_cdf);
            emit(off, port);
        }
        const auto skip = geometric_skip(rng, d.log1m_p1d);
        if (skip == sim_no_event)
            break;
        off += 1 + skip;
    }

    // Dark counts: homogeneous Poisson per channel over the block span.
    const double span_ps =
        static_cast<double>(n_periods) * static_cast<double>(period);
    for (int c = 0; c < channel_count; ++c) {
        const double rate = model.dark_rate_hz[c];
        if (rate <= 0.0)
            continue;
        const double mean_gap_ps = 1e12 / rate;
        for (double t = sample_exponential(rng, mean_gap_ps); t < span_ps;
             t += sample_exponential(rng, mean_gap_ps)) {
            const std::int64_t stamp = block_base + std::llround(t);
            if (stamp >= 0)
                tags.push_back({static_cast<std::uint64_t>(stamp),
                                static_cast<channel>(c)});
        }
    }
    return tags;
}

} // namespace detail

/// \brief Generate a detection time-tag stream for the model.
///
/// Work is split into fixed blocks of 2^24 periods, each driven by its own
/// seed-derived generator, so results are identical for any thread count.
inline auto simulate(source_receiver_model const &model,
                     simulation_options const &options) -> tag_stream {
    model.validate();
    if (!(options.duration_s > 0.0))
        throw std::invalid_argument("duration must be positive");
    const auto d = detail::derive(model);
    const auto n_periods = static_cast<std::uint64_t>(
        std::llround(options.duration_s * model.clock.repetition_rate_hz()));
    if (n_periods == 0)
        throw std::invalid_argument("duration shorter than one period");
    const std::uint64_t n_blocks =
        (n_periods + detail::sim_block_periods - 1) /
        detail::sim_block_periods;

    std::vector<std::vector<time_tag>> blocks(n_blocks);
    const unsigned threads =
        std::max(1u, std::min<unsigned>(options.threads,
                                        static_cast<unsigned>(n_blocks)));
    auto worker = [&](unsigned tid) {
        for (std::uint64_t b = tid; b < n_blocks; b += threads) {
            const std::uint64_t first = b * detail::sim_block_periods;
            const std::uint64_t count =
                std::min(detail::sim_block_periods, n_periods - first);
            blocks[b] = detail::simulate_block(model, d, options.seed, b,
                                               first, count);
        }
    };
    if (threads == 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back(worker, t);
        for (auto &t : pool)
            t.join();
    }

    std::size_t total = 0;
    for (auto const &b : blocks)
        total += b.size();
    tag_stream stream;
    stream.clock = model.clock;
    stream.tags.reserve(total);
    for (auto &b : blocks) {
        stream.tags.insert(stream.tags.end(), b.begin(), b.end());
        std::vector<time_tag>().swap(b);
    }
    std::sort(stream.tags.begin(), stream.tags.end(),
              [](time_tag const &a, time_tag const &b) {
                  return time_tag_order{}(a, b);
              });

    if (model.dead_time_ps > 0) {
        std::array<std::optional<std::uint64_t>, 4> last{};
        std::vector<time_tag> kept;
        kept.reserve(stream.tags.size());
        for (auto const &tag : stream.tags) {
            auto &prev = last[static_cast<int>(tag.ch)];
            if (!prev || tag.timestamp_ps - *prev >= model.dead_time_ps) {
                kept.push_back(tag);
                prev = tag.timestamp_ps;
            }
        }
        stream.tags = std::move(kept);
    }
    return stream;
}

} // namespace sqkd
