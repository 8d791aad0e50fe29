#pragma once

#include "core.hpp"
#include "detail/math.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqkd {

/// \brief Exponential decay convolved with a Gaussian instrument response.
///
/// The density is the exponentially modified Gaussian with decay time
/// decay_ps, Gaussian FWHM irf_fwhm_ps, and onset origin_ps.
struct pulse_shape {
    double decay_ps = 500.0;
    double irf_fwhm_ps = 500.0;
    double origin_ps = 0.0;

    [[nodiscard]] auto sigma_ps() const -> double {
        return irf_fwhm_ps / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    }

    void validate() const {
        if (!(decay_ps > 0.0))
            throw std::invalid_argument("pulse decay time must be positive");
        if (!(irf_fwhm_ps >= 0.0))
            throw std::invalid_argument("pulse IRF FWHM must be non-negative");
        if (!std::isfinite(origin_ps))
            throw std::invalid_argument("pulse origin must be finite");
    }
};

/// \brief Probability density of the pulse shape at time t (per ps).
///
/// Evaluated through erfcx so that both tails stay finite for any
/// parameter combination in the supported range.
inline auto emg_density(pulse_shape const &shape, double t) -> double {
    shape.validate();
    const double tau = shape.decay_ps;
    const double sigma = shape.sigma_ps();
    const double x = t - shape.origin_ps;
    if (sigma == 0.0)
        return x < 0.0 ? 0.0 : std::exp(-x / tau) / tau;
    const double u = x / sigma;
    const double r = sigma / tau;
    const double a = (r - u) / std::sqrt(2.0);
    if (a >= 0.0)
        return 0.5 / tau * std::exp(-0.5 * u * u) * detail::erfcx(a);
    // Right tail: split off the pure exponential factor, which cannot
    // overflow here because r^2/2 - u r < 0 when u > r.
    return std::exp(0.5 * r * r - u * r) / tau -
           0.5 / tau * std::exp(-0.5 * u * u) * detail::erfcx(-a);
}

/// \brief Cumulative distribution of the pulse shape at time t.
inline auto emg_cdf(pulse_shape const &shape, double t) -> double {
    shape.validate();
    const double tau = shape.decay_ps;
    const double sigma = shape.sigma_ps();
    const double x = t - shape.origin_ps;
    if (sigma == 0.0)
        return x < 0.0 ? 0.0 : -std::expm1(-x / tau);
    const double u = x / sigma;
    const double r = sigma / tau;
    const double a = (r - u) / std::sqrt(2.0);
    if (a >= 0.0)
        return detail::normal_cdf(u) -
               0.5 * std::exp(-0.5 * u * u) * detail::erfcx(a);
    return detail::normal_cdf(u) - std::exp(0.5 * r * r - u * r) +
           0.5 * std::exp(-0.5 * u * u) * detail::erfcx(-a);
}

/// \brief Draw one arrival time from the pulse density.
///
/// Exact sampling: origin + exponential decay draw + Gaussian IRF draw. The
/// Gaussian draw happens even for zero IRF width so that every sample
/// consumes the same number of generator values.
template <typename Rng>
auto sample_arrival_time(pulse_shape const &shape, Rng &rng) -> double {
    const double decay = detail::sample_exponential(rng, shape.decay_ps);
    const double jitter =
        shape.sigma_ps() * detail::sample_standard_normal(rng);
    return shape.origin_ps + decay + jitter;
}

/// \brief Expected-value histogram over one clock period (real-valued bins).
struct density_histogram {
    std::uint64_t period_ps = 12500;
    std::uint32_t bin_width_ps = 25;
    std::vector<double> values;

    [[nodiscard]] auto n_bins() const -> std::size_t { return values.size(); }
};

/// \brief Analytic model of one correct/wrong channel pair for a pulsed
/// source with uniform background noise.
///
/// The signal pulse has unit area; noise_density_per_ps is expressed in the
/// same normalization. With randomize_pileup the neighbouring pulses of the
/// train carry random bits: they contribute half their density to both
/// channels instead of following the central pulse's polarization.
struct synthetic_channel_model {
    pulse_shape signal;
    double crosstalk_fraction = 0.01;
    double noise_density_per_ps = 0.0;
    int train_length = 3;
    std::uint64_t period_ps = 12500;
    bool randomize_pileup = false;

    void validate() const {
        signal.validate();
        if (!(crosstalk_fraction >= 0.0 && crosstalk_fraction < 1.0))
            throw std::invalid_argument("crosstalk fraction must be in [0, 1)");
        if (!(noise_density_per_ps >= 0.0))
            throw std::invalid_argument("noise density must be non-negative");
        if (train_length < 1 || train_length % 2 == 0)
            throw std::invalid_argument("train length must be odd and >= 1");
        if (period_ps == 0)
            throw std::invalid_argument("period must be positive");
    }
};

/// \brief Noise density (per ps) for a target in-channel signal-to-noise
/// ratio, defined as signal area per pulse over noise area per period.
inline auto noise_density_for_snr(double snr, std::uint64_t period_ps)
    -> double {
    if (!(snr > 0.0) || period_ps == 0)
        throw std::invalid_argument("SNR and period must be positive");
    return 1.0 / (snr * static_cast<double>(period_ps));
}

/// \brief In-channel signal-to-noise ratio of a model (unit pulse area over
/// noise area per period); unbounded marker for zero noise.
inline auto snr_of(synthetic_channel_model const &model) -> double {
    model.validate();
    if (model.noise_density_per_ps == 0.0)
        return std::numeric_limits<double>::infinity();
    return 1.0 /
           (model.noise_density_per_ps * static_cast<double>(model.period_ps));
}

/// \brief Correct- and wrong-channel expected histograms over the central
/// period.
struct synthetic_histogram_pair {
    density_histogram correct;
    density_histogram wrong;
};

/// \brief Evaluate the analytic channel pair on a bin grid, using exact CDF
/// differences per bin.
inline auto synthetic_histograms(synthetic_channel_model const &model,
                                 std::uint32_t bin_width_ps)
    -> synthetic_histogram_pair {
    model.validate();
    if (bin_width_ps == 0)
        throw std::invalid_argument("bin width must be positive");
    const auto period = static_cast<double>(model.period_ps);
    const std::size_t n_bins = static_cast<std::size_t>(
        (model.period_ps + bin_width_ps - 1) / bin_width_ps);
    synthetic_histogram_pair out;
    for (auto *hist : {&out.correct, &out.wrong}) {
        hist->period_ps = model.period_ps;
        hist->bin_width_ps = bin_width_ps;
        hist->values.assign(n_bins, 0.0);
    }
    const int half_train = (model.train_length - 1) / 2;
    for (std::size_t b = 0; b < n_bins; ++b) {
        const double lo = static_cast<double>(b) * bin_width_ps;
        const double hi =
            std::min(lo + static_cast<double>(bin_width_ps), period);
        double central = 0.0;
        double neighbours = 0.0;
        for (int k = -half_train; k <= half_train; ++k) {
            const double shift = static_cast<double>(k) * period;
            const double area = emg_cdf(model.signal, hi - shift) -
                                emg_cdf(model.signal, lo - shift);
            if (k == 0)
                central += area;
            else
                neighbours += area;
        }
        const double noise =
            model.noise_density_per_ps * (hi - lo);
        if (model.randomize_pileup) {
            out.correct.values[b] = central + 0.5 * neighbours + noise;
            out.wrong.values[b] = model.crosstalk_fraction * central +
                                  0.5 * neighbours + noise;
        } else {
            out.correct.values[b] = central + neighbours + noise;
            out.wrong.values[b] =
                model.crosstalk_fraction * (central + neighbours) + noise;
        }
    }
    return out;
}

/// \brief Write a density histogram as CSV (`bin_start_ps,value`), preceded
/// by `#` metadata lines.
inline void write_density_csv(std::ostream &out, density_histogram const &hist,
                              std::vector<std::string> const &metadata = {}) {
    for (auto const &line : metadata)
        out << "# " << line << '\n';
    out << "# period_ps=" << hist.period_ps
        << " bin_width_ps=" << hist.bin_width_ps << '\n';
    out << "bin_start_ps,value\n";
    for (std::size_t b = 0; b < hist.values.size(); ++b) {
        out << static_cast<std::uint64_t>(b) * hist.bin_width_ps << ','
            << hist.values[b] << '\n';
    }
    if (!out)
        throw std::runtime_error("failed writing density CSV");
}

} // namespace sqkd
