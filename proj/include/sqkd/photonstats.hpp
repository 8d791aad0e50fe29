#pragma once

#include "core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace sqkd {

/// \brief Histogram of cross-channel pairwise delays, symmetric around zero.
///
/// Every unordered pair of tags on distinct channels with delay d contributes
/// one count at +d and one at -d, so the histogram is symmetric by
/// construction and the zero-delay peak counts each coincident pair twice.
struct correlation_histogram {
    std::uint64_t bin_width_ps = 250;
    /// Full width of the delay window; bins cover [-span/2, +span/2].
    std::uint64_t span_ps = 250000;
    /// 2 * n_half() + 1 bins; delay zero sits at index n_half().
    std::vector<double> counts;
    std::uint64_t n_input_tags = 0;

    [[nodiscard]] auto n_half() const -> std::int64_t {
        return static_cast<std::int64_t>(span_ps / (2 * bin_width_ps));
    }

    /// Count at the signed bin index (0 = zero delay).
    [[nodiscard]] auto at(std::int64_t signed_bin) const -> double {
        return counts[static_cast<std::size_t>(signed_bin + n_half())];
    }
};

/// \brief Zero-delay autocorrelation estimate with side-peak statistics.
struct g2_estimate {
    double g2_zero = 0.0;
    double sigma = 0.0;
    /// Coincidences in the zero-delay peak window (symmetrized count).
    double n_zero = 0.0;
    /// Per-window coincidence sums for peaks k = -K..-1, +1..+K.
    std::vector<double> side_peak_areas;
    double accumulation_time_s = 0.0;
    std::uint64_t sifted_block_bits = 0;
    /// True when sigma uses the raw side-peak standard deviation instead of
    /// the standard error of their mean.
    bool sigma_raw_std = false;
};

/// \brief Cross-channel pair correlation by a single sliding-window pass.
///
/// Requires a time-sorted stream. With more than one thread the tag index
/// range is partitioned; each pair is owned by its earlier tag, so the
/// result is bit-identical to the single-pass output.
inline auto correlate(std::vector<time_tag> const &tags,
                      std::uint64_t bin_width_ps = 250,
                      std::uint64_t span_ps = 250000, unsigned threads = 1)
    -> correlation_histogram {
    if (bin_width_ps == 0)
        throw std::invalid_argument("bin width must be positive");
    if (span_ps < 2 * bin_width_ps || span_ps % (2 * bin_width_ps) != 0)
        throw std::invalid_argument(
            "span must be a positive multiple of twice the bin width");
    for (std::size_t i = 1; i < tags.size(); ++i)
        if (tags[i].timestamp_ps < tags[i - 1].timestamp_ps)
            throw std::invalid_argument("correlate requires sorted tags");

    correlation_histogram hist;
    hist.bin_width_ps = bin_width_ps;
    hist.span_ps = span_ps;
    hist.n_input_tags = tags.size();
    const std::int64_t n_half = hist.n_half();
    const std::size_t n_bins = static_cast<std::size_t>(2 * n_half + 1);
    hist.counts.assign(n_bins, 0.0);
    if (tags.size() < 2)
        return hist;
    // Largest delay that still rounds into the outermost bin.
    const std::uint64_t d_max =
        static_cast<std::uint64_t>(n_half) * bin_width_ps + bin_width_ps / 2 -
        (bin_width_ps % 2 == 0 ? 1 : 0);

    auto scan = [&](std::size_t i_begin, std::size_t i_end,
                    std::vector<double> &out) {
        for (std::size_t i = i_begin; i < i_end; ++i) {
            for (std::size_t j = i + 1; j < tags.size(); ++j) {
                const std::uint64_t d =
                    tags[j].timestamp_ps - tags[i].timestamp_ps;
                if (d > d_max)
                    break;
                if (tags[j].ch == tags[i].ch)
                    continue;
                const auto idx = static_cast<std::int64_t>(
                    (d + bin_width_ps / 2) / bin_width_ps);
                out[static_cast<std::size_t>(n_half + idx)] += 1.0;
                out[static_cast<std::size_t>(n_half - idx)] += 1.0;
            }
        }
    };

    const unsigned n_threads = std::max(1u, threads);
    if (n_threads == 1 || tags.size() < 4096) {
        scan(0, tags.size(), hist.counts);
        return hist;
    }
    std::vector<std::vector<double>> partial(
        n_threads, std::vector<double>(n_bins, 0.0));
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    const std::size_t chunk = (tags.size() + n_threads - 1) / n_threads;
    for (unsigned t = 0; t < n_threads; ++t) {
        const std::size_t b = std::min(tags.size(), t * chunk);
        const std::size_t e = std::min(tags.size(), b + chunk);
        pool.emplace_back(scan, b, e, std::ref(partial[t]));
    }
    for (auto &t : pool)
        t.join();
    for (auto const &p : partial)
        for (std::size_t b = 0; b < n_bins; ++b)
            hist.counts[b] += p[b];
    return hist;
}

/// \brief g2(0) as zero-peak area over mean side-peak area.
///
/// Each peak k is integrated over one full period of delay centered on
/// k * period (contiguous tiling). Sigma propagates the Poisson error of the
/// zero peak and the scatter of the side-peak areas:
/// g2 * sqrt(1/N_zero + s^2 / (n_side * mean^2)), with the raw standard
/// deviation (no 1/n_side) behind the flag.
inline auto estimate_g2(correlation_histogram const &hist,
                        clock_config const &clock, bool raw_std = false)
    -> g2_estimate {
    if (clock.period_ps == 0 || hist.bin_width_ps == 0)
        throw std::invalid_argument("period and bin width must be positive");
    if (clock.period_ps % hist.bin_width_ps != 0)
        throw std::invalid_argument(
            "bin width must divide the clock period");
    const auto m =
        static_cast<std::int64_t>(clock.period_ps / hist.bin_width_ps);
    const std::int64_t lo_off = -(m / 2);
    const std::int64_t hi_off = m - m / 2 - 1;
    const std::int64_t n_half = hist.n_half();
    std::int64_t n_side_each = 0;
    while ((n_side_each + 1) * m + hi_off <= n_half &&
           -(n_side_each + 1) * m + lo_off >= -n_half)
        ++n_side_each;
    if (n_side_each < 5)
        throw std::invalid_argument(
            "span must cover at least five side peaks each side");

    auto window_area = [&](std::int64_t k) {
        double sum = 0.0;
        for (std::int64_t o = lo_off; o <= hi_off; ++o)
            sum += hist.at(k * m + o);
        return sum;
    };

    g2_estimate est;
    est.sigma_raw_std = raw_std;
    est.n_zero = window_area(0);
    est.side_peak_areas.reserve(static_cast<std::size_t>(2 * n_side_each));
    for (std::int64_t k = -n_side_each; k <= n_side_each; ++k)
        if (k != 0)
            est.side_peak_areas.push_back(window_area(k));
    double mean = 0.0;
    for (double a : est.side_peak_areas)
        mean += a;
    mean /= static_cast<double>(est.side_peak_areas.size());
    if (mean <= 0.0)
        throw std::invalid_argument(
            "zero side-peak mean: g2 estimate undefined");
    est.g2_zero = est.n_zero / mean;
    double ss = 0.0;
    for (double a : est.side_peak_areas)
        ss += (a - mean) * (a - mean);
    const auto n_side = static_cast<double>(est.side_peak_areas.size());
    const double var_side = ss / (n_side - 1.0);
    const double side_term =
        raw_std ? var_side / (mean * mean)
                : var_side / (n_side * mean * mean);
    if (est.n_zero > 0.0)
        est.sigma =
            est.g2_zero * std::sqrt(1.0 / est.n_zero + side_term);
    else
        est.sigma = 0.0;
    return est;
}

/// \brief Per-block monitoring record.
struct monitor_block {
    std::size_t block_index = 0;
    double t_start_s = 0.0;
    double duration_s = 0.0;
    g2_estimate estimate;
    double qber = 0.0;
    std::array<double, 4> rates_hz{};
    std::uint64_t sifted_bits = 0;
    bool alarm = false;
    /// True for the truncated trailing block.
    bool partial = false;
    /// False when the block had too few counts for a g2 estimate.
    bool valid = false;
};

/// \brief Split a stream into contiguous fixed-duration blocks and evaluate
/// g2, rates, and QBER per block; the alarm fires when the estimate strays
/// more than alarm_k sigma from the reference.
inline auto monitor_blocks(std::vector<time_tag> const &tags,
                           clock_config const &clock,
                           channel input_polarization,
                           double block_duration_s, double reference_g2,
                           double alarm_k,
                           std::uint64_t corr_bin_width_ps = 250,
                           std::uint64_t corr_span_ps = 250000,
                           bool raw_std = false)
    -> std::vector<monitor_block> {
    if (!(block_duration_s > 0.0))
        throw std::invalid_argument("block duration must be positive");
    if (!(alarm_k > 0.0))
        throw std::invalid_argument("alarm threshold must be positive");
    std::vector<monitor_block> out;
    if (tags.empty())
        return out;
    const double block_ps = block_duration_s * 1e12;
    const std::uint64_t t_end = tags.back().timestamp_ps + 1;
    const auto n_blocks = static_cast<std::size_t>(
        std::ceil(static_cast<double>(t_end) / block_ps));
    const int right = static_cast<int>(input_polarization);
    const int wrong = static_cast<int>(conjugate_of(input_polarization));

    std::size_t begin = 0;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        const double lo_ps = static_cast<double>(b) * block_ps;
        const double hi_ps = lo_ps + block_ps;
        std::size_t end = begin;
        while (end < tags.size() &&
               static_cast<double>(tags[end].timestamp_ps) < hi_ps)
            ++end;
        monitor_block blk;
        blk.block_index = b;
        blk.t_start_s = lo_ps / 1e12;
        blk.partial = b + 1 == n_blocks &&
                      static_cast<double>(t_end) < hi_ps;
        blk.duration_s =
            blk.partial ? (static_cast<double>(t_end) - lo_ps) / 1e12
                        : block_duration_s;
        std::vector<time_tag> slice(tags.begin() + begin, tags.begin() + end);
        std::array<std::uint64_t, 4> n{};
        for (auto const &t : slice)
            ++n[static_cast<int>(t.ch)];
        for (int c = 0; c < channel_count; ++c)
            blk.rates_hz[c] = blk.duration_s > 0.0
                                  ? static_cast<double>(n[c]) / blk.duration_s
                                  : 0.0;
        blk.sifted_bits = n[right] + n[wrong];
        blk.qber = blk.sifted_bits > 0
                       ? static_cast<double>(n[wrong]) /
                             static_cast<double>(blk.sifted_bits)
                       : 0.0;
        try {
            auto hist = correlate(slice, corr_bin_width_ps, corr_span_ps);
            blk.estimate = estimate_g2(hist, clock, raw_std);
            blk.estimate.accumulation_time_s = blk.duration_s;
            blk.estimate.sifted_block_bits = blk.sifted_bits;
            blk.valid = true;
            blk.alarm = std::abs(blk.estimate.g2_zero - reference_g2) >
                        alarm_k * blk.estimate.sigma;
        } catch (std::invalid_argument const &) {
            blk.valid = false;
        }
        out.push_back(std::move(blk));
        begin = end;
    }
    return out;
}

/// \brief g2 estimates on growing prefixes of the stream.
inline auto convergence_curve(std::vector<time_tag> const &tags,
                              clock_config const &clock,
                              channel input_polarization,
                              std::vector<double> const &accumulation_times_s,
                              std::uint64_t corr_bin_width_ps = 250,
                              std::uint64_t corr_span_ps = 250000,
                              bool raw_std = false)
    -> std::vector<g2_estimate> {
    if (tags.empty())
        throw std::invalid_argument("empty stream");
    const double duration_s =
        static_cast<double>(tags.back().timestamp_ps + 1) / 1e12;
    std::vector<g2_estimate> out;
    const int right = static_cast<int>(input_polarization);
    const int wrong = static_cast<int>(conjugate_of(input_polarization));
    for (double t : accumulation_times_s) {
        // 1% slack: the last tag of a nominal-duration recording usually
        // falls slightly short of the nominal end.
        if (!(t > 0.0) || t * 0.99 > duration_s)
            throw std::invalid_argument(
                "accumulation time must lie within the stream duration");
        const auto cutoff = static_cast<std::uint64_t>(t * 1e12);
        auto end = std::lower_bound(
            tags.begin(), tags.end(), cutoff,
            [](time_tag const &tag, std::uint64_t value) {
                return tag.timestamp_ps < value;
            });
        std::vector<time_tag> prefix(tags.begin(), end);
        auto hist = correlate(prefix, corr_bin_width_ps, corr_span_ps);
        auto est = estimate_g2(hist, clock, raw_std);
        est.accumulation_time_s = t;
        std::uint64_t sifted = 0;
        for (auto const &tag : prefix) {
            const int c = static_cast<int>(tag.ch);
            if (c == right || c == wrong)
                ++sifted;
        }
        est.sifted_block_bits = sifted;
        out.push_back(std::move(est));
    }
    return out;
}

/// \brief Export a correlation histogram as CSV.
inline void write_correlation_csv(std::ostream &out,
                                  correlation_histogram const &hist,
                                  std::vector<std::string> const &metadata = {}) {
    for (auto const &line : metadata)
        out << "# " << line << '\n';
    out << "tau_ps,counts\n";
    const std::int64_t n_half = hist.n_half();
    for (std::int64_t b = -n_half; b <= n_half; ++b)
        out << b * static_cast<std::int64_t>(hist.bin_width_ps) << ','
            << hist.at(b) << '\n';
    if (!out)
        throw std::runtime_error("failed writing correlation CSV");
}

/// \brief One JSON line per monitoring block.
inline void write_monitor_jsonl(std::ostream &out,
                                std::vector<monitor_block> const &blocks) {
    for (auto const &b : blocks) {
        nlohmann::json j;
        j["block_index"] = b.block_index;
        j["t_start_s"] = b.t_start_s;
        if (b.valid) {
            j["g2"] = b.estimate.g2_zero;
            j["sigma"] = b.estimate.sigma;
        } else {
            j["g2"] = nullptr;
            j["sigma"] = nullptr;
        }
        j["qber"] = b.qber;
        j["rates_hz"] = b.rates_hz;
        j["sifted_bits"] = b.sifted_bits;
        j["alarm"] = b.alarm;
        j["partial"] = b.partial;
        out << j.dump() << '\n';
    }
    if (!out)
        throw std::runtime_error("failed writing monitor JSONL");
}

} // namespace sqkd
