#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sqkd {

/// \brief Detection channel of the four-port polarization analyzer.
///
/// h/v form basis 0, d/a form basis 1.
enum class channel : std::uint8_t { h = 0, v = 1, d = 2, a = 3 };

inline constexpr int channel_count = 4;

/// \brief Basis index of a channel: 0 for h/v, 1 for d/a.
constexpr auto basis_of(channel c) -> int { return static_cast<int>(c) / 2; }

/// \brief The orthogonal channel within the same basis.
constexpr auto conjugate_of(channel c) -> channel {
    return static_cast<channel>(static_cast<int>(c) ^ 1);
}

inline auto to_string(channel c) -> std::string {
    switch (c) {
    case channel::h:
        return "H";
    case channel::v:
        return "V";
    case channel::d:
        return "D";
    case channel::a:
        return "A";
    }
    throw std::invalid_argument("invalid channel value");
}

/// \brief Parse a channel from "H"/"V"/"D"/"A" (any case) or "0".."3".
inline auto parse_channel(std::string_view s) -> channel {
    if (s.size() == 1) {
        switch (s.front()) {
        case 'H':
        case 'h':
        case '0':
            return channel::h;
        case 'V':
        case 'v':
        case '1':
            return channel::v;
        case 'D':
        case 'd':
        case '2':
            return channel::d;
        case 'A':
        case 'a':
        case '3':
            return channel::a;
        default:
            break;
        }
    }
    throw std::invalid_argument("unrecognized channel: " + std::string(s));
}

/// \brief One detection event: channel plus absolute timestamp in integer
/// picoseconds since stream start.
struct time_tag {
    std::uint64_t timestamp_ps = 0;
    channel ch = channel::h;

    friend auto operator==(time_tag const &, time_tag const &) -> bool = default;
};

/// \brief Strict weak order by (timestamp, channel); used for deterministic merges.
struct time_tag_order {
    auto operator()(time_tag const &lhs, time_tag const &rhs) const -> bool {
        if (lhs.timestamp_ps != rhs.timestamp_ps)
            return lhs.timestamp_ps < rhs.timestamp_ps;
        return static_cast<int>(lhs.ch) < static_cast<int>(rhs.ch);
    }
};

/// \brief Pulsed-excitation clock; the period in integer picoseconds is the
/// fundamental quantity.
struct clock_config {
    std::uint64_t period_ps = 12500;

    [[nodiscard]] auto repetition_rate_hz() const -> double {
        return 1e12 / static_cast<double>(period_ps);
    }

    static auto from_repetition_rate(double hz) -> clock_config {
        if (!(hz > 0.0))
            throw std::invalid_argument("repetition rate must be positive");
        const auto period = static_cast<std::uint64_t>(1e12 / hz + 0.5);
        if (period == 0)
            throw std::invalid_argument("repetition rate too high for 1 ps grid");
        return clock_config{period};
    }
};

/// \brief Phase of a timestamp within the clock period.
constexpr auto phase_of(std::uint64_t timestamp_ps, std::uint64_t period_ps)
    -> std::uint64_t {
    return timestamp_ps % period_ps;
}

/// \brief Temporal acceptance filter: width and signed center offset.
///
/// By default the center offset is relative to the arrival-histogram peak of
/// the reference channel; absolute_center interprets it as an absolute phase.
struct acceptance_window {
    std::uint64_t width_ps = 12500;
    std::int64_t center_offset_ps = 0;
    bool absolute_center = false;
};

/// \brief A resolved window: wrapped interval [start, start + width) modulo
/// the period.
struct window_interval {
    std::uint64_t start_ps = 0;
    std::uint64_t width_ps = 12500;
    std::uint64_t period_ps = 12500;

    [[nodiscard]] auto contains(std::uint64_t timestamp_ps) const -> bool {
        const std::uint64_t phase = timestamp_ps % period_ps;
        const std::uint64_t offset =
            phase >= start_ps ? phase - start_ps : phase + period_ps - start_ps;
        return offset < width_ps;
    }
};

/// \brief Resolve a window against a peak reference phase.
///
/// The interval is [c - floor(w/2), c + ceil(w/2)) modulo the period, where c
/// is peak + center_offset (or center_offset alone in absolute mode). The
/// floor/ceil split keeps windows of growing width nested.
inline auto resolve_window(acceptance_window const &w, std::uint64_t period_ps,
                           std::uint64_t peak_phase_ps) -> window_interval {
    if (period_ps == 0)
        throw std::invalid_argument("period must be positive");
    if (w.width_ps == 0 || w.width_ps > period_ps)
        throw std::invalid_argument("window width must be in (0, period]");
    const auto period = static_cast<std::int64_t>(period_ps);
    std::int64_t center = w.absolute_center
                              ? w.center_offset_ps
                              : static_cast<std::int64_t>(peak_phase_ps) +
                                    w.center_offset_ps;
    std::int64_t lo = center - static_cast<std::int64_t>(w.width_ps / 2);
    lo %= period;
    if (lo < 0)
        lo += period;
    return window_interval{static_cast<std::uint64_t>(lo), w.width_ps, period_ps};
}

/// \brief Binned arrival-time distribution of one channel, folded into one
/// clock period.
struct arrival_histogram {
    channel ch = channel::h;
    std::uint64_t period_ps = 12500;
    std::uint32_t bin_width_ps = 25;
    /// True when bin_width does not divide the period; the last bin then
    /// covers less than bin_width of phase.
    bool truncated_last_bin = false;
    std::vector<std::uint64_t> counts;
    std::uint64_t total_events = 0;

    [[nodiscard]] auto n_bins() const -> std::size_t { return counts.size(); }
};

/// \brief Bin all tags into four per-channel histograms over one period.
inline auto fold_timetags(std::vector<time_tag> const &tags,
                          clock_config const &clock, std::uint32_t bin_width_ps)
    -> std::array<arrival_histogram, 4> {
    if (bin_width_ps == 0)
        throw std::invalid_argument("bin width must be positive");
    if (clock.period_ps == 0)
        throw std::invalid_argument("period must be positive");
    const std::uint64_t period = clock.period_ps;
    const std::size_t n_bins =
        static_cast<std::size_t>((period + bin_width_ps - 1) / bin_width_ps);
    const bool truncated = period % bin_width_ps != 0;
    std::array<arrival_histogram, 4> result;
    for (int c = 0; c < channel_count; ++c) {
        result[c].ch = static_cast<channel>(c);
        result[c].period_ps = period;
        result[c].bin_width_ps = bin_width_ps;
        result[c].truncated_last_bin = truncated;
        result[c].counts.assign(n_bins, 0);
    }
    for (auto const &tag : tags) {
        auto &hist = result[static_cast<int>(tag.ch)];
        ++hist.counts[(tag.timestamp_ps % period) / bin_width_ps];
        ++hist.total_events;
    }
    return result;
}

/// \brief Phase of the mode bin center of a histogram; ties pick the earliest
/// bin. An empty histogram yields phase 0.
inline auto peak_phase_ps(arrival_histogram const &hist) -> std::uint64_t {
    std::uint64_t best_count = 0;
    std::size_t best_bin = 0;
    for (std::size_t i = 0; i < hist.counts.size(); ++i) {
        if (hist.counts[i] > best_count) {
            best_count = hist.counts[i];
            best_bin = i;
        }
    }
    if (best_count == 0)
        return 0;
    const std::uint64_t center = static_cast<std::uint64_t>(best_bin) *
                                     hist.bin_width_ps +
                                 hist.bin_width_ps / 2;
    return center < hist.period_ps ? center : hist.period_ps - 1;
}

} // namespace sqkd
