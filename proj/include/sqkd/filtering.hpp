#pragma once

#include "core.hpp"
#include "pulse.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace sqkd {

/// \brief Acceptance counts and derived quantities for one window setting.
///
/// Counts are doubles so that analytic density histograms (expected values)
/// share the type with integer tag counts, which doubles represent exactly
/// in the supported range.
struct filter_metrics {
    acceptance_window window;
    window_interval interval;
    std::array<double, 4> accepted_by_channel{};
    double accepted_total = 0.0;
    double n_correct = 0.0;
    double n_wrong = 0.0;
    /// Fraction of the full-window accepted events that survive this window.
    double sifted_fraction = 0.0;
    /// False marks an empty window: no accepted events in the sifting basis,
    /// so no QBER is defined.
    bool has_qber = false;
    double qber = 0.0;
};

/// \brief Result grid of a 2D (width, center) filter sweep.
struct sweep_grid {
    std::vector<std::uint64_t> dt_values_ps;
    std::vector<std::int64_t> tc_values_ps;
    /// Row-major: cells[i_dt * tc_values.size() + i_tc].
    std::vector<filter_metrics> cells;
    std::uint64_t peak_phase_ps = 0;
    double full_window_accepted = 0.0;

    [[nodiscard]] auto at(std::size_t i_dt, std::size_t i_tc) const
        -> filter_metrics const & {
        return cells[i_dt * tc_values_ps.size() + i_tc];
    }
};

/// \brief Default sweep axes: widths from 0.25 ns to the full period, centers
/// over half a period both ways, in 0.25 ns steps.
inline auto default_dt_values(std::uint64_t period_ps)
    -> std::vector<std::uint64_t> {
    std::vector<std::uint64_t> out;
    for (std::uint64_t dt = 250; dt <= period_ps; dt += 250)
        out.push_back(dt);
    if (out.empty() || out.back() != period_ps)
        out.push_back(period_ps);
    return out;
}

inline auto default_tc_values(std::uint64_t period_ps)
    -> std::vector<std::int64_t> {
    std::vector<std::int64_t> out;
    const auto half = static_cast<std::int64_t>(period_ps / 2);
    for (std::int64_t tc = -half; tc <= half; tc += 250)
        out.push_back(tc);
    return out;
}

namespace detail {

/// Folded per-ps weights plus prefix sums for O(1) wrapped-interval totals.
struct folded_prefix {
    std::uint64_t period_ps = 0;
    std::array<std::vector<double>, 4> prefix; // size period + 1

    [[nodiscard]] auto interval_sum(int ch, window_interval const &w) const
        -> double {
        auto const &p = prefix[ch];
        const std::uint64_t start = w.start_ps;
        const std::uint64_t end = start + w.width_ps;
        if (end <= period_ps)
            return p[end] - p[start];
        const std::uint64_t wrapped = end - period_ps;
        return (p[period_ps] - p[start]) + p[wrapped];
    }

    [[nodiscard]] auto total(int ch) const -> double {
        return prefix[ch][period_ps];
    }
};

inline auto build_prefix_from_tags(std::vector<time_tag> const &tags,
                                   std::uint64_t period_ps) -> folded_prefix {
    folded_prefix out;
    out.period_ps = period_ps;
    std::array<std::vector<double>, 4> weights;
    for (auto &w : weights)
        w.assign(period_ps, 0.0);
    for (auto const &tag : tags)
        weights[static_cast<int>(tag.ch)][tag.timestamp_ps % period_ps] += 1.0;
    for (int c = 0; c < channel_count; ++c) {
        out.prefix[c].assign(period_ps + 1, 0.0);
        for (std::uint64_t i = 0; i < period_ps; ++i)
            out.prefix[c][i + 1] = out.prefix[c][i] + weights[c][i];
    }
    return out;
}

/// Spread each density bin uniformly over its picoseconds (piecewise-constant
/// density model, exact for the binned synthetic histograms).
inline auto build_prefix_from_densities(density_histogram const &correct,
                                        density_histogram const &wrong,
                                        channel correct_ch) -> folded_prefix {
    if (correct.period_ps != wrong.period_ps ||
        correct.bin_width_ps != wrong.bin_width_ps ||
        correct.n_bins() != wrong.n_bins())
        throw std::invalid_argument(
            "correct/wrong histograms must share their binning");
    folded_prefix out;
    out.period_ps = correct.period_ps;
    for (int c = 0; c < channel_count; ++c)
        out.prefix[c].assign(out.period_ps + 1, 0.0);
    auto const fill = [&](density_histogram const &hist, int ch) {
        auto &p = out.prefix[ch];
        for (std::uint64_t i = 0; i < out.period_ps; ++i) {
            const auto bin = static_cast<std::size_t>(i / hist.bin_width_ps);
            const std::uint64_t bin_lo = bin * hist.bin_width_ps;
            const std::uint64_t bin_hi = std::min<std::uint64_t>(
                bin_lo + hist.bin_width_ps, out.period_ps);
            const double per_ps =
                hist.values[bin] / static_cast<double>(bin_hi - bin_lo);
            p[i + 1] = p[i] + per_ps;
        }
    };
    fill(correct, static_cast<int>(correct_ch));
    fill(wrong, static_cast<int>(conjugate_of(correct_ch)));
    return out;
}

inline auto metrics_from_prefix(folded_prefix const &prefix,
                                channel input_polarization,
                                acceptance_window const &window,
                                std::uint64_t peak_phase) -> filter_metrics {
    filter_metrics m;
    m.window = window;
    m.interval = resolve_window(window, prefix.period_ps, peak_phase);
    double full = 0.0;
    for (int c = 0; c < channel_count; ++c) {
        m.accepted_by_channel[c] = prefix.interval_sum(c, m.interval);
        m.accepted_total += m.accepted_by_channel[c];
        full += prefix.total(c);
    }
    m.n_correct = m.accepted_by_channel[static_cast<int>(input_polarization)];
    m.n_wrong =
        m.accepted_by_channel[static_cast<int>(conjugate_of(input_polarization))];
    m.sifted_fraction = full > 0.0 ? m.accepted_total / full : 0.0;
    const double basis = m.n_correct + m.n_wrong;
    if (basis > 0.0) {
        m.has_qber = true;
        m.qber = m.n_wrong / basis;
    }
    return m;
}

} // namespace detail

/// \brief Acceptance metrics of one window on a synchronized tag stream.
///
/// The peak reference phase is the mode of the input channel's folded
/// histogram at \p peak_bin_width_ps resolution unless given explicitly.
inline auto metrics_for_window(std::vector<time_tag> const &tags,
                               clock_config const &clock,
                               channel input_polarization,
                               acceptance_window const &window,
                               std::optional<std::uint64_t> peak_phase = {},
                               std::uint32_t peak_bin_width_ps = 25)
    -> filter_metrics {
    std::uint64_t peak = 0;
    if (peak_phase) {
        peak = *peak_phase;
    } else {
        auto hists = fold_timetags(tags, clock, peak_bin_width_ps);
        peak = peak_phase_ps(hists[static_cast<int>(input_polarization)]);
    }
    filter_metrics m;
    m.window = window;
    m.interval = resolve_window(window, clock.period_ps, peak);
    for (auto const &tag : tags) {
        if (m.interval.contains(tag.timestamp_ps)) {
            m.accepted_by_channel[static_cast<int>(tag.ch)] += 1.0;
            m.accepted_total += 1.0;
        }
    }
    m.n_correct = m.accepted_by_channel[static_cast<int>(input_polarization)];
    m.n_wrong =
        m.accepted_by_channel[static_cast<int>(conjugate_of(input_polarization))];
    m.sifted_fraction =
        tags.empty() ? 0.0
                     : m.accepted_total / static_cast<double>(tags.size());
    const double basis = m.n_correct + m.n_wrong;
    if (basis > 0.0) {
        m.has_qber = true;
        m.qber = m.n_wrong / basis;
    }
    return m;
}

/// \brief Keep only tags inside the window (wrapped modulo the period).
inline auto apply_window(std::vector<time_tag> const &tags,
                         clock_config const &clock,
                         acceptance_window const &window,
                         std::uint64_t peak_reference_ps)
    -> std::vector<time_tag> {
    const auto interval =
        resolve_window(window, clock.period_ps, peak_reference_ps);
    std::vector<time_tag> kept;
    kept.reserve(tags.size());
    for (auto const &tag : tags)
        if (interval.contains(tag.timestamp_ps))
            kept.push_back(tag);
    return kept;
}

/// \brief 2D sweep over window widths and centers on a synchronized stream.
inline auto sweep(std::vector<time_tag> const &tags, clock_config const &clock,
                  channel input_polarization,
                  std::vector<std::uint64_t> const &dt_values_ps,
                  std::vector<std::int64_t> const &tc_values_ps,
                  std::uint32_t peak_bin_width_ps = 25) -> sweep_grid {
    if (dt_values_ps.empty() || tc_values_ps.empty())
        throw std::invalid_argument("sweep axes must be non-empty");
    auto hists = fold_timetags(tags, clock, peak_bin_width_ps);
    const std::uint64_t peak =
        peak_phase_ps(hists[static_cast<int>(input_polarization)]);
    auto prefix = detail::build_prefix_from_tags(tags, clock.period_ps);
    sweep_grid grid;
    grid.dt_values_ps = dt_values_ps;
    grid.tc_values_ps = tc_values_ps;
    grid.peak_phase_ps = peak;
    double full = 0.0;
    for (int c = 0; c < channel_count; ++c)
        full += prefix.total(c);
    grid.full_window_accepted = full;
    grid.cells.reserve(dt_values_ps.size() * tc_values_ps.size());
    for (auto dt : dt_values_ps)
        for (auto tc : tc_values_ps)
            grid.cells.push_back(detail::metrics_from_prefix(
                prefix, input_polarization, acceptance_window{dt, tc, false},
                peak));
    return grid;
}

/// \brief 2D sweep over an analytic correct/wrong channel density pair.
///
/// The peak reference is the mode bin center of the correct-channel
/// histogram; the other basis is empty.
inline auto sweep_density(density_histogram const &correct,
                          density_histogram const &wrong,
                          std::vector<std::uint64_t> const &dt_values_ps,
                          std::vector<std::int64_t> const &tc_values_ps,
                          channel input_polarization = channel::h)
    -> sweep_grid {
    if (dt_values_ps.empty() || tc_values_ps.empty())
        throw std::invalid_argument("sweep axes must be non-empty");
    std::size_t peak_bin = 0;
    double best = -1.0;
    for (std::size_t b = 0; b < correct.values.size(); ++b) {
        if (correct.values[b] > best) {
            best = correct.values[b];
            peak_bin = b;
        }
    }
    std::uint64_t peak = static_cast<std::uint64_t>(peak_bin) *
                             correct.bin_width_ps +
                         correct.bin_width_ps / 2;
    if (peak >= correct.period_ps)
        peak = correct.period_ps - 1;
    auto prefix = detail::build_prefix_from_densities(correct, wrong,
                                                      input_polarization);
    sweep_grid grid;
    grid.dt_values_ps = dt_values_ps;
    grid.tc_values_ps = tc_values_ps;
    grid.peak_phase_ps = peak;
    double full = 0.0;
    for (int c = 0; c < channel_count; ++c)
        full += prefix.total(c);
    grid.full_window_accepted = full;
    grid.cells.reserve(dt_values_ps.size() * tc_values_ps.size());
    for (auto dt : dt_values_ps)
        for (auto tc : tc_values_ps)
            grid.cells.push_back(detail::metrics_from_prefix(
                prefix, input_polarization, acceptance_window{dt, tc, false},
                peak));
    return grid;
}

/// \brief Per-channel delays (added to timestamps) that align all channels
/// with the input channel's arrival distribution.
///
/// Alignment minimizes the cyclic pointwise ratio sum of the reference
/// histogram over the shifted candidate histogram; for a shifted copy this
/// recovers the shift exactly. Coarse scan at histogram-bin resolution, then
/// 1 ps refinement.
inline auto synchronize_channels(std::vector<time_tag> const &tags,
                                 clock_config const &clock,
                                 channel input_polarization,
                                 std::uint32_t bin_width_ps = 25)
    -> std::array<std::int64_t, 4> {
    const std::uint64_t period = clock.period_ps;
    if (bin_width_ps == 0 || bin_width_ps > period)
        throw std::invalid_argument("bin width must be in (0, period]");
    // 1 ps folded histograms per channel.
    std::array<std::vector<double>, 4> fine;
    for (auto &f : fine)
        f.assign(period, 0.0);
    std::array<std::uint64_t, 4> totals{};
    for (auto const &tag : tags) {
        fine[static_cast<int>(tag.ch)][tag.timestamp_ps % period] += 1.0;
        ++totals[static_cast<int>(tag.ch)];
    }
    const int ref = static_cast<int>(input_polarization);
    const int conj = static_cast<int>(conjugate_of(input_polarization));
    if (totals[ref] == 0 || totals[conj] == 0)
        throw std::invalid_argument(
            "cannot synchronize: empty channel in the sifting basis");

    const auto n_bins =
        static_cast<std::int64_t>((period + bin_width_ps - 1) / bin_width_ps);
    auto rebin = [&](int ch, std::int64_t delay_ps) {
        std::vector<double> binned(static_cast<std::size_t>(n_bins), 0.0);
        auto const &f = fine[ch];
        for (std::uint64_t i = 0; i < period; ++i) {
            // Histogram after adding delay: value at phase i comes from i - delay.
            auto src = (static_cast<std::int64_t>(i) - delay_ps) %
                       static_cast<std::int64_t>(period);
            if (src < 0)
                src += static_cast<std::int64_t>(period);
            binned[i / bin_width_ps] += f[static_cast<std::uint64_t>(src)];
        }
        return binned;
    };
    const auto ref_binned = rebin(ref, 0);
    auto score = [&](std::vector<double> const &cand) {
        double r = 0.0;
        for (std::int64_t b = 0; b < n_bins; ++b)
            r += (ref_binned[b] + 1.0) / (cand[b] + 1.0);
        return r;
    };
    // Unbinned score for the refinement stage: every 1 ps shift is a pure
    // cyclic permutation there, so the ratio sum attains its minimum exactly
    // at alignment instead of being biased by bin-edge smoothing.
    auto fine_score = [&](int ch, std::int64_t delay_ps) {
        auto const &f = fine[ch];
        auto const &r = fine[ref];
        double s = 0.0;
        for (std::uint64_t i = 0; i < period; ++i) {
            auto src = (static_cast<std::int64_t>(i) - delay_ps) %
                       static_cast<std::int64_t>(period);
            if (src < 0)
                src += static_cast<std::int64_t>(period);
            s += (r[i] + 1.0) / (f[static_cast<std::uint64_t>(src)] + 1.0);
        }
        return s;
    };

    std::array<std::int64_t, 4> delays{};
    const auto half = static_cast<std::int64_t>(period / 2);
    for (int c = 0; c < channel_count; ++c) {
        if (c == ref || totals[c] == 0) {
            delays[c] = 0;
            continue;
        }
        // Coarse scan in whole bins.
        double best_score = std::numeric_limits<double>::infinity();
        std::int64_t best_delay = 0;
        for (std::int64_t s = -half; s < half;
             s += static_cast<std::int64_t>(bin_width_ps)) {
            const double r = score(rebin(c, s));
            if (r < best_score) {
                best_score = r;
                best_delay = s;
            }
        }
        // 1 ps refinement around the coarse optimum.
        double best_fine = std::numeric_limits<double>::infinity();
        std::int64_t refined = best_delay;
        for (std::int64_t d = best_delay - bin_width_ps;
             d <= best_delay + bin_width_ps; ++d) {
            const double r = fine_score(c, d);
            if (r < best_fine) {
                best_fine = r;
                refined = d;
            }
        }
        delays[c] = refined;
    }
    return delays;
}

/// \brief Apply per-channel delays; a uniform whole-period offset keeps all
/// timestamps non-negative. The result is re-sorted.
inline auto apply_delays(std::vector<time_tag> const &tags,
                         clock_config const &clock,
                         std::array<std::int64_t, 4> const &delays)
    -> std::vector<time_tag> {
    std::int64_t most_negative = 0;
    for (auto d : delays)
        most_negative = std::min(most_negative, d);
    const auto period = static_cast<std::int64_t>(clock.period_ps);
    const std::int64_t lift =
        most_negative < 0 ? ((-most_negative + period - 1) / period) * period
                          : 0;
    std::vector<time_tag> out;
    out.reserve(tags.size());
    for (auto const &tag : tags) {
        const std::int64_t t = static_cast<std::int64_t>(tag.timestamp_ps) +
                               delays[static_cast<int>(tag.ch)] + lift;
        out.push_back({static_cast<std::uint64_t>(t), tag.ch});
    }
    std::sort(out.begin(), out.end(), [](time_tag const &a, time_tag const &b) {
        return time_tag_order{}(a, b);
    });
    return out;
}

/// \brief Export a sweep grid as CSV; empty-window cells print nan for the
/// QBER column.
inline void sweep_to_csv(std::ostream &out, sweep_grid const &grid,
                         std::vector<std::string> const &metadata = {}) {
    for (auto const &line : metadata)
        out << "# " << line << '\n';
    out << "# peak_phase_ps=" << grid.peak_phase_ps << '\n';
    out << "dt_ps,tc_ps,qber,sifted_fraction,n_correct,n_wrong\n";
    for (std::size_t i = 0; i < grid.dt_values_ps.size(); ++i) {
        for (std::size_t j = 0; j < grid.tc_values_ps.size(); ++j) {
            auto const &m = grid.at(i, j);
            out << grid.dt_values_ps[i] << ',' << grid.tc_values_ps[j] << ',';
            if (m.has_qber)
                out << m.qber;
            else
                out << "nan";
            out << ',' << m.sifted_fraction << ',' << m.n_correct << ','
                << m.n_wrong << '\n';
        }
    }
    if (!out)
        throw std::runtime_error("failed writing sweep CSV");
}

/// \brief Export a sweep grid as JSON.
inline auto sweep_to_json(sweep_grid const &grid) -> nlohmann::json {
    nlohmann::json j;
    j["dt_ps"] = grid.dt_values_ps;
    j["tc_ps"] = grid.tc_values_ps;
    j["peak_phase_ps"] = grid.peak_phase_ps;
    auto cells = nlohmann::json::array();
    for (std::size_t i = 0; i < grid.dt_values_ps.size(); ++i) {
        for (std::size_t k = 0; k < grid.tc_values_ps.size(); ++k) {
            auto const &m = grid.at(i, k);
            nlohmann::json cell;
            cell["dt_ps"] = grid.dt_values_ps[i];
            cell["tc_ps"] = grid.tc_values_ps[k];
            if (m.has_qber)
                cell["qber"] = m.qber;
            else
                cell["qber"] = nullptr;
            cell["sifted_fraction"] = m.sifted_fraction;
            cell["n_correct"] = m.n_correct;
            cell["n_wrong"] = m.n_wrong;
            cells.push_back(std::move(cell));
        }
    }
    j["cells"] = std::move(cells);
    return j;
}

} // namespace sqkd
