#pragma once

#include "core.hpp"
#include "filtering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqkd {

/// \brief Source and receiver parameters entering the secret-rate model.
struct key_rate_params {
    /// Mean photon number per pulse into the quantum channel.
    double mu = 0.0043;
    /// Second-order autocorrelation at zero delay.
    double g2 = 0.089;
    /// Dark-count probability per pulse over the full period.
    double p_dc = 1.22e-6;
    /// Optical-imperfection error fraction (wrong-port routing).
    double q = 0.0048;
    /// Error-correction inefficiency factor applied to h(e).
    double f_ec = 1.22;
    /// Receiver transmission/detection efficiency folded into the click rate.
    double eta_bob = 1.0;
    clock_config clock{12500};
    /// When true the compression function takes the plain error rate e; the
    /// default argument is e divided by the single-photon fraction beta.
    bool tau_argument_plain_e = false;

    void validate() const {
        if (!(mu >= 0.0))
            throw std::invalid_argument("mu must be non-negative");
        if (!(g2 >= 0.0))
            throw std::invalid_argument("g2 must be non-negative");
        if (!(p_dc >= 0.0 && p_dc <= 1.0))
            throw std::invalid_argument("p_dc must be a probability");
        if (!(q >= 0.0 && q < 0.5))
            throw std::invalid_argument("q must be in [0, 0.5)");
        if (!(f_ec >= 1.0))
            throw std::invalid_argument("f_ec must be >= 1");
        if (!(eta_bob > 0.0 && eta_bob <= 1.0))
            throw std::invalid_argument("eta_bob must be in (0, 1]");
        if (clock.period_ps == 0)
            throw std::invalid_argument("period must be positive");
    }
};

/// \brief Window summary feeding the rate model: surviving signal fraction,
/// dark-count scaling, and the optical error floor inside the window.
struct window_profile {
    /// Fraction of signal events surviving the filter (F).
    double sifted_fraction = 1.0;
    /// Window width over period; scales the dark-count probability.
    double width_fraction = 1.0;
    /// Error floor inside the window; defaults to the params' q when unset.
    std::optional<double> qber_floor{};
    /// Label used in exports.
    std::string label = "full";
};

/// \brief One point of a rate-loss curve.
struct rate_point {
    double loss_db = 0.0;
    double s_per_pulse = 0.0;
    double qber = 0.0;
    double p_click = 0.0;
    bool multiphoton_dominated = false;
};

/// \brief Binary Shannon entropy in bits; h(0) = h(1) = 0 by continuity.
inline auto shannon_entropy(double e) -> double {
    if (!(e >= 0.0 && e <= 1.0))
        throw std::invalid_argument("entropy argument must be in [0, 1]");
    if (e == 0.0 || e == 1.0)
        return 0.0;
    return -e * std::log2(e) - (1.0 - e) * std::log2(1.0 - e);
}

/// \brief Privacy-amplification compression fraction for individual attacks:
/// tau(e) = 1 - log2(1 + 4e - 4e^2) for e <= 1/2, else 0.
inline auto compression_tau(double e) -> double {
    if (!(e >= 0.0))
        throw std::invalid_argument("compression argument must be >= 0");
    if (e >= 0.5)
        return 0.0;
    return 1.0 - std::log2(1.0 + 4.0 * e - 4.0 * e * e);
}

/// \brief Multiphoton emission probability bound mu^2 g2 / 2, clamped to 1.
inline auto multiphoton_bound(double mu, double g2) -> double {
    if (!(mu >= 0.0) || !(g2 >= 0.0))
        throw std::invalid_argument("mu and g2 must be non-negative");
    return std::min(1.0, 0.5 * mu * mu * g2);
}

/// \brief Secret bits per clock pulse for one window profile at a channel
/// loss.
///
/// The multiphoton term uses the filtered mean photon number mu * F: the
/// temporal filter removes multiphoton events at the same rate as singles,
/// so the security-relevant pulse statistics scale with the surviving
/// fraction.
inline auto secret_rate(key_rate_params const &params, double loss_db,
                        window_profile const &profile) -> rate_point {
    params.validate();
    if (!(profile.sifted_fraction >= 0.0 && profile.sifted_fraction <= 1.0))
        throw std::invalid_argument("sifted fraction must be in [0, 1]");
    if (!(profile.width_fraction > 0.0 && profile.width_fraction <= 1.0))
        throw std::invalid_argument("width fraction must be in (0, 1]");
    const double q = profile.qber_floor.value_or(params.q);
    if (!(q >= 0.0 && q < 0.5))
        throw std::invalid_argument("window error floor must be in [0, 0.5)");
    const double transmission = std::pow(10.0, -loss_db / 10.0);
    const double f = profile.sifted_fraction;
    const double p_signal = params.mu * f * params.eta_bob * transmission;
    const double p_dc_window = params.p_dc * profile.width_fraction;
    const double p_click =
        p_signal + p_dc_window - p_signal * p_dc_window;
    rate_point point;
    point.loss_db = loss_db;
    if (p_click <= 0.0)
        return point;
    point.p_click = p_click;
    const double e = (q * p_signal + 0.5 * p_dc_window) / p_click;
    point.qber = e;
    const double p_m = multiphoton_bound(params.mu * f, params.g2);
    const double beta = std::max(0.0, (p_click - p_m) / p_click);
    if (beta <= 0.0) {
        point.multiphoton_dominated = true;
        return point;
    }
    const double tau_arg =
        params.tau_argument_plain_e ? e : std::min(e / beta, 1.0);
    const double s = 0.5 * p_click *
                     (beta * compression_tau(tau_arg) -
                      params.f_ec * shannon_entropy(e));
    point.s_per_pulse = std::max(0.0, s);
    return point;
}

/// \brief Largest channel loss with positive secret rate; unset means
/// unbounded (the rate never reaches zero).
inline auto max_tolerable_loss(key_rate_params const &params,
                               window_profile const &profile)
    -> std::optional<double> {
    constexpr double probe_db = 400.0;
    if (secret_rate(params, probe_db, profile).s_per_pulse > 0.0)
        return std::nullopt;
    if (secret_rate(params, 0.0, profile).s_per_pulse <= 0.0)
        return 0.0;
    double lo = 0.0;
    double hi = probe_db;
    for (int i = 0; i < 80; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (secret_rate(params, mid, profile).s_per_pulse > 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

/// \brief Critical mean photon number sqrt(2 p_dc / g2); unset marks the
/// unbounded g2 = 0 case.
inline auto critical_mu(double p_dc, double g2) -> std::optional<double> {
    if (!(p_dc >= 0.0) || !(g2 >= 0.0))
        throw std::invalid_argument("p_dc and g2 must be non-negative");
    if (g2 == 0.0)
        return std::nullopt;
    return std::sqrt(2.0 * p_dc / g2);
}

/// \brief Loss budget (dB) of the linearized attenuation model at mean
/// photon number mu: -10 log10((p_dc + mu^2 g2 / 2) / mu).
///
/// This is the budget a source of efficiency mu can spend before the signal
/// falls to the combined dark-count and multiphoton floor; its maximum over
/// mu sits exactly at the critical mean photon number.
inline auto attenuation_limited_loss_db(double mu, double p_dc, double g2)
    -> double {
    if (!(mu > 0.0))
        throw std::invalid_argument("mu must be positive");
    const double floor = p_dc + 0.5 * mu * mu * g2;
    if (floor <= 0.0)
        return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(floor / mu);
}

/// \brief Best linearized loss budget over mu in (0, mu_max]; returns the
/// optimal mu and its budget.
inline auto best_attenuation_limited_loss_db(double p_dc, double g2,
                                             double mu_max = 1.0)
    -> std::pair<double, double> {
    if (!(mu_max > 0.0))
        throw std::invalid_argument("mu_max must be positive");
    double mu_star = mu_max;
    if (auto mu_c = critical_mu(p_dc, g2); mu_c && *mu_c > 0.0)
        mu_star = std::min(mu_max, *mu_c);
    return {mu_star, attenuation_limited_loss_db(mu_star, p_dc, g2)};
}

/// \brief Loss-difference expressed as fiber length, plus absolute reach.
inline auto distance_extension(double loss_db_a, double loss_db_b,
                               double atten_db_per_km) -> double {
    if (!(atten_db_per_km > 0.0))
        throw std::invalid_argument("attenuation must be positive");
    return (loss_db_b - loss_db_a) / atten_db_per_km;
}

inline auto absolute_distance_km(double loss_db, double atten_db_per_km)
    -> double {
    if (!(atten_db_per_km > 0.0))
        throw std::invalid_argument("attenuation must be positive");
    return loss_db / atten_db_per_km;
}

/// \brief Poisson single-photon probability mu exp(-mu).
inline auto poisson_p1(double mu) -> double {
    if (!(mu >= 0.0))
        throw std::invalid_argument("mu must be non-negative");
    return mu * std::exp(-mu);
}

/// \brief Sub-Poissonian vs weak-coherent-pulse comparison of the
/// single-photon probability.
struct wcp_comparison_result {
    /// Lower bound mu - mu^2 g2 on the source's single-photon probability.
    double sps_p1_lower_bound = 0.0;
    /// Poisson reference at mu = 1 (decoy-state ceiling).
    double poisson_p1_at_unity = 0.0;
    /// Poisson reference at mu = 0.5 (typical weak-pulse operating point).
    double typical_wcp_p1 = 0.0;
    /// Source efficiency needed to reach the target single-photon
    /// probability; unset when the g2 makes the target unreachable.
    std::optional<double> break_even_mu{};
    bool beats_target = false;
};

inline auto wcp_comparison(double mu_sps, double g2, double target_p1 = 0.3)
    -> wcp_comparison_result {
    if (!(mu_sps >= 0.0) || !(g2 >= 0.0))
        throw std::invalid_argument("mu and g2 must be non-negative");
    if (!(target_p1 > 0.0))
        throw std::invalid_argument("target P(1) must be positive");
    wcp_comparison_result out;
    out.sps_p1_lower_bound = std::max(0.0, mu_sps - mu_sps * mu_sps * g2);
    out.poisson_p1_at_unity = poisson_p1(1.0);
    out.typical_wcp_p1 = poisson_p1(0.5);
    const double disc = 1.0 - 4.0 * g2 * target_p1;
    if (disc >= 0.0)
        out.break_even_mu = 2.0 * target_p1 / (1.0 + std::sqrt(disc));
    out.beats_target = out.sps_p1_lower_bound > target_p1;
    return out;
}

/// \brief Result of the secret-rate window optimization over a sweep grid.
struct optimize_result {
    std::size_t best_i_dt = 0;
    std::size_t best_i_tc = 0;
    filter_metrics best_metrics;
    double best_s_per_pulse = 0.0;
    std::optional<double> full_s_per_pulse{};
    std::optional<double> gain_over_full{};
    /// Row-major secret rate per cell; NaN marks empty windows.
    std::vector<double> s_map;
    /// False when no cell yields a positive rate.
    bool any_key = false;
};

/// \brief Secret rate of one sweep cell.
///
/// The cell's measured QBER already contains every error source in the
/// stream, so the profile error floor is the cell QBER itself and no
/// separate dark term is added. g2 stays at the params' (unfiltered) value
/// unless a per-cell override is supplied.
inline auto cell_secret_rate(key_rate_params const &params, double loss_db,
                             filter_metrics const &cell,
                             std::optional<double> g2_override = {}) -> double {
    if (!cell.has_qber)
        return std::numeric_limits<double>::quiet_NaN();
    const double e = cell.qber;
    if (e >= 0.5)
        return 0.0;
    const double transmission = std::pow(10.0, -loss_db / 10.0);
    const double f = cell.sifted_fraction;
    const double p_click = params.mu * f * params.eta_bob * transmission;
    if (p_click <= 0.0)
        return 0.0;
    const double g2 = g2_override.value_or(params.g2);
    const double p_m = multiphoton_bound(params.mu * f, g2);
    const double beta = std::max(0.0, (p_click - p_m) / p_click);
    if (beta <= 0.0)
        return 0.0;
    const double tau_arg =
        params.tau_argument_plain_e ? e : std::min(e / beta, 1.0);
    const double s = 0.5 * p_click *
                     (beta * compression_tau(tau_arg) -
                      params.f_ec * shannon_entropy(e));
    return std::max(0.0, s);
}

/// \brief Pick the sweep cell maximizing the secret rate.
///
/// Ties prefer larger width, then smaller |center|, then grid order. The
/// gain compares against the full-width cell with center nearest zero when
/// the grid contains one.
inline auto optimize_window(sweep_grid const &grid,
                            key_rate_params const &params, double loss_db,
                            std::vector<double> const &g2_per_cell = {})
    -> optimize_result {
    params.validate();
    if (grid.cells.empty())
        throw std::invalid_argument("sweep grid is empty");
    if (!g2_per_cell.empty() && g2_per_cell.size() != grid.cells.size())
        throw std::invalid_argument("per-cell g2 override size mismatch");
    optimize_result out;
    out.s_map.assign(grid.cells.size(), 0.0);
    bool have_best = false;
    double best_s = -1.0;
    for (std::size_t i = 0; i < grid.dt_values_ps.size(); ++i) {
        for (std::size_t j = 0; j < grid.tc_values_ps.size(); ++j) {
            const std::size_t idx = i * grid.tc_values_ps.size() + j;
            std::optional<double> g2_cell{};
            if (!g2_per_cell.empty())
                g2_cell = g2_per_cell[idx];
            const double s =
                cell_secret_rate(params, loss_db, grid.cells[idx], g2_cell);
            out.s_map[idx] = s;
            if (std::isnan(s))
                continue;
            bool better = false;
            if (!have_best || s > best_s) {
                better = true;
            } else if (s == best_s) {
                const auto best_dt = grid.dt_values_ps[out.best_i_dt];
                const auto dt = grid.dt_values_ps[i];
                const auto best_abs_tc =
                    std::abs(grid.tc_values_ps[out.best_i_tc]);
                const auto abs_tc = std::abs(grid.tc_values_ps[j]);
                if (dt > best_dt ||
                    (dt == best_dt && abs_tc < best_abs_tc))
                    better = true;
            }
            if (better) {
                have_best = true;
                best_s = s;
                out.best_i_dt = i;
                out.best_i_tc = j;
            }
        }
    }
    if (!have_best)
        throw std::invalid_argument("every sweep cell is empty");
    out.best_metrics = grid.at(out.best_i_dt, out.best_i_tc);
    out.best_s_per_pulse = best_s;
    out.any_key = best_s > 0.0;
    // Full-window reference: maximal width present, center nearest zero.
    std::optional<std::size_t> full_idx{};
    if (!grid.dt_values_ps.empty()) {
        std::size_t i_full = 0;
        for (std::size_t i = 1; i < grid.dt_values_ps.size(); ++i)
            if (grid.dt_values_ps[i] > grid.dt_values_ps[i_full])
                i_full = i;
        if (grid.dt_values_ps[i_full] >=
            grid.cells.front().interval.period_ps) {
            std::size_t j_best = 0;
            for (std::size_t j = 1; j < grid.tc_values_ps.size(); ++j)
                if (std::abs(grid.tc_values_ps[j]) <
                    std::abs(grid.tc_values_ps[j_best]))
                    j_best = j;
            full_idx = i_full * grid.tc_values_ps.size() + j_best;
        }
    }
    if (full_idx) {
        const double s_full = out.s_map[*full_idx];
        if (!std::isnan(s_full)) {
            out.full_s_per_pulse = s_full;
            if (s_full > 0.0)
                out.gain_over_full = best_s / s_full - 1.0;
        }
    }
    return out;
}

/// \brief Evaluate a rate-loss curve on an inclusive loss grid.
inline auto rate_curve(key_rate_params const &params,
                       window_profile const &profile, double loss_lo_db,
                       double loss_hi_db, double step_db)
    -> std::vector<rate_point> {
    if (!(step_db > 0.0) || loss_hi_db < loss_lo_db)
        throw std::invalid_argument("invalid loss grid");
    std::vector<rate_point> out;
    const auto n = static_cast<std::size_t>(
                       std::floor((loss_hi_db - loss_lo_db) / step_db + 1e-9)) +
                   1;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(
            secret_rate(params, loss_lo_db + static_cast<double>(i) * step_db,
                        profile));
    return out;
}

/// \brief Export a rate curve as CSV with `#` metadata lines.
inline void write_rate_curve_csv(std::ostream &out,
                                 std::vector<rate_point> const &points,
                                 double repetition_rate_hz,
                                 std::vector<std::string> const &metadata = {}) {
    for (auto const &line : metadata)
        out << "# " << line << '\n';
    out << "loss_db,qber,p_click,secret_bits_per_pulse,secret_bits_per_second\n";
    for (auto const &p : points) {
        out << p.loss_db << ',' << p.qber << ',' << p.p_click << ','
            << p.s_per_pulse << ',' << p.s_per_pulse * repetition_rate_hz
            << '\n';
    }
    if (!out)
        throw std::runtime_error("failed writing rate curve CSV");
}

/// \brief Export an optimizer map as the sweep CSV extended with an
/// s_per_pulse column.
inline void write_optimize_csv(std::ostream &out, sweep_grid const &grid,
                               optimize_result const &result,
                               std::vector<std::string> const &metadata = {}) {
    for (auto const &line : metadata)
        out << "# " << line << '\n';
    out << "# best_dt_ps=" << grid.dt_values_ps[result.best_i_dt]
        << " best_tc_ps=" << grid.tc_values_ps[result.best_i_tc] << '\n';
    out << "dt_ps,tc_ps,qber,sifted_fraction,n_correct,n_wrong,s_per_pulse\n";
    for (std::size_t i = 0; i < grid.dt_values_ps.size(); ++i) {
        for (std::size_t j = 0; j < grid.tc_values_ps.size(); ++j) {
            const std::size_t idx = i * grid.tc_values_ps.size() + j;
            auto const &m = grid.cells[idx];
            out << grid.dt_values_ps[i] << ',' << grid.tc_values_ps[j] << ',';
            if (m.has_qber)
                out << m.qber;
            else
                out << "nan";
            out << ',' << m.sifted_fraction << ',' << m.n_correct << ','
                << m.n_wrong << ',';
            if (std::isnan(result.s_map[idx]))
                out << "nan";
            else
                out << result.s_map[idx];
            out << '\n';
        }
    }
    if (!out)
        throw std::runtime_error("failed writing optimizer CSV");
}

} // namespace sqkd
