// Command-line front end: simulate tag streams, analyze recorded streams,
// optimize acceptance windows, compute rate-loss curves, and monitor
// long-running acquisitions block by block.
//
// Exit codes: 0 success, 1 analysis produced no usable result, 2 I/O error,
// 3 configuration error.
#include <sqkd/config.hpp>
#include <sqkd/core.hpp>
#include <sqkd/filtering.hpp>
#include <sqkd/keyrate.hpp>
#include <sqkd/photonstats.hpp>
#include <sqkd/presets.hpp>
#include <sqkd/pulse.hpp>
#include <sqkd/simulate.hpp>
#include <sqkd/ttag_io.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
using namespace sqkd;

constexpr int exit_ok = 0;
constexpr int exit_empty = 1;
constexpr int exit_io = 2;
constexpr int exit_config = 3;

/// Raised when an analysis completes without a usable result.
struct analysis_empty : std::exception {
    explicit analysis_empty(std::string msg) : message(std::move(msg)) {}
    [[nodiscard]] auto what() const noexcept -> const char * override {
        return message.c_str();
    }
    std::string message;
};

/// Resolves a relative output path against SQKD_OUT_DIR when that variable
/// is set; absolute paths and "-" (stdout) pass through unchanged.
auto resolve_out(std::string const &path) -> std::string {
    if (path == "-" || path.empty())
        return path;
    const std::filesystem::path p(path);
    if (p.is_absolute())
        return path;
    const char *dir = std::getenv("SQKD_OUT_DIR");
    if (dir == nullptr || *dir == '\0')
        return path;
    const auto full = std::filesystem::path(dir) / p;
    std::error_code ec;
    std::filesystem::create_directories(full.parent_path(), ec);
    return full.string();
}

/// Strips a trailing .csv or .ttag extension so multi-file outputs can use
/// the remainder as their common base name.
auto strip_known_extension(std::string const &path) -> std::string {
    const std::filesystem::path p(path);
    const auto ext = p.extension().string();
    if (ext == ".csv" || ext == ".ttag" || ext == ".jsonl")
        return (p.parent_path() / p.stem()).string();
    return path;
}

template <typename Writer>
void write_text_file(std::string const &path, Writer &&writer) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot open " + path + " for writing");
    writer(out);
    if (!out)
        throw std::runtime_error("failed writing " + path);
}

// ------------------------------------------------------------- flag groups

/// Source and receiver model overrides shared by the simulate subcommand.
struct model_flags {
    double mu = 0.0;
    double g2 = 0.0;
    double loss_db = 0.0;
    double crosstalk_q = 0.0;
    double efficiency = 0.0;
    double dark_hz = 0.0;
    std::string input_pol;
    double pulse_decay = 0.0;
    double pulse_fwhm = 0.0;
    double pulse_origin = 0.0;
    std::uint64_t dead_time = 0;
    std::uint64_t period = 0;
};

void add_model_options(CLI::App *cmd, model_flags &f) {
    cmd->add_option("--mu", f.mu, "mean photon number per pulse");
    cmd->add_option("--g2", f.g2, "second-order correlation at zero delay");
    cmd->add_option("--loss", f.loss_db, "channel loss in dB");
    cmd->add_option("--crosstalk-q", f.crosstalk_q,
                    "polarization crosstalk fraction");
    cmd->add_option("--efficiency", f.efficiency,
                    "detector efficiency applied to all four channels");
    cmd->add_option("--dark", f.dark_hz,
                    "dark count rate in Hz applied to all four channels");
    cmd->add_option("--input", f.input_pol,
                    "input polarization channel (H, V, D or A)");
    cmd->add_option("--pulse-decay", f.pulse_decay,
                    "emission lifetime in ps");
    cmd->add_option("--pulse-fwhm", f.pulse_fwhm,
                    "timing response FWHM in ps");
    cmd->add_option("--pulse-origin", f.pulse_origin,
                    "pulse origin within the period in ps");
    cmd->add_option("--dead-time", f.dead_time,
                    "per-channel dead time in ps");
    cmd->add_option("--period", f.period, "clock period in ps");
}

void patch_model(CLI::App const *cmd, model_flags const &f, json &model) {
    if (cmd->count("--mu") > 0)
        model["mu"] = f.mu;
    if (cmd->count("--g2") > 0)
        model["g2"] = f.g2;
    if (cmd->count("--loss") > 0)
        model["channel_loss_db"] = f.loss_db;
    if (cmd->count("--crosstalk-q") > 0)
        model["crosstalk_q"] = f.crosstalk_q;
    if (cmd->count("--efficiency") > 0)
        model["detector_efficiency"] = f.efficiency;
    if (cmd->count("--dark") > 0)
        model["dark_rate_hz"] = f.dark_hz;
    if (cmd->count("--input") > 0)
        model["input_polarization"] =
            to_string(parse_channel(f.input_pol));
    if (cmd->count("--pulse-decay") > 0)
        model["pulse"]["decay_ps"] = f.pulse_decay;
    if (cmd->count("--pulse-fwhm") > 0)
        model["pulse"]["irf_fwhm_ps"] = f.pulse_fwhm;
    if (cmd->count("--pulse-origin") > 0)
        model["pulse"]["origin_ps"] = f.pulse_origin;
    if (cmd->count("--dead-time") > 0)
        model["dead_time_ps"] = f.dead_time;
    if (cmd->count("--period") > 0)
        model["period_ps"] = f.period;
}

void patch_synthetic(CLI::App const *cmd, model_flags const &f, double snr,
                     bool have_snr, json &synth) {
    if (cmd->count("--pulse-decay") > 0)
        synth["signal"]["decay_ps"] = f.pulse_decay;
    if (cmd->count("--pulse-fwhm") > 0)
        synth["signal"]["irf_fwhm_ps"] = f.pulse_fwhm;
    if (cmd->count("--pulse-origin") > 0)
        synth["signal"]["origin_ps"] = f.pulse_origin;
    if (cmd->count("--crosstalk-q") > 0)
        synth["crosstalk_fraction"] = f.crosstalk_q;
    if (cmd->count("--period") > 0)
        synth["period_ps"] = f.period;
    if (have_snr) {
        const auto period = synth.at("period_ps").get<std::uint64_t>();
        synth["noise_density_per_ps"] = noise_density_for_snr(snr, period);
    }
}

/// Key-rate parameter overrides shared by optimize and ratecurve.
struct param_flags {
    double mu = 0.0;
    double g2 = 0.0;
    double p_dc = 0.0;
    double q = 0.0;
    double f_ec = 0.0;
    double eta_bob = 0.0;
    bool plain_e = false;
    std::uint64_t period = 0;
};

void add_param_options(CLI::App *cmd, param_flags &f) {
    cmd->add_option("--mu", f.mu, "mean photon number per pulse");
    cmd->add_option("--g2", f.g2, "second-order correlation at zero delay");
    cmd->add_option("--pdc", f.p_dc, "summed dark probability per pulse");
    cmd->add_option("--q", f.q, "polarization error floor");
    cmd->add_option("--f-ec", f.f_ec, "error-correction inefficiency");
    cmd->add_option("--eta-bob", f.eta_bob, "receiver transmittance");
    cmd->add_flag("--plain-e", f.plain_e,
                  "use the plain error rate in the compression term");
    cmd->add_option("--period", f.period, "clock period in ps");
}

void patch_params(CLI::App const *cmd, param_flags const &f, json &params) {
    if (cmd->count("--mu") > 0)
        params["mu"] = f.mu;
    if (cmd->count("--g2") > 0)
        params["g2"] = f.g2;
    if (cmd->count("--pdc") > 0)
        params["p_dc"] = f.p_dc;
    if (cmd->count("--q") > 0)
        params["q"] = f.q;
    if (cmd->count("--f-ec") > 0)
        params["f_ec"] = f.f_ec;
    if (cmd->count("--eta-bob") > 0)
        params["eta_bob"] = f.eta_bob;
    if (cmd->count("--plain-e") > 0)
        params["tau_argument_plain_e"] = f.plain_e;
    if (cmd->count("--period") > 0)
        params["period_ps"] = f.period;
}

void merge_config_file(std::string const &config_path, json &resolved) {
    if (config_path.empty())
        return;
    resolved.merge_patch(load_json_file(config_path));
}

// ------------------------------------------------------------- subcommands

struct simulate_args {
    std::string preset = "testbed";
    double duration_s = 60.0;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    std::string out;
    std::string config;
    model_flags mf;
    double snr = 0.0;
    std::uint32_t hist_bin = 25;
};

auto run_simulate(CLI::App const *cmd, simulate_args &a) -> int {
    const auto fig5 = find_fig5_case(a.preset);
    if (!fig5 && a.preset != "testbed")
        throw std::invalid_argument("unknown preset: " + a.preset);

    if (fig5) {
        json resolved{{"command", "simulate"},
                      {"preset", a.preset},
                      {"histogram_bin_ps", a.hist_bin},
                      {"synthetic", synthetic_to_json(fig5_model(*fig5))}};
        patch_synthetic(cmd, a.mf, a.snr, cmd->count("--snr") > 0,
                        resolved["synthetic"]);
        merge_config_file(a.config, resolved);
        const auto model = synthetic_from_json(resolved.at("synthetic"));
        const auto bin = resolved.at("histogram_bin_ps").get<std::uint32_t>();
        const auto pair = synthetic_histograms(model, bin);
        const auto base = strip_known_extension(
            resolve_out(a.out.empty() ? a.preset : a.out));
        write_text_file(base + ".correct.csv", [&](std::ostream &os) {
            write_density_csv(os, pair.correct, {"channel=correct"});
        });
        write_text_file(base + ".wrong.csv", [&](std::ostream &os) {
            write_density_csv(os, pair.wrong, {"channel=wrong"});
        });
        write_sidecar(base, resolved);
        std::cout << "wrote " << base << ".correct.csv and " << base
                  << ".wrong.csv: analytic arrival-time densities, "
                  << pair.correct.n_bins() << " bins of " << bin
                  << " ps\n";
        return exit_ok;
    }

    json resolved{{"command", "simulate"},
                  {"preset", a.preset},
                  {"duration_s", a.duration_s},
                  {"seed", a.seed},
                  {"model", model_to_json(testbed_model())}};
    if (cmd->count("--duration") > 0)
        resolved["duration_s"] = a.duration_s;
    if (cmd->count("--seed") > 0)
        resolved["seed"] = a.seed;
    patch_model(cmd, a.mf, resolved["model"]);
    merge_config_file(a.config, resolved);

    const auto model = model_from_json(resolved.at("model"));
    simulation_options opt;
    opt.duration_s = resolved.at("duration_s").get<double>();
    opt.seed = resolved.at("seed").get<std::uint64_t>();
    opt.threads = a.threads;
    const auto stream = simulate(model, opt);

    const auto out = resolve_out(a.out.empty() ? "sim.ttag" : a.out);
    write_timetag_file(out, stream);
    write_sidecar(out, resolved);

    std::array<std::uint64_t, 4> counts{};
    for (const auto &t : stream.tags)
        ++counts[static_cast<std::size_t>(t.ch)];
    std::cout << "wrote " << out << ": " << stream.tags.size()
              << " tags over " << opt.duration_s << " s\n";
    for (int c = 0; c < 4; ++c)
        std::cout << "  " << to_string(static_cast<channel>(c)) << " "
                  << counts[c] << " (" << counts[c] / opt.duration_s
                  << " Hz)\n";
    return exit_ok;
}

struct analyze_args {
    std::string input;
    std::string out = "analysis";
    std::string input_pol = "H";
    std::int64_t window = 0;
    std::int64_t center = 0;
    bool absolute_center = false;
    std::uint32_t peak_bin = 25;
    std::uint64_t corr_bin = 250;
    std::uint64_t span = 250000;
    bool raw_std = false;
    bool no_sync = false;
    unsigned threads = 1;
    std::string config;
};

auto estimate_to_json(correlation_histogram const &hist,
                      clock_config const &clock, bool raw_std) -> json {
    try {
        const auto est = estimate_g2(hist, clock, raw_std);
        return {{"g2", est.g2_zero},
                {"sigma", est.sigma},
                {"n_zero", est.n_zero},
                {"side_windows", est.side_peak_areas.size()}};
    } catch (std::invalid_argument const &e) {
        return {{"g2", nullptr}, {"error", e.what()}};
    }
}

auto metrics_to_json(filter_metrics const &m) -> json {
    json j{{"width_ps", m.interval.width_ps},
           {"start_ps", m.interval.start_ps},
           {"accepted_total", m.accepted_total},
           {"sifted_fraction", m.sifted_fraction},
           {"n_correct", m.n_correct},
           {"n_wrong", m.n_wrong}};
    j["accepted_by_channel"] = m.accepted_by_channel;
    if (m.has_qber)
        j["qber"] = m.qber;
    else
        j["qber"] = nullptr;
    return j;
}

auto run_analyze(CLI::App const *cmd, analyze_args &a) -> int {
    json resolved{{"command", "analyze"},
                  {"input_polarization", a.input_pol},
                  {"synchronize", !a.no_sync},
                  {"peak_bin_ps", a.peak_bin},
                  {"corr_bin_ps", a.corr_bin},
                  {"corr_span_ps", a.span},
                  {"raw_std", a.raw_std}};
    if (cmd->count("--window") > 0)
        resolved["window"] = {{"width_ps", a.window},
                              {"center_offset_ps", a.center},
                              {"absolute_center", a.absolute_center}};
    else
        resolved["window"] = nullptr;
    merge_config_file(a.config, resolved);

    const auto pol =
        parse_channel(resolved.at("input_polarization").get<std::string>());
    const bool do_sync = resolved.at("synchronize").get<bool>();
    const auto peak_bin = resolved.at("peak_bin_ps").get<std::uint32_t>();
    const auto corr_bin = resolved.at("corr_bin_ps").get<std::uint64_t>();
    const auto span = resolved.at("corr_span_ps").get<std::uint64_t>();
    const bool raw_std = resolved.at("raw_std").get<bool>();
    std::optional<acceptance_window> window;
    if (!resolved.at("window").is_null()) {
        const auto &w = resolved.at("window");
        window = acceptance_window{
            w.at("width_ps").get<std::uint64_t>(),
            w.value("center_offset_ps", std::int64_t{0}),
            w.value("absolute_center", false)};
    }

    auto stream = read_timetag_file(a.input);
    if (stream.tags.empty())
        throw analysis_empty("input stream holds no tags");

    std::array<std::int64_t, 4> delays{};
    if (do_sync) {
        delays = synchronize_channels(stream.tags, stream.clock, pol,
                                      peak_bin);
        stream.tags = apply_delays(stream.tags, stream.clock, delays);
    }

    const auto grid =
        sweep(stream.tags, stream.clock, pol,
              default_dt_values(stream.clock.period_ps),
              default_tc_values(stream.clock.period_ps), peak_bin);

    const auto base = strip_known_extension(resolve_out(a.out));
    write_text_file(base + ".sweep.csv", [&](std::ostream &os) {
        sweep_to_csv(os, grid);
    });

    const auto hist = correlate(stream.tags, corr_bin, span, a.threads);
    write_text_file(base + ".g2.csv", [&](std::ostream &os) {
        write_correlation_csv(os, hist);
    });

    json summary{{"n_tags", stream.tags.size()},
                 {"period_ps", stream.clock.period_ps},
                 {"peak_phase_ps", grid.peak_phase_ps},
                 {"delays_ps", delays}};
    const double span_s =
        stream.tags.size() > 1
            ? static_cast<double>(stream.tags.back().timestamp_ps -
                                  stream.tags.front().timestamp_ps) /
                  1e12
            : 0.0;
    summary["duration_s"] = span_s;

    const acceptance_window full{stream.clock.period_ps, 0, false};
    const auto full_metrics = metrics_for_window(
        stream.tags, stream.clock, pol, full, grid.peak_phase_ps, peak_bin);
    summary["full_window"] = metrics_to_json(full_metrics);
    summary["unfiltered_g2"] = estimate_to_json(hist, stream.clock, raw_std);
    if (summary.at("unfiltered_g2").at("g2").is_null())
        throw analysis_empty("too few coincidences for a g2 estimate");

    if (window) {
        const auto metrics =
            metrics_for_window(stream.tags, stream.clock, pol, *window,
                               grid.peak_phase_ps, peak_bin);
        const auto kept = apply_window(stream.tags, stream.clock, *window,
                                       grid.peak_phase_ps);
        json w = metrics_to_json(metrics);
        if (kept.empty())
            w["g2"] = nullptr;
        else
            w["g2"] = estimate_to_json(
                correlate(kept, corr_bin, span, a.threads), stream.clock,
                raw_std);
        summary["window"] = w;
    } else {
        summary["window"] = nullptr;
    }

    write_text_file(base + ".summary.json", [&](std::ostream &os) {
        os << summary.dump(2) << '\n';
    });
    write_sidecar(base, resolved);

    std::cout << "analyzed " << stream.tags.size() << " tags; outputs at "
              << base << ".{sweep.csv,g2.csv,summary.json}\n";
    const auto &g2j = summary.at("unfiltered_g2");
    std::cout << "  g2(0) = " << g2j.at("g2").get<double>() << " +- "
              << g2j.at("sigma").get<double>() << "\n";
    if (full_metrics.has_qber)
        std::cout << "  full-window qber = " << full_metrics.qber << "\n";
    return exit_ok;
}

struct optimize_args {
    std::string input;
    std::string preset;
    std::string out = "optimize";
    std::string input_pol = "H";
    double loss_db = 0.0;
    bool filtered_g2 = false;
    bool no_sync = false;
    std::uint32_t peak_bin = 25;
    std::uint32_t density_bin = 25;
    std::uint64_t corr_bin = 250;
    std::uint64_t span = 250000;
    unsigned threads = 1;
    std::string config;
    param_flags pf;
};

auto optimize_summary(sweep_grid const &grid, optimize_result const &result,
                      double loss_db) -> json {
    json j{{"loss_db", loss_db},
           {"best_dt_ps", grid.dt_values_ps[result.best_i_dt]},
           {"best_tc_ps", grid.tc_values_ps[result.best_i_tc]},
           {"best_s_per_pulse", result.best_s_per_pulse},
           {"best_qber", result.best_metrics.has_qber
                             ? json(result.best_metrics.qber)
                             : json(nullptr)},
           {"best_sifted_fraction", result.best_metrics.sifted_fraction},
           {"any_key", result.any_key}};
    if (result.full_s_per_pulse)
        j["full_s_per_pulse"] = *result.full_s_per_pulse;
    else
        j["full_s_per_pulse"] = nullptr;
    if (result.gain_over_full)
        j["gain_over_full"] = *result.gain_over_full;
    else
        j["gain_over_full"] = nullptr;
    return j;
}

void report_optimize(sweep_grid const &grid, optimize_result const &result) {
    std::cout << "best window: dt = " << grid.dt_values_ps[result.best_i_dt]
              << " ps, tc = " << grid.tc_values_ps[result.best_i_tc]
              << " ps, S = " << result.best_s_per_pulse
              << " bits/pulse\n";
    if (result.full_s_per_pulse && result.gain_over_full)
        std::cout << "unfiltered S = " << *result.full_s_per_pulse
                  << " bits/pulse, gain = " << 100.0 * *result.gain_over_full
                  << "%\n";
}

auto run_optimize(CLI::App const *cmd, optimize_args &a) -> int {
    const bool preset_mode = !a.preset.empty();
    if (preset_mode && !a.input.empty())
        throw std::invalid_argument("--preset and --input are exclusive");
    if (!preset_mode && a.input.empty())
        throw std::invalid_argument("either --preset or --input is required");

    if (preset_mode) {
        const auto fig5 = find_fig5_case(a.preset);
        if (!fig5)
            throw std::invalid_argument("unknown preset: " + a.preset);
        json resolved{{"command", "optimize"},
                      {"preset", a.preset},
                      {"loss_db", a.loss_db},
                      {"density_bin_ps", a.density_bin},
                      {"synthetic", synthetic_to_json(fig5_model(*fig5))},
                      {"params", params_to_json(fig5_key_rate_params())}};
        patch_params(cmd, a.pf, resolved["params"]);
        merge_config_file(a.config, resolved);

        const auto model = synthetic_from_json(resolved.at("synthetic"));
        const auto params = params_from_json(resolved.at("params"));
        params.validate();
        const auto loss = resolved.at("loss_db").get<double>();
        const auto bin = resolved.at("density_bin_ps").get<std::uint32_t>();
        const auto pair = synthetic_histograms(model, bin);
        const auto grid =
            sweep_density(pair.correct, pair.wrong,
                          default_dt_values(model.period_ps),
                          default_tc_values(model.period_ps));
        optimize_result result;
        try {
            result = optimize_window(grid, params, loss);
        } catch (std::invalid_argument const &e) {
            throw analysis_empty(e.what());
        }
        const auto base = strip_known_extension(resolve_out(a.out));
        write_text_file(base + ".csv", [&](std::ostream &os) {
            write_optimize_csv(os, grid, result, {"preset=" + a.preset});
        });
        write_text_file(base + ".summary.json", [&](std::ostream &os) {
            os << optimize_summary(grid, result, loss).dump(2) << '\n';
        });
        write_sidecar(base, resolved);
        report_optimize(grid, result);
        return result.any_key ? exit_ok : exit_empty;
    }

    json resolved{{"command", "optimize"},
                  {"input_polarization", a.input_pol},
                  {"loss_db", a.loss_db},
                  {"synchronize", !a.no_sync},
                  {"peak_bin_ps", a.peak_bin},
                  {"filtered_g2", a.filtered_g2},
                  {"corr_bin_ps", a.corr_bin},
                  {"corr_span_ps", a.span},
                  {"params", params_to_json(testbed_key_rate_params())}};
    patch_params(cmd, a.pf, resolved["params"]);
    merge_config_file(a.config, resolved);

    const auto pol =
        parse_channel(resolved.at("input_polarization").get<std::string>());
    const auto params = params_from_json(resolved.at("params"));
    params.validate();
    const auto loss = resolved.at("loss_db").get<double>();
    const auto peak_bin = resolved.at("peak_bin_ps").get<std::uint32_t>();
    const bool filtered_g2 = resolved.at("filtered_g2").get<bool>();
    const auto corr_bin = resolved.at("corr_bin_ps").get<std::uint64_t>();
    const auto span = resolved.at("corr_span_ps").get<std::uint64_t>();

    auto stream = read_timetag_file(a.input);
    if (stream.tags.empty())
        throw analysis_empty("input stream holds no tags");
    if (resolved.at("synchronize").get<bool>()) {
        const auto delays =
            synchronize_channels(stream.tags, stream.clock, pol, peak_bin);
        stream.tags = apply_delays(stream.tags, stream.clock, delays);
    }
    const auto grid = sweep(stream.tags, stream.clock, pol,
                            default_dt_values(stream.clock.period_ps),
                            default_tc_values(stream.clock.period_ps),
                            peak_bin);

    std::vector<double> g2_cells;
    if (filtered_g2) {
        g2_cells.assign(grid.cells.size(), params.g2);
        const auto n_tc = grid.tc_values_ps.size();
        for (std::size_t i = 0; i < grid.dt_values_ps.size(); ++i) {
            const acceptance_window w{grid.dt_values_ps[i], 0, false};
            const auto kept = apply_window(stream.tags, stream.clock, w,
                                           grid.peak_phase_ps);
            double value = params.g2;
            if (!kept.empty()) {
                try {
                    value = estimate_g2(correlate(kept, corr_bin, span,
                                                  a.threads),
                                        stream.clock)
                                .g2_zero;
                } catch (std::invalid_argument const &) {
                }
            }
            for (std::size_t j = 0; j < n_tc; ++j)
                g2_cells[i * n_tc + j] = value;
        }
    }

    optimize_result result;
    try {
        result = optimize_window(grid, params, loss, g2_cells);
    } catch (std::invalid_argument const &e) {
        throw analysis_empty(e.what());
    }
    const auto base = strip_known_extension(resolve_out(a.out));
    write_text_file(base + ".csv", [&](std::ostream &os) {
        write_optimize_csv(os, grid, result);
    });
    write_text_file(base + ".summary.json", [&](std::ostream &os) {
        os << optimize_summary(grid, result, loss).dump(2) << '\n';
    });
    write_sidecar(base, resolved);
    report_optimize(grid, result);
    return result.any_key ? exit_ok : exit_empty;
}

struct ratecurve_args {
    std::string out = "ratecurve";
    double loss_min = 0.0;
    double loss_max = 45.0;
    double loss_step = 0.5;
    std::vector<std::string> profiles;
    std::string config;
    param_flags pf;
};

auto parse_profile(std::string const &text) -> window_profile {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':'))
        parts.push_back(item);
    if (parts.size() < 3 || parts.size() > 4)
        throw std::invalid_argument(
            "profile must be label:sifted_fraction:width_fraction[:floor]");
    window_profile p;
    p.label = parts[0];
    try {
        p.sifted_fraction = std::stod(parts[1]);
        p.width_fraction = std::stod(parts[2]);
        if (parts.size() == 4)
            p.qber_floor = std::stod(parts[3]);
    } catch (std::exception const &) {
        throw std::invalid_argument("cannot parse profile: " + text);
    }
    return p;
}

auto profile_to_json(window_profile const &p) -> json {
    json j{{"label", p.label},
           {"sifted_fraction", p.sifted_fraction},
           {"width_fraction", p.width_fraction}};
    if (p.qber_floor)
        j["qber_floor"] = *p.qber_floor;
    else
        j["qber_floor"] = nullptr;
    return j;
}

auto profile_from_json(json const &j) -> window_profile {
    window_profile p;
    p.label = j.value("label", std::string("profile"));
    p.sifted_fraction = j.value("sifted_fraction", 1.0);
    p.width_fraction = j.value("width_fraction", 1.0);
    if (j.contains("qber_floor") && !j.at("qber_floor").is_null())
        p.qber_floor = j.at("qber_floor").get<double>();
    return p;
}

auto run_ratecurve(CLI::App const *cmd, ratecurve_args &a) -> int {
    json resolved{{"command", "ratecurve"},
                  {"loss_min_db", a.loss_min},
                  {"loss_max_db", a.loss_max},
                  {"loss_step_db", a.loss_step},
                  {"params", params_to_json(testbed_key_rate_params())}};
    json profiles = json::array();
    if (a.profiles.empty()) {
        for (const auto &p : testbed_window_profiles())
            profiles.push_back(profile_to_json(p));
    } else {
        for (const auto &text : a.profiles)
            profiles.push_back(profile_to_json(parse_profile(text)));
    }
    resolved["profiles"] = profiles;
    patch_params(cmd, a.pf, resolved["params"]);
    merge_config_file(a.config, resolved);

    const auto params = params_from_json(resolved.at("params"));
    params.validate();
    const double lo = resolved.at("loss_min_db").get<double>();
    const double hi = resolved.at("loss_max_db").get<double>();
    const double step = resolved.at("loss_step_db").get<double>();

    const auto base = strip_known_extension(resolve_out(a.out));
    bool any_key = false;
    for (const auto &pj : resolved.at("profiles")) {
        const auto profile = profile_from_json(pj);
        const auto curve = rate_curve(params, profile, lo, hi, step);
        for (const auto &pt : curve)
            any_key = any_key || pt.s_per_pulse > 0.0;
        std::ostringstream meta;
        meta << "profile=" << profile.label
             << " sifted_fraction=" << profile.sifted_fraction
             << " width_fraction=" << profile.width_fraction;
        write_text_file(base + "." + profile.label + ".csv",
                        [&](std::ostream &os) {
                            write_rate_curve_csv(
                                os, curve, params.clock.repetition_rate_hz(),
                                {meta.str()});
                        });
        const auto max_loss = max_tolerable_loss(params, profile);
        std::cout << "profile " << profile.label << ": ";
        if (max_loss)
            std::cout << "max tolerable loss " << *max_loss << " dB\n";
        else
            std::cout << "no positive-rate region\n";
    }
    write_sidecar(base, resolved);
    if (!any_key) {
        std::cerr << "no profile yields a positive rate on this loss grid\n";
        return exit_empty;
    }
    return exit_ok;
}

struct monitor_args {
    std::string input;
    std::string out = "-";
    std::string input_pol = "H";
    double block_s = 60.0;
    double reference_g2 = 0.089;
    double alarm_k = 3.0;
    std::uint64_t corr_bin = 250;
    std::uint64_t span = 250000;
    std::uint64_t period = 12500;
    bool raw_std = false;
    std::string config;
};

auto run_monitor(CLI::App const *cmd, monitor_args &a) -> int {
    json resolved{{"command", "monitor"},
                  {"input_polarization", a.input_pol},
                  {"block_s", a.block_s},
                  {"reference_g2", a.reference_g2},
                  {"alarm_k", a.alarm_k},
                  {"corr_bin_ps", a.corr_bin},
                  {"corr_span_ps", a.span},
                  {"raw_std", a.raw_std},
                  {"period_ps", a.period}};
    merge_config_file(a.config, resolved);

    const auto pol =
        parse_channel(resolved.at("input_polarization").get<std::string>());
    tag_stream stream;
    if (a.input == "-") {
        stream = read_timetag_csv(
            std::cin,
            clock_config{resolved.at("period_ps").get<std::uint64_t>()});
    } else {
        stream = read_timetag_file(a.input);
    }
    if (cmd->count("--period") > 0)
        stream.clock.period_ps = resolved.at("period_ps").get<std::uint64_t>();
    if (stream.tags.empty())
        throw analysis_empty("input stream holds no tags");

    const auto blocks = monitor_blocks(
        stream.tags, stream.clock, pol, resolved.at("block_s").get<double>(),
        resolved.at("reference_g2").get<double>(),
        resolved.at("alarm_k").get<double>(),
        resolved.at("corr_bin_ps").get<std::uint64_t>(),
        resolved.at("corr_span_ps").get<std::uint64_t>(),
        resolved.at("raw_std").get<bool>());

    std::size_t valid = 0;
    std::size_t alarms = 0;
    for (const auto &b : blocks) {
        valid += b.valid ? 1 : 0;
        alarms += b.alarm ? 1 : 0;
    }
    const auto out = resolve_out(a.out);
    if (out == "-") {
        write_monitor_jsonl(std::cout, blocks);
    } else {
        write_text_file(out, [&](std::ostream &os) {
            write_monitor_jsonl(os, blocks);
        });
        write_sidecar(out, resolved);
    }
    std::cerr << blocks.size() << " blocks, " << valid << " valid, "
              << alarms << " alarms\n";
    if (valid == 0)
        throw analysis_empty("no block yielded a valid estimate");
    return exit_ok;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"single-photon BB84 time-tag simulator and analysis tool"};
    app.require_subcommand(1);

    simulate_args sim;
    auto *cmd_sim = app.add_subcommand(
        "simulate", "generate a time-tag stream or analytic densities");
    cmd_sim->add_option("--preset", sim.preset,
                        "testbed or fig5-case1..fig5-case4");
    cmd_sim->add_option("--duration", sim.duration_s, "duration in seconds");
    cmd_sim->add_option("--seed", sim.seed, "random seed");
    cmd_sim->add_option("--threads", sim.threads, "worker threads");
    cmd_sim->add_option("--out", sim.out, "output file (.ttag or .csv)");
    cmd_sim->add_option("--config", sim.config,
                        "JSON config overriding the flags");
    cmd_sim->add_option("--snr", sim.snr,
                        "signal-to-background ratio for analytic presets");
    cmd_sim->add_option("--bin", sim.hist_bin,
                        "bin width for analytic densities in ps");
    add_model_options(cmd_sim, sim.mf);

    analyze_args ana;
    auto *cmd_ana = app.add_subcommand(
        "analyze", "synchronize, sweep windows and estimate g2");
    cmd_ana->add_option("--input", ana.input, "time-tag file")->required();
    cmd_ana->add_option("--out", ana.out, "output base name");
    cmd_ana->add_option("--input-pol", ana.input_pol,
                        "input polarization channel");
    cmd_ana->add_option("--window", ana.window,
                        "acceptance window width in ps");
    cmd_ana->add_option("--center", ana.center,
                        "window center offset from the peak in ps");
    cmd_ana->add_flag("--absolute-center", ana.absolute_center,
                      "treat --center as an absolute phase");
    cmd_ana->add_option("--peak-bin", ana.peak_bin,
                        "histogram bin width for peak finding in ps");
    cmd_ana->add_option("--corr-bin", ana.corr_bin,
                        "correlation bin width in ps");
    cmd_ana->add_option("--span", ana.span,
                        "full correlation span in ps");
    cmd_ana->add_flag("--raw-std", ana.raw_std,
                      "report the raw side-peak spread as sigma");
    cmd_ana->add_flag("--no-sync", ana.no_sync,
                      "skip channel synchronization");
    cmd_ana->add_option("--threads", ana.threads, "worker threads");
    cmd_ana->add_option("--config", ana.config,
                        "JSON config overriding the flags");

    optimize_args opt;
    auto *cmd_opt = app.add_subcommand(
        "optimize", "find the acceptance window maximizing the key rate");
    cmd_opt->add_option("--input", opt.input, "time-tag file");
    cmd_opt->add_option("--preset", opt.preset,
                        "analytic preset fig5-case1..fig5-case4");
    cmd_opt->add_option("--out", opt.out, "output base name");
    cmd_opt->add_option("--input-pol", opt.input_pol,
                        "input polarization channel");
    cmd_opt->add_option("--loss", opt.loss_db, "channel loss in dB");
    cmd_opt->add_flag("--filtered-g2", opt.filtered_g2,
                      "re-estimate g2 per window width from the stream");
    cmd_opt->add_flag("--no-sync", opt.no_sync,
                      "skip channel synchronization");
    cmd_opt->add_option("--peak-bin", opt.peak_bin,
                        "histogram bin width for peak finding in ps");
    cmd_opt->add_option("--bin", opt.density_bin,
                        "bin width for analytic densities in ps");
    cmd_opt->add_option("--corr-bin", opt.corr_bin,
                        "correlation bin width in ps");
    cmd_opt->add_option("--span", opt.span, "full correlation span in ps");
    cmd_opt->add_option("--threads", opt.threads, "worker threads");
    cmd_opt->add_option("--config", opt.config,
                        "JSON config overriding the flags");
    add_param_options(cmd_opt, opt.pf);

    ratecurve_args rc;
    auto *cmd_rc = app.add_subcommand(
        "ratecurve", "secret-key rate versus loss for window profiles");
    cmd_rc->add_option("--out", rc.out, "output base name");
    cmd_rc->add_option("--loss-min", rc.loss_min, "first loss value in dB");
    cmd_rc->add_option("--loss-max", rc.loss_max, "last loss value in dB");
    cmd_rc->add_option("--loss-step", rc.loss_step, "loss step in dB");
    cmd_rc->add_option("--profile", rc.profiles,
                       "window profile label:sifted:width[:floor]; "
                       "repeatable");
    cmd_rc->add_option("--config", rc.config,
                       "JSON config overriding the flags");
    add_param_options(cmd_rc, rc.pf);

    monitor_args mon;
    auto *cmd_mon = app.add_subcommand(
        "monitor", "blockwise g2 and rate monitoring of a long stream");
    cmd_mon->add_option("--input", mon.input,
                        "time-tag file, or - for CSV on stdin")
        ->required();
    cmd_mon->add_option("--out", mon.out,
                        "JSONL output file, or - for stdout");
    cmd_mon->add_option("--input-pol", mon.input_pol,
                        "input polarization channel");
    cmd_mon->add_option("--block", mon.block_s, "block duration in seconds");
    cmd_mon->add_option("--reference", mon.reference_g2,
                        "reference g2 for the alarm test");
    cmd_mon->add_option("--alarm-k", mon.alarm_k,
                        "alarm threshold in sigma");
    cmd_mon->add_option("--corr-bin", mon.corr_bin,
                        "correlation bin width in ps");
    cmd_mon->add_option("--span", mon.span, "full correlation span in ps");
    cmd_mon->add_option("--period", mon.period,
                        "clock period in ps for CSV input");
    cmd_mon->add_flag("--raw-std", mon.raw_std,
                      "report the raw side-peak spread as sigma");
    cmd_mon->add_option("--config", mon.config,
                        "JSON config overriding the flags");

    try {
        app.parse(argc, argv);
    } catch (CLI::ParseError const &e) {
        const int rc_parse = app.exit(e);
        return rc_parse == 0 ? exit_ok : exit_config;
    }

    try {
        if (cmd_sim->parsed())
            return run_simulate(cmd_sim, sim);
        if (cmd_ana->parsed())
            return run_analyze(cmd_ana, ana);
        if (cmd_opt->parsed())
            return run_optimize(cmd_opt, opt);
        if (cmd_rc->parsed())
            return run_ratecurve(cmd_rc, rc);
        if (cmd_mon->parsed())
            return run_monitor(cmd_mon, mon);
    } catch (analysis_empty const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_empty;
    } catch (std::invalid_argument const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    } catch (nlohmann::json::exception const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    } catch (std::runtime_error const &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_io;
    }
    return exit_config;
}
