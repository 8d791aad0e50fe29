#include <sqkd/keyrate.hpp>

#include "test_support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

using namespace sqkd;

namespace {

auto testbed_params() -> key_rate_params {
    key_rate_params p;
    p.mu = 0.0043;
    p.g2 = 0.089;
    p.p_dc = 1.22e-6;
    p.q = 0.0048;
    p.f_ec = 1.22;
    return p;
}

auto make_cell(double sifted_fraction, double qber, bool has_qber = true)
    -> filter_metrics {
    filter_metrics m;
    m.interval.period_ps = 12500;
    m.sifted_fraction = sifted_fraction;
    m.has_qber = has_qber;
    m.qber = qber;
    return m;
}

auto make_grid(std::vector<std::uint64_t> dts, std::vector<std::int64_t> tcs,
               std::vector<filter_metrics> cells) -> sweep_grid {
    sweep_grid g;
    g.dt_values_ps = std::move(dts);
    g.tc_values_ps = std::move(tcs);
    g.cells = std::move(cells);
    return g;
}

} // namespace

TEST_CASE("binary entropy") {
    CHECK(shannon_entropy(0.0) == 0.0);
    CHECK(shannon_entropy(1.0) == 0.0);
    CHECK(shannon_entropy(0.5) == Catch::Approx(1.0).epsilon(1e-12));
    CHECK(shannon_entropy(0.0048) ==
          Catch::Approx(0.0438815).epsilon(1e-5));
    CHECK(shannon_entropy(0.11) ==
          Catch::Approx(shannon_entropy(0.89)).epsilon(1e-12));
    CHECK_THROWS_AS(shannon_entropy(-0.1), std::invalid_argument);
    CHECK_THROWS_AS(shannon_entropy(1.1), std::invalid_argument);
}

TEST_CASE("compression fraction") {
    CHECK(compression_tau(0.0) == 1.0);
    CHECK(compression_tau(0.5) == 0.0);
    CHECK(compression_tau(0.7) == 0.0);
    CHECK(compression_tau(0.0048) ==
          Catch::Approx(0.9726929).epsilon(1e-5));
    double prev = 1.0;
    for (double e = 0.01; e < 0.5; e += 0.01) {
        const double t = compression_tau(e);
        CHECK(t < prev);
        prev = t;
    }
    CHECK_THROWS_AS(compression_tau(-0.01), std::invalid_argument);
}

TEST_CASE("multiphoton bound") {
    CHECK(multiphoton_bound(0.0043, 0.089) ==
          Catch::Approx(8.22805e-7).epsilon(1e-5));
    CHECK(multiphoton_bound(1.0, 2.0) == 1.0);
    CHECK(multiphoton_bound(2.0, 2.0) == 1.0);
    CHECK(multiphoton_bound(0.0, 5.0) == 0.0);
    CHECK_THROWS_AS(multiphoton_bound(-1.0, 0.1), std::invalid_argument);
}

TEST_CASE("testbed loss budgets and filtering extension") {
    const auto params = testbed_params();
    const window_profile full{1.0, 1.0, {}, "full"};
    const window_profile one_ns{0.55, 0.08, {}, "1ns"};
    const window_profile quarter_ns{0.24, 0.02, {}, "0.25ns"};

    const auto l_full = max_tolerable_loss(params, full);
    const auto l_one = max_tolerable_loss(params, one_ns);
    const auto l_quarter = max_tolerable_loss(params, quarter_ns);
    REQUIRE(l_full.has_value());
    REQUIRE(l_one.has_value());
    REQUIRE(l_quarter.has_value());
    CHECK(*l_full > 28.1);
    CHECK(*l_full < 28.6);
    CHECK(*l_one > 34.9);
    CHECK(*l_one < 35.4);
    CHECK(*l_quarter > 37.6);
    CHECK(*l_quarter < 38.2);
    CHECK(*l_full < *l_one);
    CHECK(*l_one < *l_quarter);

    // Bisection consistency around the boundary.
    CHECK(secret_rate(params, *l_full - 0.1, full).s_per_pulse > 0.0);
    CHECK(secret_rate(params, *l_full + 0.1, full).s_per_pulse == 0.0);

    // The secret rate decreases monotonically with loss.
    double prev = std::numeric_limits<double>::infinity();
    for (double loss = 0.0; loss <= 30.0; loss += 2.0) {
        const auto pt = secret_rate(params, loss, full);
        CHECK(pt.s_per_pulse < prev);
        prev = pt.s_per_pulse;
    }
}

TEST_CASE("ideal source tolerates unbounded loss") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 0.0;
    p.p_dc = 0.0;
    p.q = 0.0;
    const window_profile full{1.0, 1.0, {}, "full"};
    CHECK_FALSE(max_tolerable_loss(p, full).has_value());
}

TEST_CASE("zero-rate source has zero tolerable loss") {
    key_rate_params p = testbed_params();
    p.q = 0.40; // error floor too high for any positive rate
    const window_profile full{1.0, 1.0, {}, "full"};
    const auto l = max_tolerable_loss(p, full);
    REQUIRE(l.has_value());
    CHECK(*l == 0.0);
}

TEST_CASE("critical mean photon number") {
    const auto mu_c = critical_mu(1.22e-6, 0.089);
    REQUIRE(mu_c.has_value());
    CHECK(*mu_c == Catch::Approx(0.0052360).epsilon(1e-4));
    CHECK_FALSE(critical_mu(1e-6, 0.0).has_value());
    const auto zero = critical_mu(0.0, 0.1);
    REQUIRE(zero.has_value());
    CHECK(*zero == 0.0);
    CHECK_THROWS_AS(critical_mu(-1e-6, 0.1), std::invalid_argument);
}

TEST_CASE("attenuation-limited loss budget peaks at the critical mu") {
    CHECK(attenuation_limited_loss_db(0.0043, 1.22e-6, 0.089) ==
          Catch::Approx(33.2325).epsilon(1e-4));
    const auto [mu_star, best] =
        best_attenuation_limited_loss_db(1.22e-6, 0.089);
    CHECK(mu_star == Catch::Approx(0.0052360).epsilon(1e-4));
    CHECK(best == Catch::Approx(33.316).epsilon(1e-3));
    CHECK(best >= attenuation_limited_loss_db(mu_star * 0.9, 1.22e-6, 0.089));
    CHECK(best >= attenuation_limited_loss_db(mu_star * 1.1, 1.22e-6, 0.089));
    CHECK_THROWS_AS(attenuation_limited_loss_db(0.0, 1e-6, 0.1),
                    std::invalid_argument);
}

TEST_CASE("loss differences as fiber distance") {
    CHECK(distance_extension(28.28, 35.15, 0.31) ==
          Catch::Approx(22.1613).margin(0.001));
    CHECK(distance_extension(28.28, 35.15, 0.17) ==
          Catch::Approx(40.4118).margin(0.001));
    CHECK(absolute_distance_km(35.15, 0.31) ==
          Catch::Approx(113.387).margin(0.001));
    CHECK(absolute_distance_km(35.15, 0.17) ==
          Catch::Approx(206.765).margin(0.001));
    CHECK_THROWS_AS(distance_extension(1.0, 2.0, 0.0), std::invalid_argument);
}

TEST_CASE("single-photon probability comparison with weak coherent pulses") {
    CHECK(poisson_p1(1.0) == Catch::Approx(0.367879).epsilon(1e-5));
    CHECK(poisson_p1(0.5) == Catch::Approx(0.303265).epsilon(1e-5));

    const auto ideal = wcp_comparison(0.0043, 0.0);
    REQUIRE(ideal.break_even_mu.has_value());
    CHECK(*ideal.break_even_mu == Catch::Approx(0.3).epsilon(1e-12));

    const auto testbed = wcp_comparison(0.0043, 0.089);
    REQUIRE(testbed.break_even_mu.has_value());
    CHECK(*testbed.break_even_mu == Catch::Approx(0.30846).epsilon(1e-4));
    CHECK(testbed.sps_p1_lower_bound ==
          Catch::Approx(0.0043 - 0.0043 * 0.0043 * 0.089).epsilon(1e-12));
    CHECK_FALSE(testbed.beats_target);

    // Too antibunched a target is unreachable when g2 is large.
    CHECK_FALSE(wcp_comparison(0.5, 1.0).break_even_mu.has_value());

    const auto strong = wcp_comparison(0.5, 0.01);
    CHECK(strong.beats_target);
}

TEST_CASE("rate model input validation") {
    const window_profile full{1.0, 1.0, {}, "full"};
    key_rate_params p = testbed_params();
    p.mu = -0.1;
    CHECK_THROWS_AS(secret_rate(p, 0.0, full), std::invalid_argument);
    p = testbed_params();
    p.q = 0.5;
    CHECK_THROWS_AS(secret_rate(p, 0.0, full), std::invalid_argument);
    p = testbed_params();
    CHECK_THROWS_AS(
        secret_rate(p, 0.0, window_profile{1.2, 1.0, {}, "bad"}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        secret_rate(p, 0.0, window_profile{1.0, 0.0, {}, "bad"}),
        std::invalid_argument);
    CHECK_THROWS_AS(
        secret_rate(p, 0.0, window_profile{1.0, 1.0, 0.6, "bad"}),
        std::invalid_argument);
}

TEST_CASE("rate curve grid and CSV export") {
    key_rate_params p = testbed_params();
    const window_profile full{1.0, 1.0, {}, "full"};
    const auto points = rate_curve(p, full, 0.0, 2.0, 0.5);
    REQUIRE(points.size() == 5);
    CHECK(points.front().loss_db == 0.0);
    CHECK(points.back().loss_db == Catch::Approx(2.0));
    std::ostringstream out;
    write_rate_curve_csv(out, points, p.clock.repetition_rate_hz(),
                         {"profile=full"});
    std::istringstream in(out.str());
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "# profile=full");
    REQUIRE(std::getline(in, line));
    CHECK(line ==
          "loss_db,qber,p_click,secret_bits_per_pulse,secret_bits_per_second");
    std::size_t rows = 0;
    while (std::getline(in, line))
        ++rows;
    CHECK(rows == points.size());
    CHECK_THROWS_AS(rate_curve(p, full, 0.0, 2.0, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(rate_curve(p, full, 2.0, 0.0, 0.5),
                    std::invalid_argument);
}

TEST_CASE("multiphoton-dominated regime yields no key") {
    key_rate_params p;
    p.mu = 1.0;
    p.g2 = 2.0;
    p.p_dc = 1e-9;
    p.q = 0.01;
    const auto pt = secret_rate(p, 0.0, window_profile{1.0, 1.0, {}, "full"});
    CHECK(pt.s_per_pulse == 0.0);
    CHECK(pt.multiphoton_dominated);
}

TEST_CASE("plain-e compression argument yields at least the default rate") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 0.5;
    p.p_dc = 1e-6;
    p.q = 0.01;
    const window_profile full{1.0, 1.0, {}, "full"};
    const auto s_default = secret_rate(p, 0.0, full).s_per_pulse;
    p.tau_argument_plain_e = true;
    const auto s_plain = secret_rate(p, 0.0, full).s_per_pulse;
    CHECK(s_default > 0.0);
    CHECK(s_plain >= s_default);
}

TEST_CASE("optimizer picks the best sweep cell") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 0.0;
    p.p_dc = 0.0;
    p.q = 0.01;
    // Grid: narrowing the window from F=1/e=0.02 to F=0.8/e=0.005 pays off.
    auto grid = make_grid(
        {6250, 12500}, {0, 1000},
        {make_cell(0.8, 0.005), make_cell(0.7, 0.0, false),
         make_cell(1.0, 0.02), make_cell(1.0, 0.02)});
    const auto res = optimize_window(grid, p, 0.0);
    CHECK(res.best_i_dt == 0);
    CHECK(res.best_i_tc == 0);
    CHECK(res.any_key);
    CHECK(res.best_s_per_pulse == Catch::Approx(0.0366467).epsilon(1e-4));
    REQUIRE(res.full_s_per_pulse.has_value());
    CHECK(*res.full_s_per_pulse == Catch::Approx(0.0359272).epsilon(1e-4));
    REQUIRE(res.gain_over_full.has_value());
    CHECK(*res.gain_over_full == Catch::Approx(0.020026).epsilon(1e-3));
    REQUIRE(res.s_map.size() == 4);
    CHECK(std::isnan(res.s_map[1]));

    std::ostringstream out;
    write_optimize_csv(out, grid, res, {"case=test"});
    std::istringstream in(out.str());
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "# case=test");
    REQUIRE(std::getline(in, line));
    CHECK(line == "# best_dt_ps=6250 best_tc_ps=0");
    REQUIRE(std::getline(in, line));
    CHECK(line ==
          "dt_ps,tc_ps,qber,sifted_fraction,n_correct,n_wrong,s_per_pulse");
    std::size_t rows = 0;
    std::size_t nan_rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (line.find("nan") != std::string::npos)
            ++nan_rows;
    }
    CHECK(rows == 4);
    CHECK(nan_rows == 1);
}

TEST_CASE("optimizer tie-break prefers wide windows near zero center") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 0.0;
    p.p_dc = 0.0;
    p.q = 0.01;
    auto grid = make_grid(
        {250, 500}, {-100, 0},
        {make_cell(0.5, 0.01), make_cell(0.5, 0.01), make_cell(0.5, 0.01),
         make_cell(0.5, 0.01)});
    const auto res = optimize_window(grid, p, 0.0);
    CHECK(res.best_i_dt == 1);
    CHECK(res.best_i_tc == 1);
    // No full-width cell in this grid, so no gain reference.
    CHECK_FALSE(res.gain_over_full.has_value());
}

TEST_CASE("optimizer reports when no cell yields key") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 0.0;
    p.p_dc = 0.0;
    p.q = 0.01;
    auto grid = make_grid({12500}, {0}, {make_cell(1.0, 0.49)});
    const auto res = optimize_window(grid, p, 0.0);
    CHECK_FALSE(res.any_key);
    CHECK(res.best_s_per_pulse == 0.0);
}

TEST_CASE("per-cell g2 override shifts the optimum") {
    key_rate_params p;
    p.mu = 0.1;
    p.g2 = 3.0;
    p.p_dc = 0.0;
    p.q = 0.01;
    auto grid = make_grid({6250, 12500}, {0},
                          {make_cell(0.9, 0.01), make_cell(1.0, 0.01)});
    // Same-q cells: without override the wide window wins on throughput.
    const auto plain = optimize_window(grid, p, 0.0);
    CHECK(plain.best_i_dt == 1);
    // If filtering also suppresses g2 strongly in the narrow cell, it wins.
    const auto filtered = optimize_window(grid, p, 0.0, {0.0, 3.0});
    CHECK(filtered.best_i_dt == 0);
    CHECK(filtered.best_s_per_pulse > plain.best_s_per_pulse);
    CHECK_THROWS_AS(optimize_window(grid, p, 0.0, {1.0}),
                    std::invalid_argument);
}

TEST_CASE("cell rate handles empty and high-error cells") {
    key_rate_params p = testbed_params();
    CHECK(std::isnan(
        cell_secret_rate(p, 0.0, make_cell(0.5, 0.0, false))));
    CHECK(cell_secret_rate(p, 0.0, make_cell(0.5, 0.6)) == 0.0);
    const auto low_g2 =
        cell_secret_rate(p, 0.0, make_cell(0.5, 0.01), 0.0);
    const auto high_g2 =
        cell_secret_rate(p, 0.0, make_cell(0.5, 0.01), 10.0);
    CHECK(low_g2 >= high_g2);
}
