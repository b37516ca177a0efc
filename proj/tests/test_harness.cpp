#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kgmo/harness.hpp"

using namespace kgmo;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("fit_slope: exact and noisy power laws") {
    std::vector<double> lams{0.1, 0.05, 0.025, 0.0125};
    std::vector<double> half, square;
    for (double l : lams) {
        half.push_back(3.0 * std::sqrt(l));
        square.push_back(0.7 * l * l);
    }
    auto f1 = fit_slope(lams, half);
    CHECK(f1.slope == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(f1.r2 == doctest::Approx(1.0).epsilon(1e-12));
    auto f2 = fit_slope(lams, square);
    CHECK(f2.slope == doctest::Approx(2.0).epsilon(1e-12));

    // synthetic noise: +-5 percent multiplicative
    std::vector<double> noisy;
    double signs[] = {1.05, 0.95, 1.04, 0.96};
    for (std::size_t i = 0; i < lams.size(); ++i) noisy.push_back(std::sqrt(lams[i]) * signs[i]);
    auto f3 = fit_slope(lams, noisy);
    CHECK(f3.slope >= 0.45);
    CHECK(f3.slope <= 0.55);

    CHECK_THROWS_AS(fit_slope({0.1, 0.05}, {1.0, 2.0}), ConfigError);
    CHECK_THROWS_AS(fit_slope(lams, {1.0, -1.0, 1.0, 1.0}), ConfigError);
}

TEST_CASE("config parser: round trip, defaults, unknown keys fail closed") {
    std::string text = R"(
# comment
scenario = "resonant-pair-1d"
[grid]
n = 128
cfl = 0.2
[run]
lambdas = [0.1, 0.05, 0.025]
T = 0.1
out = ""
)";
    auto cfg = parse_config(text);
    CHECK(cfg.scenario == "resonant-pair-1d");
    CHECK(cfg.n == 128);
    CHECK(cfg.cfl == doctest::Approx(0.2));
    CHECK(cfg.plane.size() == 2);        // from the preset
    CHECK(cfg.lambdas.size() == 3);      // overridden
    CHECK(cfg.T == doctest::Approx(0.1));

    CHECK_THROWS_AS(parse_config("bogus_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[grid]\nn = 128\nmystery = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[run]\nlambdas = [0.1, 0.2, 0.3]\n").validate_for_sweep(),
                    ConfigError);
}

TEST_CASE("scenario library: names resolve, unknown rejected") {
    for (const auto& n : scenario_names()) {
        auto cfg = scenario_config(n);
        CHECK(cfg.scenario == n);
        CHECK(!cfg.plane.empty());
    }
    CHECK_THROWS_AS(scenario_config("no-such-thing"), ConfigError);
}

TEST_CASE("snapshot io round trip") {
    Grid g(1, 64, 6.0, 0.3);
    Field f = sample(g, [](const std::array<double, 3>& x) {
        return cplx{std::sin(x[0]), std::cos(2.0 * x[0])};
    });
    std::filesystem::create_directories("out_test");
    write_snapshot("out_test/snap", f, "demo", 0.25);
    Field r = read_snapshot("out_test/snap", g);
    Field diff = r - f;
    CHECK(max_abs(diff) == 0.0);
    Grid g2(1, 32, 6.0, 0.3);
    CHECK_THROWS_AS(read_snapshot("out_test/snap", g2), ConfigError);
}

TEST_CASE("all-zero scenario: every metric exactly zero") {
    auto cfg = scenario_config("all-zero");
    cfg.n = 64;
    cfg.T = 0.05;
    cfg.error_amplitude = 0.0;
    cfg.out = "";
    auto rep = run_experiment(cfg);
    for (const auto& row : rep.ledger) {
        if (row.metric.rfind("charge_phase", 0) == 0 || row.metric == "em_charge") continue;
        CHECK(std::abs(row.value) <= 1e-20);
    }
}

TEST_CASE("no-charge-1d smoke run passes its gates") {
    auto cfg = scenario_config("no-charge-1d");
    cfg.n = 128;
    cfg.T = 0.1;
    cfg.lambdas = {0.1, 0.05, 0.025};
    cfg.out = "";
    auto rep = run_experiment(cfg);
    REQUIRE(rep.first_failure.empty());
    CHECK(rep.pass);
    // the chargeless limit solves plain KGM: the flux rows vanish
    for (const auto& row : rep.ledger)
        if (row.metric == "flux") CHECK(row.value == 0.0);
}

TEST_CASE("resonant-pair-1d: remainder and gauge slopes pass, K identities hold") {
    auto cfg = scenario_config("resonant-pair-1d");
    cfg.n = 256;
    cfg.T = 0.1;
    cfg.lambdas = {0.1, 0.05, 0.025, 0.0125};
    cfg.out = "out_test/resonant";
    auto rep = run_experiment(cfg);
    REQUIRE(rep.first_failure.empty());
    CHECK(rep.pass);
    CHECK(rep.sweeps.at("remainder").pass);
    CHECK(rep.sweeps.at("gauge_first_order").pass);
    CHECK(rep.scalars.at("eta0") == doctest::Approx(1.0));
    CHECK(std::filesystem::exists("out_test/resonant/ledger.csv"));
    CHECK(std::filesystem::exists("out_test/resonant/summary.json"));
}

TEST_CASE("determinism: identical config gives byte-identical ledgers") {
    auto cfg = scenario_config("separated-pair-1d");
    cfg.n = 128;
    cfg.T = 0.05;
    cfg.lambdas = {0.1, 0.05, 0.025};
    cfg.out = "out_test/det1";
    auto r1 = run_experiment(cfg);
    cfg.out = "out_test/det2";
    auto r2 = run_experiment(cfg);
    REQUIRE(r1.first_failure.empty());
    CHECK(slurp("out_test/det1/ledger.csv") == slurp("out_test/det2/ledger.csv"));
}

TEST_CASE("workers: concurrent lambda instances give the single-thread ledger") {
    auto cfg = scenario_config("separated-pair-1d");
    cfg.n = 128;
    cfg.T = 0.05;
    cfg.lambdas = {0.1, 0.05, 0.025};
    cfg.out = "out_test/w1";
    cfg.workers = 1;
    run_experiment(cfg);
    cfg.out = "out_test/w3";
    cfg.workers = 3;
    run_experiment(cfg);
    CHECK(slurp("out_test/w1/ledger.csv") == slurp("out_test/w3/ledger.csv"));
}

TEST_CASE("incoherent phase sets are rejected before any solve") {
    ExperimentConfig cfg = scenario_config("single-phase-1d");
    cfg.dim = 2;
    cfg.n = 32;
    cfg.T = 0.05;
    cfg.plane = {{1.0, 0.0}};
    cfg.files = {"out_test/curved"};
    cfg.out = "";
    // write curved eikonal data that are neither collinear nor separated from k=(1,0)
    Grid g = cfg.grid();
    Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.1 * std::sin(x[1]); });
    EikonalData d = EikonalData::from_phase(g, {1.0, 0.0}, vp);
    std::filesystem::create_directories("out_test");
    write_snapshot("out_test/curved.v", d.v_periodic, "v", 0.0);
    write_snapshot("out_test/curved.vdot", d.vdot, "vdot", 0.0);
    auto rep = run_experiment(cfg);
    CHECK_FALSE(rep.pass);
    CHECK(rep.first_failure.find("incoherent") != std::string::npos);
}
