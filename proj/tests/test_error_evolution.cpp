#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kgmo/error_evolution.hpp"
#include "test_presets.hpp"

using namespace kgmo;
using kgmo::testing::fit_loglog_slope;
using kgmo::testing::two_phase_data;

namespace {

const double PI = 3.14159265358979323846;

ErrorParameterInit make_split(const BackgroundInitialData& d, const std::vector<Phase>& phases,
                              const InteractionTable& table, double lambda, unsigned seed) {
    auto f = make_free_error_data(d.grid, lambda, 0.4, seed);
    neutralize_free_error_data(f, d, phases);
    auto data = assemble_error_initial(f, d, phases, table, 1e-12);
    return split_parameters(data, d, phases, table, 0.1);
}

} // namespace

TEST_CASE("decoupled amplitudes: vanishing sources keep F-breve at zero") {
    Grid g(1, 128, 2.0 * PI, 0.25);
    auto d = two_phase_data(g, {1.0, 2.0}, 0.5, 0.4, 0.4);
    d.psi[1] = Field(g); // kill one amplitude and its polarization partner
    d.w[1] = VecField(g);
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.2));
    auto table = build_interaction_table(phases, 1e-9);
    auto tab = evolve_fab(d, table, 0.15);
    REQUIRE(!tab.rows.empty());
    for (const auto& row : tab.rows) CHECK(row.values.at("fab_h3") == 0.0);
}

TEST_CASE("decoupled amplitudes: lambda-free, bounded in H3, polarized") {
    Grid g(1, 256, 2.0 * PI, 0.2);
    auto d = two_phase_data(g, {1.0, 2.0}, 0.6, 0.5, 0.4);
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.25));
    auto table = build_interaction_table(phases, 1e-9);
    auto tab = evolve_fab(d, table, 0.2);
    REQUIRE(!tab.rows.empty());
    double h3_first = tab.rows.front().values.at("fab_h3");
    REQUIRE(h3_first > 1e-6); // the interaction genuinely sources the amplitudes
    for (const auto& row : tab.rows) {
        CHECK(row.values.at("fab_h3") <= 50.0 * (h3_first + 1.0));
        CHECK(row.values.at("fab_polarization") <= 1e-8 * std::max(1.0, row.values.at("fab_h3")));
    }
}

TEST_CASE("coupled: zero oscillatory background and zero error stay exactly zero") {
    Grid g(1, 128, 2.0 * PI, 0.25);
    auto d = two_phase_data(g, {1.0, 2.0}, 0.0, 0.0, 0.5); // psi = w = 0, phi0 nonzero
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.2));
    auto table = build_interaction_table(phases, 1e-9);
    ErrorParameterInit init;
    init.lambda = 0.05;
    init.kappa = 0.1;
    init.eevo = VecField(g);
    init.eevodot = VecField(g);
    init.epsevo = Field(g);
    init.epsevodot = Field(g);
    init.wplus.assign(2, VecField(g));
    init.psiplus.assign(2, Field(g));
    init.gW.assign(2, VecField(g));
    init.gPsi.assign(2, Field(g));
    CoupledOptions opt;
    opt.T = 10 * g.dt();
    CoupledEvolver ev(d, init, table, opt);
    for (int s = 0; s < 5; ++s) ev.step();
    CHECK(max_abs(ev.error_state().EevoPhi) <= 1e-30);
    CHECK(max_abs(ev.error_state().Eevo[0]) <= 1e-30);
    CHECK(max_abs(ev.error_state().Psiplus[0]) <= 1e-30);
    CHECK(max_abs(ev.error_state().GPsi[0]) <= 1e-30);
}

TEST_CASE("coupled: zero background, small wave data evolve with conserved energy") {
    Grid g(1, 128, 2.0 * PI, 0.2);
    std::vector<EikonalData> eik{EikonalData::plane(g, {1.0})};
    auto d = BackgroundInitialData::zero(g, eik);
    std::vector<Phase> phases{trace_phase(eik[0], 0.5)};
    auto table = build_interaction_table(phases, 1e-9);
    ErrorParameterInit init;
    init.lambda = 0.05;
    init.kappa = 0.1;
    init.eevo = VecField(g);
    init.eevodot = VecField(g);
    init.epsevo = bump(g, {0.0, 0.0, 0.0}, 1.0, 1e-5);
    init.epsevodot = Field(g);
    init.wplus.assign(1, VecField(g));
    init.psiplus.assign(1, Field(g));
    init.gW.assign(1, VecField(g));
    init.gPsi.assign(1, Field(g));
    CoupledOptions opt;
    opt.T = 0.3;
    CoupledEvolver ev(d, init, table, opt);

    auto energy = [&]() {
        Field grad = spectral::derivative(ev.error_state().EevoPhi, 0);
        double e = 0.0;
        for (std::size_t q = 0; q < g.size(); ++q)
            e += std::norm(ev.error_state().EevoPhiDot[q]) + std::norm(grad[q]);
        return e * g.cell_volume();
    };
    double e0 = energy();
    REQUIRE(e0 > 0.0);
    int n = static_cast<int>(std::round(0.3 / g.dt()));
    for (int s = 0; s < n; ++s) ev.step();
    double e1 = energy();
    CHECK(std::abs(e1 - e0) <= 1e-2 * e0); // Verlet keeps the discrete energy bounded to O(dt^2)
}

TEST_CASE("coupled 1+1d resonant scenario: auxiliary consistency and slopes") {
    Grid g(1, 512, 2.0 * PI, 0.25);
    auto d = two_phase_data(g, {1.0, 2.0}, 1.3, 0.6, 0.7);
    d.support_radius = 1.8;
    double T = 0.4;
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, T + 0.1));
    auto table = build_interaction_table(phases, 1e-9);
    REQUIRE(check_background_constraints(d, 1e-8).pass);

    std::vector<double> lams{0.05, 0.025, 0.0125};
    std::vector<double> zl2, zh12, zh1, gauge0;
    for (double lam : lams) {
        auto f = make_free_error_data(g, lam, 0.2, 31);
        neutralize_free_error_data(f, d, phases);
        auto data = assemble_error_initial(f, d, phases, table, 1e-12);
        auto init = split_parameters(data, d, phases, table, 0.1);
        CoupledOptions opt;
        opt.T = T;
        opt.check_projector_split = true;
        CoupledEvolver ev(d, init, table, opt);
        CoupledResult res;
        ev.run(res);
        REQUIRE(res.completed);
        // measure at the checkpoint nearest T/2
        const CoupledCheckpoint* mid = &res.checkpoints.front();
        for (const auto& cpt : res.checkpoints)
            if (std::abs(cpt.t - T / 2) < std::abs(mid->t - T / 2)) mid = &cpt;
        zl2.push_back(mid->values.at("z_l2"));
        zh12.push_back(mid->values.at("z_h12"));
        zh1.push_back(mid->values.at("z_h1"));
        gauge0.push_back(res.checkpoints.front().values.at("gauge_divergence"));

        for (const auto& cpt : res.checkpoints) {
            if (cpt.values.count("aux_psi_0")) {
                CHECK(cpt.values.at("aux_psi_0") <= 5e-2);
                CHECK(cpt.values.at("aux_w_0") <= 5e-2);
            }
            if (cpt.values.count("projector_split_defect"))
                CHECK(cpt.values.at("projector_split_defect") <= 1e-12);
            CHECK(cpt.values.at("polarization_wbreve") <= 1e-7);
        }
    }
    double s_l2 = fit_loglog_slope(lams, zl2);
    double s_h12 = fit_loglog_slope(lams, zh12);
    double s_h1 = fit_loglog_slope(lams, zh1);
    CHECK(s_l2 >= 0.35);
    CHECK(s_l2 <= 0.65);
    CHECK(s_h12 >= 0.35);
    CHECK(s_h12 <= 0.65);
    CHECK(std::abs(s_h1) <= 0.15);
    for (double gv : gauge0) CHECK(gv <= 1e-6);
}

TEST_CASE("verify_auxiliary self-converges under time refinement") {
    auto run = [&](double cfl) {
        Grid g(1, 256, 2.0 * PI, cfl);
        auto d = two_phase_data(g, {1.0, 2.0}, 0.5, 0.4, 0.4);
        std::vector<Phase> phases;
        for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.1));
        auto table = build_interaction_table(phases, 1e-9);
        auto init = make_split(d, phases, table, 0.05, 7);
        CoupledOptions opt;
        opt.T = 0.05;
        CoupledEvolver ev(d, init, table, opt);
        int n = static_cast<int>(std::round(0.02 / g.dt()));
        for (int s = 0; s < n; ++s) ev.step();
        auto aux = ev.verify_auxiliary();
        return aux.at("aux_psi_0");
    };
    double coarse = run(0.2);
    double fine = run(0.1);
    CHECK(coarse < 1e-2);
    CHECK(fine * 3.0 <= coarse);
}

TEST_CASE("decoupling: the transported resonant amplitudes ignore the coupled state") {
    Grid g(1, 256, 2.0 * PI, 0.25);
    auto d = two_phase_data(g, {1.0, 2.0}, 0.5, 0.4, 0.4);
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.2));
    auto table = build_interaction_table(phases, 1e-9);
    auto i1 = make_split(d, phases, table, 0.05, 1);
    auto i2 = make_split(d, phases, table, 0.05, 2); // different free data
    CoupledOptions opt;
    opt.T = 6 * g.dt();
    CoupledEvolver e1(d, i1, table, opt), e2(d, i2, table, opt);
    for (int s = 0; s < 5; ++s) {
        e1.step();
        e2.step();
    }
    const auto& f1 = e1.fab_state();
    const auto& f2 = e2.fab_state();
    REQUIRE(!f1.pair_a.empty());
    for (std::size_t q = 0; q < g.size(); ++q) {
        CHECK(f1.Psi_pm[0][q] == f2.Psi_pm[0][q]); // bitwise
        CHECK(f1.W_diff[0][1][q] == f2.W_diff[0][1][q]);
    }
}

TEST_CASE("gauge monitor: negative control with corrupted initial gauge data") {
    Grid g(1, 256, 2.0 * PI, 0.25);
    auto d = two_phase_data(g, {1.0, 2.0}, 0.5, 0.4, 0.4);
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, 0.2));
    auto table = build_interaction_table(phases, 1e-9);
    auto good = make_split(d, phases, table, 0.05, 3);
    auto bad = good;
    bad.eevodot[0] = Field(g); // drop the solved gauge time derivative
    CoupledOptions opt;
    opt.T = 4 * g.dt();
    CoupledEvolver eg(d, good, table, opt), eb(d, bad, table, opt);
    double dg = eg.gauge_divergence().at("gauge_divergence");
    double db = eb.gauge_divergence().at("gauge_divergence");
    CHECK(dg <= 1e-8);
    CHECK(db >= 1e3 * std::max(dg, 1e-12)); // the violation is loud
}

TEST_CASE("bootstrap fit: synthetic exponential series recovers c1 and c2") {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    for (int i = 0; i <= 10; ++i) {
        double t = 0.05 * i;
        series["demo"].push_back({t, 0.7 * std::exp(1.3 * t)});
    }
    series["zero"].push_back({0.0, 0.0});
    series["zero"].push_back({0.1, 0.0});
    auto m = fit_bootstrap(series);
    CHECK(m.fits.at("demo").c1 == doctest::Approx(0.7).epsilon(1e-6));
    CHECK(m.fits.at("demo").c2 == doctest::Approx(1.3).epsilon(1e-6));
    CHECK(m.fits.at("demo").max_over_envelope <= 1.0 + 1e-9);
    CHECK(m.fits.at("zero").trivial);
}
