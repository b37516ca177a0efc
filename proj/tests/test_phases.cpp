#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kgmo/phase.hpp"

using namespace kgmo;

namespace {

const double PI = 3.14159265358979323846;

// Honest eikonal residual of a traced phase: d_t u from centered differences across steps,
// grad u recomputed spectrally from the resampled slices.
double traced_eikonal_residual(const Phase& p) {
    const Grid& g = p.grid();
    double worst = 0.0;
    for (int s = 1; s + 1 <= p.steps(); ++s) {
        Field um = p.u_values(s - 1), u0 = p.u_values(s), up = p.u_values(s + 1);
        Field dtu(g);
        for (std::size_t q = 0; q < g.size(); ++q)
            dtu[q] = (up[q].real() - um[q].real()) / (2.0 * g.dt());
        Field uper(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            auto x = g.position(q);
            double lin = 0.0;
            for (int d = 0; d < g.dim(); ++d) lin += p.klin()[static_cast<std::size_t>(d)] * x[d];
            uper[q] = u0[q].real() - lin;
        }
        std::vector<Field> gu(static_cast<std::size_t>(g.dim()));
        for (int d = 0; d < g.dim(); ++d) {
            gu[static_cast<std::size_t>(d)] = spectral::derivative(uper, d);
            for (std::size_t q = 0; q < g.size(); ++q)
                gu[static_cast<std::size_t>(d)][q] += p.klin()[static_cast<std::size_t>(d)];
        }
        for (std::size_t q = 0; q < g.size(); ++q) {
            double g2 = 0.0;
            for (int d = 0; d < g.dim(); ++d) g2 += std::norm(gu[static_cast<std::size_t>(d)][q]);
            worst = std::max(worst, std::abs(g2 - std::norm(dtu[q])));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("validate_eikonal_data: plane data pass, wrong-sign vdot fails, critical point fails") {
    Grid g(2, 32, 2.0 * PI, 0.4);
    EikonalData good = EikonalData::plane(g, {1.0, 0.0});
    CHECK(validate_eikonal_data(good, 1e-10).pass);

    EikonalData bad = good;
    bad.vdot = Field(g, cplx{1.0, 0.0}); // past directed
    auto rep = validate_eikonal_data(bad, 1e-10);
    CHECK_FALSE(rep.pass);
    CHECK(rep.max_vdot > 0.0);

    // gradient vanishing somewhere (periodic analogue of v = |x|^2 near the origin)
    EikonalData crit;
    crit.grid = g;
    crit.klin = {0.0, 0.0};
    crit.v_periodic = sample(g, [](const std::array<double, 3>& x) { return std::cos(x[0]); });
    crit.vdot = Field(g, cplx{-1.0, 0.0});
    auto rep2 = validate_eikonal_data(crit, 1e-10);
    CHECK_FALSE(rep2.pass);
}

TEST_CASE("trace_phase: plane wave is exact, u = k.x - |k| t") {
    Grid g(1, 64, 2.0 * PI, 0.3);
    EikonalData d = EikonalData::plane(g, {2.0});
    Phase p = trace_phase(d, 0.5);
    CHECK(p.is_plane());
    CHECK_FALSE(p.caustic_time().has_value());
    int s = p.steps() / 2;
    double t = p.t_of(s);
    Field u = p.u_values(s);
    for (std::size_t q = 0; q < g.size(); ++q) {
        auto x = g.position(q);
        CHECK(u[q].real() == doctest::Approx(2.0 * x[0] - 2.0 * t).epsilon(1e-14));
    }
    VecField du = p.dcov(s);
    Field e = minkowski_dot(du, du);
    CHECK(max_abs(e) <= 1e-13);
    CHECK(max_abs(p.box_u(s)) == 0.0);
}

TEST_CASE("trace_phase: curved 2d data self-converge at order >= 2") {
    auto run = [&](int n) {
        Grid g(2, n, 2.0 * PI, 0.25);
        Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.1 * std::sin(x[1]); });
        EikonalData d = EikonalData::from_phase(g, {1.0, 0.0}, vp);
        REQUIRE(validate_eikonal_data(d, 1e-9).pass);
        Phase p = trace_phase(d, 0.2);
        REQUIRE(p.steps() >= 2);
        return traced_eikonal_residual(p);
    };
    double coarse = run(32);
    double fine = run(64);
    CHECK(coarse < 0.05);
    CHECK(fine * 4.0 <= coarse * 1.2); // order two within 20 percent slack
}

TEST_CASE("trace_phase: caustic detection matches a dense Jacobian scan") {
    Grid g(2, 32, 2.0 * PI, 0.25);
    // converging ray fan: xi tilts toward x2 = 0 from both sides
    Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.5 * std::cos(x[1]); });
    EikonalData d = EikonalData::from_phase(g, {1.0, 0.0}, vp);
    REQUIRE(validate_eikonal_data(d, 1e-9).pass);

    double T = 4.0;
    Phase p = trace_phase(d, T);
    REQUIRE(p.caustic_time().has_value());
    double reported = *p.caustic_time();

    // oracle: dense 1d scan in t of det(I + t Dxi(y)) over every grid ray y
    std::vector<Field> gv(2), xi(2);
    for (int i = 0; i < 2; ++i) {
        gv[static_cast<std::size_t>(i)] = spectral::derivative(vp, i);
        for (std::size_t q = 0; q < g.size(); ++q)
            gv[static_cast<std::size_t>(i)][q] += (i == 0 ? 1.0 : 0.0);
    }
    Field speed(g);
    for (std::size_t q = 0; q < g.size(); ++q)
        speed[q] = std::sqrt(std::norm(gv[0][q]) + std::norm(gv[1][q]));
    for (int i = 0; i < 2; ++i) {
        xi[static_cast<std::size_t>(i)] = Field(g);
        for (std::size_t q = 0; q < g.size(); ++q)
            xi[static_cast<std::size_t>(i)][q] = gv[static_cast<std::size_t>(i)][q].real() / speed[q].real();
    }
    Field d00 = spectral::derivative(xi[0], 0), d01 = spectral::derivative(xi[0], 1);
    Field d10 = spectral::derivative(xi[1], 0), d11 = spectral::derivative(xi[1], 1);
    double oracle = T;
    const double tstep = g.dt() / 20.0;
    for (std::size_t q = 0; q < g.size(); ++q) {
        for (double t = 0.0; t <= T; t += tstep) {
            double a = 1.0 + t * d00[q].real(), b = t * d01[q].real();
            double c = t * d10[q].real(), e = 1.0 + t * d11[q].real();
            if (a * e - b * c < 0.1) {
                oracle = std::min(oracle, t);
                break;
            }
        }
    }
    CHECK(std::abs(reported - oracle) <= 1.5 * g.dt());
    CHECK(p.steps() < static_cast<int>(std::round(T / g.dt()))); // truncated
}

TEST_CASE("classify_pair: plane-wave examples") {
    Grid g2(2, 16, 2.0 * PI, 0.4);
    int steps = 8;
    Phase pa = Phase::plane_wave(g2, {1.0, 0.0}, steps);
    Phase pb = Phase::plane_wave(g2, {2.0, 0.0}, steps);
    Phase pc = Phase::plane_wave(g2, {0.0, 1.0}, steps);
    PairEntry e;
    CHECK(classify_pair(pa, pb, 1e-9, &e) == PairClass::Resonant);
    CHECK(e.max_abs_dot <= 1e-13);
    CHECK(classify_pair(pa, pc, 1e-9, &e) == PairClass::Separated);
    CHECK(e.min_abs_dot == doctest::Approx(1.0).epsilon(1e-13)); // -|kA||kB| + kA.kB = -1

    Grid g1(1, 16, 2.0 * PI, 0.4);
    Phase qa = Phase::plane_wave(g1, {1.0}, steps);
    Phase qb = Phase::plane_wave(g1, {-1.0}, steps);
    CHECK(classify_pair(qa, qb, 1e-9, &e) == PairClass::Separated);
    CHECK(e.min_abs_dot == doctest::Approx(2.0).epsilon(1e-13));
    CHECK(e.anti_parallel);
}

TEST_CASE("classification detects incoherent pairs and rejects identical gradients") {
    Grid g(2, 32, 2.0 * PI, 0.25);
    Phase pa = Phase::plane_wave(g, {1.0, 0.0}, 4);
    Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.1 * std::sin(x[1]); });
    Phase pb = trace_phase(EikonalData::from_phase(g, {1.0, 0.0}, vp), 4 * g.dt());
    PairEntry e;
    CHECK(classify_pair(pa, pb, 1e-9, &e) == PairClass::Incoherent);

    std::vector<Phase> same;
    same.push_back(Phase::plane_wave(g, {1.0, 0.0}, 4));
    same.push_back(Phase::plane_wave(g, {1.0, 0.0}, 4));
    CHECK_THROWS_AS(build_interaction_table(same, 1e-9), ConfigError);
}

TEST_CASE("persistence: traced collinear pair stays resonant at every sampled time") {
    Grid g(2, 32, 2.0 * PI, 0.25);
    Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.1 * std::sin(x[1]); });
    Phase pa = trace_phase(EikonalData::from_phase(g, {1.0, 0.0}, vp), 0.3);
    // a fully collinear partner: twice the gradient, same direction
    Field vp2 = vp;
    vp2 *= cplx{2.0, 0.0};
    Phase pb = trace_phase(EikonalData::from_phase(g, {2.0, 0.0}, vp2), 0.3);
    int steps = std::min(pa.steps(), pb.steps());
    REQUIRE(steps >= 2);
    for (int s = 0; s <= steps; ++s) {
        Field dot = minkowski_dot(pa.dcov(s), pb.dcov(s));
        CHECK(max_abs(dot) <= 5e-3); // resonant at every slice, up to interpolation error
    }
    CHECK(classify_pair(pa, pb, 5e-3) == PairClass::Resonant);
}

TEST_CASE("geodesic property: d#u . d(d_g u) vanishes along traced phases") {
    auto run = [&](int n) {
        Grid g(2, n, 2.0 * PI, 0.25);
        Field vp = sample(g, [](const std::array<double, 3>& x) { return 0.1 * std::sin(x[1]); });
        Phase p = trace_phase(EikonalData::from_phase(g, {1.0, 0.0}, vp), 0.2);
        REQUIRE(p.steps() >= 2);
        int s = p.steps() / 2;
        VecField dm = p.dcov(s - 1), d0 = p.dcov(s), dp = p.dcov(s + 1);
        double worst = 0.0;
        for (int comp = 0; comp < d0.components(); ++comp) {
            Field dt_comp(g);
            for (std::size_t q = 0; q < g.size(); ++q)
                dt_comp[q] = (dp[comp][q] - dm[comp][q]) / (2.0 * g.dt());
            VecField grad_comp = spectral::spatial_gradient(d0[comp]);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx acc = -d0[0][q] * dt_comp[q];
                for (int i = 1; i < d0.components(); ++i) acc += d0[i][q] * grad_comp[i][q];
                worst = std::max(worst, std::abs(acc));
            }
        }
        return worst;
    };
    double coarse = run(32);
    double fine = run(64);
    CHECK(coarse < 0.05);
    CHECK(fine * 4.0 <= coarse * 1.3);
}

TEST_CASE("combined separated phases: |d(uA+-uB).d(uA+-uB)| = 2 |duA.duB| exactly") {
    Grid g(2, 16, 2.0 * PI, 0.4);
    Phase pa = Phase::plane_wave(g, {1.0, 0.0}, 4);
    Phase pb = Phase::plane_wave(g, {0.0, 1.0}, 4);
    Field dot = minkowski_dot(pa.dcov(0), pb.dcov(0));
    for (int sgn : {+1, -1}) {
        CombinedPhase c{&pa, &pb, 1, sgn};
        Field cc = minkowski_dot(c.dcov(0), c.dcov(0));
        for (std::size_t q = 0; q < g.size(); ++q)
            CHECK(std::abs(std::abs(cc[q].real()) - 2.0 * std::abs(dot[q].real())) <= 1e-12);
    }
}

TEST_CASE("eta0 examples") {
    int steps = 4;
    SUBCASE("2d separated pair gives 1") {
        Grid g(2, 16, 2.0 * PI, 0.4);
        std::vector<Phase> ph;
        ph.push_back(Phase::plane_wave(g, {1.0, 0.0}, steps));
        ph.push_back(Phase::plane_wave(g, {0.0, 1.0}, steps));
        auto table = build_interaction_table(ph, 1e-9);
        CHECK(eta0(ph, table, steps * g.dt()) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("single plane wave |k| = 2 gives 2") {
        Grid g(1, 16, 2.0 * PI, 0.4);
        std::vector<Phase> ph;
        ph.push_back(Phase::plane_wave(g, {2.0}, steps));
        auto table = build_interaction_table(ph, 1e-9);
        CHECK(eta0(ph, table, steps * g.dt()) == doctest::Approx(2.0).epsilon(1e-12));
    }
    SUBCASE("1d resonant pair k=1,2 gives 1") {
        Grid g(1, 16, 2.0 * PI, 0.4);
        std::vector<Phase> ph;
        ph.push_back(Phase::plane_wave(g, {1.0}, steps));
        ph.push_back(Phase::plane_wave(g, {2.0}, steps));
        auto table = build_interaction_table(ph, 1e-9);
        REQUIRE(table.entry(0, 1).cls == PairClass::Resonant);
        CHECK(eta0(ph, table, steps * g.dt()) == doctest::Approx(1.0).epsilon(1e-12));
    }
}
