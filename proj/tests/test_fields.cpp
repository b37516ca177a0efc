#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "kgmo/field.hpp"
#include "kgmo/spectral.hpp"

using namespace kgmo;

namespace {

const double PI = 3.14159265358979323846;

Field random_smooth(const Grid& g, unsigned seed, int kmax = 6) {
    // band-limited random field: independent of the FFT code path under test
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> amp(-1.0, 1.0);
    Field f(g);
    for (int m = -kmax; m <= kmax; ++m) {
        double ar = amp(rng), ai = amp(rng);
        for (std::size_t p = 0; p < g.size(); ++p) {
            auto x = g.position(p);
            double ph = g.wavenumber(m) * x[0];
            if (g.dim() > 1) ph += g.wavenumber((m * 7) % kmax) * x[1];
            f[p] += cplx{ar, ai} * std::exp(cplx{0.0, ph});
        }
    }
    return f;
}

// Independent oracle: direct O(N^2) Fourier sum for the H^s norm of a 1d field.
double naive_sobolev_1d(const Field& f, double s) {
    const Grid& g = f.grid();
    const int n = g.n();
    double acc = 0.0;
    for (int m = -n / 2; m < n / 2; ++m) {
        cplx c{0.0, 0.0};
        for (int j = 0; j < n; ++j) {
            double x = g.coord(j);
            c += f[static_cast<std::size_t>(j)] * std::exp(cplx{0.0, -g.wavenumber(m) * x});
        }
        c /= static_cast<double>(n);
        double xi = g.wavenumber(m);
        acc += std::pow(1.0 + xi * xi, s) * std::norm(c);
    }
    return std::sqrt(acc * g.volume());
}

} // namespace

TEST_CASE("sobolev norm: constant field equals |c| sqrt(V)") {
    Grid g(1, 64, 2.0 * PI, 0.4);
    Field f(g, cplx{3.5, 0.0});
    CHECK(spectral::sobolev_norm(f, 0.0) == doctest::Approx(3.5 * std::sqrt(g.volume())).epsilon(1e-12));
    // any s: only the zero mode contributes
    CHECK(spectral::sobolev_norm(f, 1.7) == doctest::Approx(3.5 * std::sqrt(g.volume())).epsilon(1e-12));
}

TEST_CASE("sobolev norm: single mode scales as (1+|xi|^2)^{s/2} sqrt(V)") {
    Grid g(2, 32, 2.0 * PI, 0.4);
    double xi1 = g.wavenumber(3), xi2 = g.wavenumber(-2);
    Field f = sample(g, [&](const std::array<double, 3>& x) {
        return std::exp(cplx{0.0, xi1 * x[0] + xi2 * x[1]});
    });
    double k2 = xi1 * xi1 + xi2 * xi2;
    for (double s : {-1.0, 0.0, 0.5, 2.0}) {
        double expect = std::pow(1.0 + k2, s / 2.0) * std::sqrt(g.volume());
        CHECK(spectral::sobolev_norm(f, s) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("sobolev norm agrees with the naive DFT oracle") {
    Grid g(1, 64, 2.0 * PI, 0.4);
    Field f = random_smooth(g, 31);
    for (double s : {-0.5, 0.0, 0.5, 1.0}) {
        CHECK(spectral::sobolev_norm(f, s) == doctest::Approx(naive_sobolev_1d(f, s)).epsilon(1e-11));
    }
}

TEST_CASE("interpolation inequality ||f||_{H^1/2} <= ||f||_{L2}^{1/2} ||f||_{H1}^{1/2}") {
    Grid g(1, 128, 2.0 * PI, 0.4);
    for (unsigned seed : {1u, 2u, 3u, 4u}) {
        Field f = random_smooth(g, seed, 12);
        double h12 = spectral::sobolev_norm(f, 0.5);
        double l2 = spectral::sobolev_norm(f, 0.0);
        double h1 = spectral::sobolev_norm(f, 1.0);
        CHECK(h12 <= std::sqrt(l2 * h1) * (1.0 + 1e-12));
    }
}

TEST_CASE("Parseval: spectral L2 equals sample L2 to 1e-12 relative") {
    Grid g(2, 32, 3.0, 0.4);
    Field f = random_smooth(g, 77);
    double a = spectral::sobolev_norm(f, 0.0);
    double b = spectral::l2_norm(f);
    CHECK(std::abs(a - b) <= 1e-12 * b);
}

TEST_CASE("sobolev norm rejects non-finite samples and out-of-range order") {
    Grid g(1, 16, 1.0, 0.4);
    Field f(g);
    f[3] = cplx{std::numeric_limits<double>::quiet_NaN(), 0.0};
    CHECK_THROWS_AS(spectral::sobolev_norm(f, 0.0), InvalidFieldError);
    Field ok(g, cplx{1.0, 0.0});
    CHECK_THROWS_AS(spectral::sobolev_norm(ok, 3.5), ConfigError);
}

TEST_CASE("spectral derivative of a representable mode is exact") {
    Grid g(1, 64, 2.0 * PI, 0.4);
    double xi = g.wavenumber(5);
    Field f = sample(g, [&](const std::array<double, 3>& x) { return std::exp(cplx{0.0, xi * x[0]}); });
    Field df = spectral::derivative(f, 0);
    double worst = 0.0;
    for (std::size_t p = 0; p < g.size(); ++p)
        worst = std::max(worst, std::abs(df[p] - cplx{0.0, xi} * f[p]));
    CHECK(worst <= 1e-12 * xi);
}

TEST_CASE("dalembert: f = t^2 gives -2, f = x1^2-type quadratic gives spatial curvature") {
    Grid g(1, 64, 2.0 * PI, 0.4);
    double dt = g.dt();
    auto slice = [&](double t) { return Field(g, cplx{t * t, 0.0}); };
    FieldHistory h{slice(1.0 - dt), slice(1.0), slice(1.0 + dt)};
    Field r = dalembert(h);
    for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(r[p] - cplx{-2.0, 0.0}) < 1e-9);

    // periodic analogue of x^2: a single spatial mode, lap e(ikx) = -k^2 e(ikx)
    double xi = g.wavenumber(3);
    Field s = sample(g, [&](const std::array<double, 3>& x) { return std::exp(cplx{0.0, xi * x[0]}); });
    FieldHistory hs{s, s, s};
    Field rs = dalembert(hs);
    for (std::size_t p = 0; p < g.size(); ++p)
        CHECK(std::abs(rs[p] + xi * xi * s[p]) < 1e-9);
}

TEST_CASE("dalembert annihilates a resolved characteristic plane wave to O(dt^2)") {
    Grid g(1, 128, 2.0 * PI, 0.2);
    double xi = g.wavenumber(4);
    auto slice = [&](double t) {
        return sample(g, [&](const std::array<double, 3>& x) {
            return std::exp(cplx{0.0, xi * x[0] - std::abs(xi) * t});
        });
    };
    double dt = g.dt();
    FieldHistory h{slice(-dt), slice(0.0), slice(dt)};
    Field r = dalembert(h);
    // residual = O(dt^2 |xi|^4) from the centered second difference
    double bound = 0.5 * dt * dt * std::pow(std::abs(xi), 4.0);
    for (std::size_t p = 0; p < g.size(); ++p) CHECK(std::abs(r[p]) < bound);
    CHECK(max_abs(r) > 0.0); // genuinely discrete, not identically zero
}

TEST_CASE("dalembert rejects mismatched grids") {
    Grid a(1, 32, 2.0 * PI, 0.4), b(1, 64, 2.0 * PI, 0.4);
    FieldHistory h{Field(a), Field(a), Field(b)};
    CHECK_THROWS_AS(dalembert(h), ConfigError);
}

TEST_CASE("projectors: partition of unity, idempotence, mode passthrough") {
    Grid g(1, 128, 2.0 * PI, 0.4);
    Field f = random_smooth(g, 5, 20);
    double lambda = 0.05, kappa = 0.2;
    Field lo = spectral::project_low(f, lambda, kappa);
    Field hi = spectral::project_high(f, lambda, kappa);
    Field sum = lo + hi;
    sum -= f;
    CHECK(spectral::l2_norm(sum) <= 1e-13 * spectral::l2_norm(f));

    Field lolo = spectral::project_low(lo, lambda, kappa);
    lolo -= lo;
    CHECK(spectral::l2_norm(lolo) <= 1e-13 * std::max(1.0, spectral::l2_norm(lo)));

    // a mode below the cutoff passes unchanged
    double cutoff = std::pow(lambda, -kappa);
    int m = 1;
    REQUIRE(g.wavenumber(m) <= cutoff);
    Field mode = sample(g, [&](const std::array<double, 3>& x) {
        return std::exp(cplx{0.0, g.wavenumber(m) * x[0]});
    });
    Field pm = spectral::project_low(mode, lambda, kappa);
    pm -= mode;
    CHECK(spectral::l2_norm(pm) <= 1e-12);

    CHECK_THROWS_AS(spectral::project_low(f, lambda, 0.3), ConfigError);
    CHECK_THROWS_AS(spectral::project_low(f, -1.0, 0.1), ConfigError);
}

TEST_CASE("oscillatory dalembert: plane phase with constant amplitude gives zero") {
    Grid g(1, 64, 2.0 * PI, 0.3);
    Field u0 = sample(g, [&](const std::array<double, 3>& x) { return x[0]; }); // u = x - t at t=0
    VecField du(g);
    du[0] = Field(g, cplx{-1.0, 0.0});
    du[1] = Field(g, cplx{1.0, 0.0});
    Field boxu(g);
    Field c(g, cplx{2.0, 0.5});
    FieldHistory F{c, c, c};
    Field r = oscillatory_dalembert(F, u0, du, boxu, 0.05);
    CHECK(max_abs(r) <= 1e-12);

    // F = 0 -> 0
    Field z(g);
    FieldHistory Fz{z, z, z};
    CHECK(max_abs(oscillatory_dalembert(Fz, u0, du, boxu, 0.05)) == 0.0);

    CHECK_THROWS_AS(oscillatory_dalembert(F, u0, du, boxu, -0.1), ConfigError);
}

TEST_CASE("oscillatory dalembert is linear in the amplitude") {
    Grid g(1, 64, 2.0 * PI, 0.3);
    Field u0 = sample(g, [&](const std::array<double, 3>& x) { return 2.0 * x[0]; });
    VecField du(g);
    du[0] = Field(g, cplx{-2.0, 0.0});
    du[1] = Field(g, cplx{2.0, 0.0});
    Field boxu(g);
    auto mk = [&](unsigned seed) {
        Field a = random_smooth(g, seed);
        Field b = random_smooth(g, seed + 100);
        Field c = random_smooth(g, seed + 200);
        return FieldHistory{a, b, c};
    };
    FieldHistory F1 = mk(11), F2 = mk(21);
    cplx c1{0.7, -0.3}, c2{-1.2, 0.4};
    FieldHistory Fsum{c1 * F1.prev + c2 * F2.prev, c1 * F1.mid + c2 * F2.mid, c1 * F1.next + c2 * F2.next};
    double lambda = 0.07;
    Field lhs = oscillatory_dalembert(Fsum, u0, du, boxu, lambda);
    Field rhs = c1 * oscillatory_dalembert(F1, u0, du, boxu, lambda);
    axpy(rhs, c2, oscillatory_dalembert(F2, u0, du, boxu, lambda));
    lhs -= rhs;
    CHECK(spectral::l2_norm(lhs) <= 1e-12 * spectral::l2_norm(rhs));
}

TEST_CASE("oscillatory dalembert matches a finite-difference oracle at resolved lambda") {
    // coarse lambda: the sampled product is resolved, so a centered-difference box
    // applied to the literal product must agree to O(dx^2 + dt^2). lambda is chosen
    // commensurate with the box (L/lambda in 2 pi Z) so the literal product is periodic.
    Grid g(1, 2048, 2.0 * PI, 0.1);
    double lambda = 1.0 / 3.0;
    REQUIRE(lambda >= 10.0 * g.dx() * 2.0 * PI);
    double dt = g.dt();

    auto amp = [&](double t) {
        return sample(g, [&](const std::array<double, 3>& x) {
            double envelope = std::exp(std::cos(x[0]));
            return cplx{envelope * (1.0 + 0.2 * t), 0.3 * envelope * std::sin(x[0] + t)};
        });
    };
    auto uat = [&](double t) {
        return sample(g, [&](const std::array<double, 3>& x) { return x[0] - t; });
    };
    VecField du(g);
    du[0] = Field(g, cplx{-1.0, 0.0});
    du[1] = Field(g, cplx{1.0, 0.0});
    Field boxu(g);

    FieldHistory F{amp(-dt), amp(0.0), amp(dt)};
    Field cascade = oscillatory_dalembert(F, uat(0.0), du, boxu, lambda);

    // oracle: product sampled literally, centered differences in space and time
    auto prod = [&](double t) {
        Field u = uat(t);
        Field a = amp(t);
        Field r(g);
        for (std::size_t p = 0; p < g.size(); ++p)
            r[p] = std::exp(cplx{0.0, u[p].real() / lambda}) * a[p];
        return r;
    };
    Field pm = prod(-dt), p0 = prod(0.0), pp = prod(dt);
    const int n = g.n();
    const double idx2 = 1.0 / (g.dx() * g.dx());
    const double idt2 = 1.0 / (dt * dt);
    Field oracle(g);
    for (int j = 0; j < n; ++j) {
        int jm = (j + n - 1) % n, jp = (j + 1) % n;
        cplx lap = (p0[static_cast<std::size_t>(jp)] - 2.0 * p0[static_cast<std::size_t>(j)] +
                    p0[static_cast<std::size_t>(jm)]) * idx2;
        cplx dtt = (pp[static_cast<std::size_t>(j)] - 2.0 * p0[static_cast<std::size_t>(j)] +
                    pm[static_cast<std::size_t>(j)]) * idt2;
        oracle[static_cast<std::size_t>(j)] = -dtt + lap;
    }
    Field diff = cascade - oracle;
    double scale = spectral::l2_norm(cascade);
    // O(dx^2/lambda^2-ish) from the finite-difference side
    double tol = 20.0 * (g.dx() * g.dx() + dt * dt) / (lambda * lambda) * scale;
    CHECK(spectral::l2_norm(diff) <= tol);
}

TEST_CASE("two-thirds dealiasing removes the top third of the spectrum") {
    Grid g(1, 64, 2.0 * PI, 0.4);
    int mhi = 30; // above 2/3 * 32
    Field f = sample(g, [&](const std::array<double, 3>& x) {
        return std::exp(cplx{0.0, g.wavenumber(mhi) * x[0]}) + std::exp(cplx{0.0, g.wavenumber(2) * x[0]});
    });
    Field d = spectral::dealias_two_thirds(f);
    Field keep = sample(g, [&](const std::array<double, 3>& x) {
        return std::exp(cplx{0.0, g.wavenumber(2) * x[0]});
    });
    d -= keep;
    CHECK(spectral::l2_norm(d) <= 1e-12);
}

TEST_CASE("grid invariants are enforced") {
    CHECK_THROWS_AS(Grid(4, 32, 1.0, 0.4), ConfigError);
    CHECK_THROWS_AS(Grid(1, 48, 1.0, 0.4), ConfigError);   // not a power of two
    CHECK_THROWS_AS(Grid(1, 32, 1.0, 0.7), ConfigError);   // cfl > 0.5
    CHECK_THROWS_AS(Grid(1, 32, -1.0, 0.4), ConfigError);
    Grid g(3, 8, 2.0, 0.25);
    CHECK(g.size() == 512);
    CHECK(g.dt() == doctest::Approx(0.25 * g.dx()));
}
