// Shared test fixtures: small analytic backgrounds on 1d grids.
#ifndef KGMO_TEST_PRESETS_HPP
#define KGMO_TEST_PRESETS_HPP

#include "kgmo/background.hpp"
#include "kgmo/elliptic.hpp"

namespace kgmo::testing {

// Plane-wave phases kvecs with psi and longitudinally polarized w bumps and a
// neutralizing smooth charge in (phi0, phi0dot); a0^0 from the constraint solve.
inline BackgroundInitialData two_phase_data(const Grid& g, const std::vector<double>& kvecs,
                                            double psi_amp, double w_amp, double phi_amp) {
    std::vector<EikonalData> eik;
    for (double k : kvecs) eik.push_back(EikonalData::plane(g, {k}));
    auto d = BackgroundInitialData::zero(g, eik);
    for (std::size_t a = 0; a < eik.size(); ++a) {
        d.psi[a] = bump(g, {0.25 * (a + 1.0) - 0.4, 0.0, 0.0}, 1.0, psi_amp * (1.0 - 0.2 * a));
        Field wb = bump(g, {-0.2 * (a + 1.0), 0.0, 0.0}, 0.9, w_amp * (1.0 + 0.3 * a));
        double k = kvecs[a];
        d.w[a][1] = wb;
        for (std::size_t q = 0; q < g.size(); ++q) d.w[a][0][q] = (k / std::abs(k)) * wb[q];
    }
    d.phi0 = bump(g, {0.3, 0.0, 0.0}, 1.1, phi_amp);
    double sig = 0.0, p2 = 0.0;
    for (std::size_t q = 0; q < g.size(); ++q) {
        for (std::size_t a = 0; a < eik.size(); ++a)
            sig += eik[a].vdot[q].real() * std::norm(d.psi[a][q]);
        p2 += std::norm(d.phi0[q]);
    }
    double c = (p2 > 0.0 && phi_amp != 0.0) ? -sig / p2 : 0.0;
    for (std::size_t q = 0; q < g.size(); ++q) d.phi0dot[q] = cplx{0.0, c} * d.phi0[q];
    Field rhs(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        double im = (d.phi0[q] * std::conj(d.phi0dot[q])).imag();
        rhs[q] = -im;
        for (std::size_t a = 0; a < eik.size(); ++a)
            rhs[q] += eik[a].vdot[q].real() * std::norm(d.psi[a][q]);
    }
    if (phi_amp != 0.0) d.a0[0] = solve_perturbed_laplacian(abs2(d.phi0), rhs, 1e-12).f;
    d.support_radius = 1.8;
    return d;
}

inline double fit_loglog_slope(const std::vector<double>& lams, const std::vector<double>& vals) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int n = static_cast<int>(lams.size());
    for (int i = 0; i < n; ++i) {
        double x = std::log(lams[static_cast<std::size_t>(i)]);
        double y = std::log(vals[static_cast<std::size_t>(i)]);
        sx += x; sy += y; sxx += x * x; sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace kgmo::testing

#endif
