#include "kgmo/elliptic.hpp"
#include "kgmo/harness.hpp"

namespace kgmo {

std::vector<std::string> scenario_names() {
    return {"single-phase-1d", "resonant-pair-1d", "separated-pair-1d",
            "separated-pair-2d", "backreaction-1d", "no-charge-1d", "all-zero"};
}

ExperimentConfig scenario_config(const std::string& name) {
    ExperimentConfig cfg;
    cfg.scenario = name;
    if (name == "single-phase-1d") {
        cfg.plane = {{1.0}};
        cfg.psi_amplitude = {1.0};
        cfg.w_amplitude = {0.6};
        cfg.phi_amplitude = 0.7;
    } else if (name == "resonant-pair-1d") {
        cfg.plane = {{1.0}, {2.0}};
        cfg.psi_amplitude = {1.3, 1.05};
        cfg.w_amplitude = {0.6, 0.8};
        cfg.phi_amplitude = 0.7;
    } else if (name == "separated-pair-1d") {
        cfg.plane = {{1.0}, {-1.0}};
        cfg.psi_amplitude = {1.3, 1.05};
        cfg.w_amplitude = {0.6, 0.8};
        cfg.phi_amplitude = 0.7;
    } else if (name == "separated-pair-2d") {
        cfg.dim = 2;
        cfg.n = 64;
        cfg.plane = {{1.0, 0.0}, {0.0, 1.0}};
        cfg.psi_amplitude = {0.8, 0.7};
        cfg.w_amplitude = {0.5, 0.5};
        cfg.phi_amplitude = 0.6;
        cfg.T = 0.2;
    } else if (name == "backreaction-1d") {
        cfg.plane = {{1.0}};
        cfg.psi_amplitude = {0.9};
        cfg.w_amplitude = {0.0};
        cfg.phi_amplitude = 0.6;
    } else if (name == "no-charge-1d") {
        cfg.plane = {{1.0}};
        cfg.psi_amplitude = {0.0};
        cfg.w_amplitude = {0.0};
        cfg.phi_amplitude = 0.6;
        cfg.phi_rotation = 0.4;
    } else if (name == "all-zero") {
        cfg.plane = {{1.0}};
        cfg.psi_amplitude = {0.0};
        cfg.w_amplitude = {0.0};
        cfg.phi_amplitude = 0.0;
        cfg.lambdas = {0.1};
    } else {
        throw ConfigError("unknown scenario '" + name + "'");
    }
    return cfg;
}

BackgroundInitialData background_from_config(const ExperimentConfig& cfg) {
    Grid g = cfg.grid();
    std::vector<EikonalData> eik;
    for (const auto& k : cfg.plane) eik.push_back(EikonalData::plane(g, k));
    // sampled eikonal data from snapshot files: v periodic part then vdot
    for (const auto& stem : cfg.files) {
        EikonalData d;
        d.grid = g;
        d.klin.assign(static_cast<std::size_t>(g.dim()), 0.0);
        d.v_periodic = read_snapshot(stem + ".v", g);
        d.vdot = read_snapshot(stem + ".vdot", g);
        eik.push_back(std::move(d));
    }
    if (eik.empty()) throw ConfigError("no phases declared");

    auto d = BackgroundInitialData::zero(g, eik);
    d.support_radius = cfg.support_radius;

    auto amp_at = [](const std::vector<double>& v, std::size_t i) {
        if (v.empty()) return 0.0;
        return (i < v.size()) ? v[i] : v.back();
    };
    for (std::size_t a = 0; a < eik.size(); ++a) {
        double pa = amp_at(cfg.psi_amplitude, a);
        double wa = amp_at(cfg.w_amplitude, a);
        std::array<double, 3> cpsi{0.25 * (a + 1.0) - 0.4, g.dim() > 1 ? 0.15 * a - 0.1 : 0.0, 0.0};
        std::array<double, 3> cw{-0.2 * (a + 1.0), g.dim() > 1 ? -0.1 * (a + 1.0) : 0.0, 0.0};
        if (pa != 0.0) d.psi[a] = bump(g, cpsi, cfg.bump_radius, pa * (1.0 - 0.2 * a));
        if (wa != 0.0) {
            Field wb = bump(g, cw, 0.9 * cfg.bump_radius, wa);
            if (!eik[a].plane_k) throw ConfigError("w amplitudes currently require plane-wave phases");
            const auto& k = *eik[a].plane_k;
            double kn = 0.0;
            for (double kc : k) kn += kc * kc;
            kn = std::sqrt(kn);
            if (g.dim() == 1) {
                // longitudinal polarization: vdot w^0 + k w^1 = 0
                d.w[a][1] = wb;
                for (std::size_t q = 0; q < g.size(); ++q) d.w[a][0][q] = (k[0] / kn) * wb[q];
            } else {
                // transverse polarization: any spatial vector orthogonal to k
                double tx = -k[1] / kn, ty = k[0] / kn;
                for (std::size_t q = 0; q < g.size(); ++q) {
                    d.w[a][1][q] = tx * wb[q];
                    d.w[a][2][q] = ty * wb[q];
                }
            }
        }
    }
    if (cfg.phi_amplitude != 0.0)
        d.phi0 = bump(g, {0.3, g.dim() > 1 ? 0.2 : 0.0, 0.0}, 1.1 * cfg.bump_radius, cfg.phi_amplitude);

    // charge rotation: a neutralizing uniform part against the backreaction flux plus an
    // optional spatial modulation for genuinely charged plain-KGM runs
    double sig = 0.0, p2 = 0.0;
    for (std::size_t q = 0; q < g.size(); ++q) {
        for (std::size_t a = 0; a < eik.size(); ++a)
            sig += eik[a].vdot[q].real() * std::norm(d.psi[a][q]);
        p2 += std::norm(d.phi0[q]);
    }
    double c = (p2 > 0.0) ? -sig / p2 : 0.0;
    if (p2 == 0.0 && sig != 0.0)
        throw ConfigError("backreaction charge cannot be balanced: phi amplitude is zero");
    for (std::size_t q = 0; q < g.size(); ++q) {
        auto x = g.position(q);
        double rot = c + cfg.phi_rotation * std::cos(x[0]);
        d.phi0dot[q] = cplx{0.0, rot} * d.phi0[q];
    }

    // Maxwell constraint: (-lap + |phi0|^2) a0^0 = -Im(phi0 conj(phi0dot)) + sum vdot |psi|^2
    Field rhs(g);
    bool nonzero = false;
    for (std::size_t q = 0; q < g.size(); ++q) {
        double im = (d.phi0[q] * std::conj(d.phi0dot[q])).imag();
        rhs[q] = -im;
        for (std::size_t a = 0; a < eik.size(); ++a)
            rhs[q] += eik[a].vdot[q].real() * std::norm(d.psi[a][q]);
        if (std::abs(rhs[q].real()) > 1e-14) nonzero = true;
    }
    if (nonzero) d.a0[0] = solve_perturbed_laplacian(abs2(d.phi0), rhs, 1e-12).f;
    return d;
}

} // namespace kgmo
