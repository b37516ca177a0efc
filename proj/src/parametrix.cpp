#include "kgmo/parametrix.hpp"

#include <cmath>

namespace kgmo {

namespace {

inline double raise_sign(int b) { return b == 0 ? -1.0 : 1.0; }

Field centered_dt(const Field& prev, const Field& next, double dt) {
    Field r(prev.grid());
    const double s = 1.0 / (2.0 * dt);
    for (std::size_t q = 0; q < r.size(); ++q) r[q] = (next[q] - prev[q]) * s;
    return r;
}

// covariant derivative d_b of the first-order expansion of the complex scalar slot
// Phi1 = Phi0 + lambda^{1/2} sum_A e^{iu/lambda} Psi_A; oscillation handled analytically.
std::vector<Field> first_order_dPhi(const CheckpointWindow& w, const std::vector<Phase>& phases,
                                    double lambda) {
    const Grid& g = w.center().Phi.grid();
    const int step = w.center_step;
    const double rl = std::sqrt(lambda);
    std::vector<Field> d(static_cast<std::size_t>(g.dim()) + 1);
    d[0] = centered_dt(w.s[1].Phi, w.s[3].Phi, g.dt());
    for (int i = 1; i <= g.dim(); ++i)
        d[static_cast<std::size_t>(i)] = spectral::derivative(w.center().Phi, i - 1);
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field e = oscillation(phases[a].u_values(step), lambda);
        VecField du = phases[a].dcov(step);
        Field dtPsi = centered_dt(w.s[1].Psi[a], w.s[3].Psi[a], g.dt());
        for (int b = 0; b <= g.dim(); ++b) {
            Field dPsi = (b == 0) ? dtPsi : spectral::derivative(w.center().Psi[a], b - 1);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx inner = cplx{0.0, du[b][q].real() / lambda} * w.center().Psi[a][q] + dPsi[q];
                d[static_cast<std::size_t>(b)][q] += rl * e[q] * inner;
            }
        }
    }
    return d;
}

} // namespace

VecField first_order_A(const BgSlice& s, const std::vector<Phase>& phases, int step, double lambda) {
    const Grid& g = s.Phi.grid();
    VecField A = s.A;
    const double rl = std::sqrt(lambda);
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field e = oscillation(phases[a].u_values(step), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                A[b][q] += rl * (e[q] * std::conj(s.W[a][b][q])).real();
    }
    return A;
}

Field first_order_Phi(const BgSlice& s, const std::vector<Phase>& phases, int step, double lambda) {
    const Grid& g = s.Phi.grid();
    Field Phi = s.Phi;
    const double rl = std::sqrt(lambda);
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field e = oscillation(phases[a].u_values(step), lambda);
        for (std::size_t q = 0; q < g.size(); ++q) Phi[q] += rl * e[q] * s.Psi[a][q];
    }
    return Phi;
}

FirstOrderExpansion assemble_first_order(const CheckpointWindow& w, const std::vector<Phase>& phases,
                                         double lambda) {
    FirstOrderExpansion f;
    f.lambda = lambda;
    f.center_step = w.center_step;
    f.A.prev = first_order_A(w.s[1], phases, w.center_step - 1, lambda);
    f.A.mid = first_order_A(w.s[2], phases, w.center_step, lambda);
    f.A.next = first_order_A(w.s[3], phases, w.center_step + 1, lambda);
    f.Phi.prev = first_order_Phi(w.s[1], phases, w.center_step - 1, lambda);
    f.Phi.mid = first_order_Phi(w.s[2], phases, w.center_step, lambda);
    f.Phi.next = first_order_Phi(w.s[3], phases, w.center_step + 1, lambda);
    return f;
}

ResidualReport residual_kgml(const VecFieldHistory& A, const FieldHistory& Phi) {
    const Grid& g = Phi.grid();
    const double dt = g.dt();
    ResidualReport rep;

    VecField boxA = dalembert(A);
    Field boxPhi = dalembert(Phi);
    Field dtPhi = centered_dt(Phi.prev, Phi.next, dt);
    std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()) + 1);
    dPhi[0] = dtPhi;
    for (int i = 1; i <= g.dim(); ++i) dPhi[static_cast<std::size_t>(i)] = spectral::derivative(Phi.mid, i - 1);
    Field absPhi2 = abs2(Phi.mid);

    rep.RA = VecField(g);
    for (int b = 0; b <= g.dim(); ++b) {
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx dup = raise_sign(b) * dPhi[static_cast<std::size_t>(b)][q];
            rep.RA[b][q] = boxA[b][q] + (Phi.mid[q] * std::conj(dup)).imag() -
                           A.mid[b][q] * absPhi2[q].real();
        }
    }
    rep.RPhi = Field(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx AdPhi = A.mid[0][q] * dtPhi[q];
        for (int i = 1; i <= g.dim(); ++i) AdPhi += A.mid[i][q] * dPhi[static_cast<std::size_t>(i)][q];
        cplx A2 = -A.mid[0][q] * A.mid[0][q];
        for (int i = 1; i <= g.dim(); ++i) A2 += A.mid[i][q] * A.mid[i][q];
        rep.RPhi[q] = boxPhi[q] + cplx{0.0, 2.0} * AdPhi - A2 * Phi.mid[q];
    }
    rep.RL = centered_dt(A.prev[0], A.next[0], dt);
    rep.RL += spectral::spatial_divergence(A.mid);

    double n2 = 0.0;
    for (int b = 0; b <= g.dim(); ++b) n2 += std::pow(spectral::l2_norm(rep.RA[b]), 2);
    rep.norm_RA = std::sqrt(n2);
    rep.norm_RPhi = spectral::l2_norm(rep.RPhi);
    rep.norm_RL = spectral::l2_norm(rep.RL);
    return rep;
}

ResidualReport residual_first_order(const CheckpointWindow& w, const std::vector<Phase>& phases,
                                    double lambda) {
    const Grid& g = w.center().Phi.grid();
    const int step = w.center_step;
    const double dt = g.dt();
    const double rl = std::sqrt(lambda);
    ResidualReport rep;

    VecField A1 = first_order_A(w.center(), phases, step, lambda);
    Field Phi1 = first_order_Phi(w.center(), phases, step, lambda);

    // box of the smooth parts: discrete on the background window
    VecField boxA(g);
    for (int b = 0; b <= g.dim(); ++b)
        boxA[b] = dalembert(FieldHistory{w.s[1].A[b], w.s[2].A[b], w.s[3].A[b]});
    Field boxPhi = dalembert(FieldHistory{w.s[1].Phi, w.s[2].Phi, w.s[3].Phi});

    // box of the oscillatory parts through the cascade identity
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field u0 = phases[a].u_values(step);
        VecField du = phases[a].dcov(step);
        Field bx = phases[a].box_u(step);
        for (int b = 0; b <= g.dim(); ++b) {
            FieldHistory Wc{conj(w.s[1].W[a][b]), conj(w.s[2].W[a][b]), conj(w.s[3].W[a][b])};
            Field osc = oscillatory_dalembert(Wc, u0, du, bx, lambda);
            for (std::size_t q = 0; q < g.size(); ++q) boxA[b][q] += rl * osc[q].real();
        }
        FieldHistory Ph{w.s[1].Psi[a], w.s[2].Psi[a], w.s[3].Psi[a]};
        Field oscp = oscillatory_dalembert(Ph, u0, du, bx, lambda);
        for (std::size_t q = 0; q < g.size(); ++q) boxPhi[q] += rl * oscp[q];
    }

    std::vector<Field> dPhi1 = first_order_dPhi(w, phases, lambda);
    Field absPhi2 = abs2(Phi1);

    rep.RA = VecField(g);
    for (int b = 0; b <= g.dim(); ++b) {
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx dup = raise_sign(b) * dPhi1[static_cast<std::size_t>(b)][q];
            rep.RA[b][q] = boxA[b][q] + (Phi1[q] * std::conj(dup)).imag() - A1[b][q] * absPhi2[q].real();
        }
    }
    rep.RPhi = Field(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx AdPhi = A1[0][q] * dPhi1[0][q];
        for (int i = 1; i <= g.dim(); ++i) AdPhi += A1[i][q] * dPhi1[static_cast<std::size_t>(i)][q];
        cplx A2 = -A1[0][q] * A1[0][q];
        for (int i = 1; i <= g.dim(); ++i) A2 += A1[i][q] * A1[i][q];
        rep.RPhi[q] = boxPhi[q] + cplx{0.0, 2.0} * AdPhi - A2 * Phi1[q];
    }

    // gauge slot: d_t A1^0 + div A1^i with oscillations expanded analytically
    rep.RL = centered_dt(w.s[1].A[0], w.s[3].A[0], dt);
    rep.RL += spectral::spatial_divergence(w.center().A);
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field e = oscillation(phases[a].u_values(step), lambda);
        VecField du = phases[a].dcov(step);
        Field dtW0 = centered_dt(w.s[1].W[a][0], w.s[3].W[a][0], dt);
        for (std::size_t q = 0; q < g.size(); ++q) {
            // d_a u conj(W^a): covariant phase gradient against the contravariant amplitude
            cplx duW = du[0][q].real() * std::conj(w.center().W[a][0][q]);
            for (int i = 1; i <= g.dim(); ++i) duW += du[i][q].real() * std::conj(w.center().W[a][i][q]);
            cplx inner = cplx{0.0, 1.0 / lambda} * duW + std::conj(dtW0[q]);
            rep.RL[q] += rl * (e[q] * inner).real();
        }
        for (int i = 1; i <= g.dim(); ++i) {
            Field dWi = spectral::derivative(w.center().W[a][i], i - 1);
            for (std::size_t q = 0; q < g.size(); ++q)
                rep.RL[q] += rl * (e[q] * std::conj(dWi[q])).real();
        }
    }

    double n2 = 0.0;
    for (int b = 0; b <= g.dim(); ++b) n2 += std::pow(spectral::l2_norm(rep.RA[b]), 2);
    rep.norm_RA = std::sqrt(n2);
    rep.norm_RPhi = spectral::l2_norm(rep.RPhi);
    rep.norm_RL = spectral::l2_norm(rep.RL);
    return rep;
}

DecomposedResidual residual_decompose(const ResidualReport& rep, const InteractionTerms& terms,
                                      const std::vector<Phase>& phases, double lambda,
                                      double xi_scale) {
    const Grid& g = rep.RPhi.grid();
    VecField xiA = reconstruct_xi_maxwell(terms, phases, lambda);
    Field xiPhi = reconstruct_xi_kg(terms, phases, lambda);

    DecomposedResidual out;
    double xi2 = 0.0, rem2 = 0.0;
    for (int b = 0; b <= g.dim(); ++b) {
        Field remb = rep.RA[b];
        axpy(remb, cplx{-xi_scale, 0.0}, xiA[b]);
        xi2 += std::pow(spectral::l2_norm(xiA[b]), 2);
        rem2 += std::pow(spectral::l2_norm(remb), 2);
    }
    Field remp = rep.RPhi;
    axpy(remp, cplx{-xi_scale, 0.0}, xiPhi);
    xi2 += std::pow(spectral::l2_norm(xiPhi), 2);
    rem2 += std::pow(spectral::l2_norm(remp), 2);
    out.xi_tilde = std::sqrt(xi2);
    out.remainder = std::sqrt(rem2);
    out.gauge = rep.norm_RL;
    return out;
}

CascadeLedger cascade_ledger(const CheckpointWindow& w, const std::vector<Phase>& phases) {
    const Grid& g = w.center().Phi.grid();
    const int step = w.center_step;
    const double dt = g.dt();
    CascadeLedger led;

    auto lt4 = [&](auto get) { // fourth-order time derivative across the window
        return time_derivative_o4(get(w.s[0]), get(w.s[1]), get(w.s[3]), get(w.s[4]), dt);
    };
    // box from the (position, velocity) trajectory: d2_t via a first-derivative stencil of
    // the stored velocities, which keeps the roundoff floor at eps/dt instead of eps/dt^2
    auto box4 = [&](auto get, auto getdot) {
        Field dtt = time_derivative_o4(getdot(w.s[0]), getdot(w.s[1]), getdot(w.s[3]),
                                       getdot(w.s[4]), dt);
        Field r = spectral::laplacian(get(w.s[2]));
        r -= dtt;
        return r;
    };

    const BgSlice& c = w.center();
    for (std::size_t a = 0; a < phases.size(); ++a) {
        VecField du = phases[a].dcov(step);
        Field bx = phases[a].box_u(step);
        Field eik = minkowski_dot(du, du);

        for (int b = 0; b <= g.dim(); ++b)
            led.eikonal_slot = std::max(led.eikonal_slot, spectral::l2_norm(mul(eik, c.W[a][b])));
        led.eikonal_slot = std::max(led.eikonal_slot, spectral::l2_norm(mul(eik, c.Psi[a])));

        auto transport_residual = [&](const Field& f, const Field& dtf, const Field& rhs) {
            Field r(g);
            std::vector<Field> df(static_cast<std::size_t>(g.dim()));
            for (int i = 0; i < g.dim(); ++i) df[static_cast<std::size_t>(i)] = spectral::derivative(f, i);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx adv = -du[0][q] * dtf[q];
                for (int i = 1; i <= g.dim(); ++i) adv += du[i][q] * df[static_cast<std::size_t>(i - 1)][q];
                r[q] = 2.0 * adv + bx[q] * f[q] - rhs[q];
            }
            return spectral::l2_norm(r);
        };
        for (int b = 0; b <= g.dim(); ++b) {
            Field dtW = lt4([&](const BgSlice& s) { return s.W[a][b]; });
            Field rhs(g);
            double sgn = raise_sign(b);
            for (std::size_t q = 0; q < g.size(); ++q)
                rhs[q] = cplx{0.0, sgn} * du[b][q].real() * std::conj(c.Psi[a][q]) * c.Phi[q];
            led.transport_slot =
                std::max(led.transport_slot, transport_residual(c.W[a][b], dtW, rhs));
        }
        {
            Field dtPsi = lt4([&](const BgSlice& s) { return s.Psi[a]; });
            Field rhs(g);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx Adu = c.A[0][q] * du[0][q];
                for (int i = 1; i <= g.dim(); ++i) Adu += c.A[i][q] * du[i][q];
                rhs[q] = cplx{0.0, -2.0} * Adu * c.Psi[a][q];
            }
            led.transport_slot =
                std::max(led.transport_slot, transport_residual(c.Psi[a], dtPsi, rhs));
        }
    }

    // O(1) non-oscillating slots: the background wave equations themselves
    {
        Field absPhi2 = abs2(c.Phi);
        std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()));
        for (int i = 0; i < g.dim(); ++i) dPhi[static_cast<std::size_t>(i)] = spectral::derivative(c.Phi, i);
        for (int b = 0; b <= g.dim(); ++b) {
            Field r = box4([&](const BgSlice& s) { return s.A[b]; },
                           [&](const BgSlice& s) { return s.Adot[b]; });
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx dup = (b == 0) ? -c.Phidot[q] : dPhi[static_cast<std::size_t>(b - 1)][q];
                r[q] -= -(c.Phi[q] * std::conj(dup)).imag() + c.A[b][q] * absPhi2[q].real();
            }
            for (std::size_t a = 0; a < phases.size(); ++a) {
                VecField du = phases[a].dcov(step);
                double sgn = raise_sign(b);
                for (std::size_t q = 0; q < g.size(); ++q)
                    r[q] -= sgn * du[b][q].real() * std::norm(c.Psi[a][q]);
            }
            led.wave_slot = std::max(led.wave_slot, spectral::l2_norm(r));
        }
        Field r = box4([&](const BgSlice& s) { return s.Phi; },
                       [&](const BgSlice& s) { return s.Phidot; });
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx AdPhi = c.A[0][q] * c.Phidot[q];
            for (int i = 1; i <= g.dim(); ++i) AdPhi += c.A[i][q] * dPhi[static_cast<std::size_t>(i - 1)][q];
            cplx A2 = -c.A[0][q] * c.A[0][q];
            for (int i = 1; i <= g.dim(); ++i) A2 += c.A[i][q] * c.A[i][q];
            r[q] -= cplx{0.0, -2.0} * AdPhi + A2 * c.Phi[q];
        }
        led.wave_slot = std::max(led.wave_slot, spectral::l2_norm(r));
    }

    // surviving O(1) terms: the cross-phase interaction coefficients
    {
        InteractionTable table = build_interaction_table(phases, 1e-6);
        InteractionTerms terms = interaction_terms(c, phases, table, step);
        for (const auto& pi : terms.pairs) {
            for (int b = 0; b <= g.dim(); ++b)
                led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(pi.k_diff[b]));
            led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(pi.c_pp));
            led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(pi.c_pm));
            led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(pi.c_mp));
        }
        if (led.largest_surviving == 0.0) {
            for (int b = 0; b <= g.dim(); ++b)
                led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(c.A[b]));
            led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(c.Phi));
            for (std::size_t a = 0; a < phases.size(); ++a)
                led.largest_surviving = std::max(led.largest_surviving, spectral::l2_norm(c.Psi[a]));
        }
    }
    return led;
}

VecField charge_flux(const VecFieldHistory& A, const FieldHistory& Phi) {
    const Grid& g = Phi.grid();
    Field dtPhi = centered_dt(Phi.prev, Phi.next, g.dt());
    std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()) + 1);
    dPhi[0] = dtPhi;
    for (int i = 1; i <= g.dim(); ++i) dPhi[static_cast<std::size_t>(i)] = spectral::derivative(Phi.mid, i - 1);
    Field absPhi2 = abs2(Phi.mid);
    VecField J(g);
    for (int b = 0; b <= g.dim(); ++b) {
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx dup = raise_sign(b) * dPhi[static_cast<std::size_t>(b)][q];
            J[b][q] = -(Phi.mid[q] * std::conj(dup)).imag() + A.mid[b][q].real() * absPhi2[q].real();
        }
    }
    return J;
}

double total_charge(const VecFieldHistory& A, const FieldHistory& Phi) {
    VecField J = charge_flux(A, Phi);
    cplx s{0.0, 0.0};
    for (std::size_t q = 0; q < J[0].size(); ++q) s += J[0][q];
    return s.real() * Phi.grid().cell_volume();
}

double total_abs_charge(const VecFieldHistory& A, const FieldHistory& Phi) {
    VecField J = charge_flux(A, Phi);
    double s = 0.0;
    for (std::size_t q = 0; q < J[0].size(); ++q) s += std::abs(J[0][q].real());
    return s * Phi.grid().cell_volume();
}

ErrorSlice zero_error_slice(const Grid& g, std::size_t n_phases) {
    ErrorSlice e;
    e.Eevo = VecField(g);
    e.EevoDot = VecField(g);
    e.EevoPhi = Field(g);
    e.EevoPhiDot = Field(g);
    e.Wplus.assign(n_phases, VecField(g));
    e.Psiplus.assign(n_phases, Field(g));
    e.GW.assign(n_phases, VecField(g));
    e.GPsi.assign(n_phases, Field(g));
    return e;
}

FabSlice zero_fab_slice(const Grid& g, const InteractionTable& table) {
    FabSlice f;
    for (const auto& p : table.pairs) {
        if (p.cls != PairClass::Resonant) continue;
        f.pair_a.push_back(p.a);
        f.pair_b.push_back(p.b);
        f.W_sum.push_back(VecField(g));
        f.W_diff.push_back(VecField(g));
        f.Psi_pp.push_back(Field(g));
        f.Psi_pm.push_back(Field(g));
        f.Psi_mp.push_back(Field(g));
    }
    return f;
}

FullFields assemble_error(const ErrorSlice& err, const FabSlice& fab, const EllField& ell,
                          const std::vector<Phase>& phases, int step, double lambda) {
    const Grid& g = err.EevoPhi.grid();
    FullFields out;
    out.A = err.Eevo;
    out.Phi = err.EevoPhi;
    for (int b = 0; b <= g.dim(); ++b) out.A[b] += ell.A[b];
    out.Phi += ell.Phi;

    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field e = oscillation(phases[a].u_values(step), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                out.A[b][q] += lambda * (e[q] * std::conj(err.Wplus[a][b][q])).real();
        for (std::size_t q = 0; q < g.size(); ++q)
            out.Phi[q] += lambda * e[q] * err.Psiplus[a][q];
    }
    for (std::size_t r = 0; r < fab.pair_a.size(); ++r) {
        CombinedPhase sum{&phases[static_cast<std::size_t>(fab.pair_a[r])],
                          &phases[static_cast<std::size_t>(fab.pair_b[r])], 1, 1};
        CombinedPhase diff{&phases[static_cast<std::size_t>(fab.pair_a[r])],
                           &phases[static_cast<std::size_t>(fab.pair_b[r])], 1, -1};
        Field es = oscillation(sum.u_values(step), lambda);
        Field ed = oscillation(diff.u_values(step), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                out.A[b][q] += lambda * ((es[q] * std::conj(fab.W_sum[r][b][q])).real() +
                                         (ed[q] * std::conj(fab.W_diff[r][b][q])).real());
        for (std::size_t q = 0; q < g.size(); ++q)
            out.Phi[q] += lambda * (fab.Psi_pp[r][q] * es[q] + fab.Psi_pm[r][q] * ed[q] +
                                    fab.Psi_mp[r][q] * std::conj(ed[q]));
    }
    return out;
}

FullFields assemble_full(const BgSlice& bg, const ErrorSlice& err, const FabSlice& fab,
                         const EllField& ell, const std::vector<Phase>& phases, int step,
                         double lambda) {
    FullFields out = assemble_error(err, fab, ell, phases, step, lambda);
    VecField A1 = first_order_A(bg, phases, step, lambda);
    Field Phi1 = first_order_Phi(bg, phases, step, lambda);
    for (int b = 0; b < out.A.components(); ++b) out.A[b] += A1[b];
    out.Phi += Phi1;
    return out;
}

} // namespace kgmo
