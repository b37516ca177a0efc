#include "kgmo/init_data.hpp"

#include <cmath>
#include <random>

namespace kgmo {

namespace {

inline double raise_sign(int b) { return b == 0 ? -1.0 : 1.0; }

BgSlice initial_slice(const BackgroundInitialData& bg) {
    BgSlice s;
    s.A = bg.a0;
    s.Adot = bg.a0dot;
    s.Phi = bg.phi0;
    s.Phidot = bg.phi0dot;
    s.Psi = bg.psi;
    s.W = bg.w;
    return s;
}

// periodic part of a phase at a step (u minus its linear klin.x part)
Field phase_periodic(const Phase& p, int step) {
    const Grid& g = p.grid();
    Field u = p.u_values(step);
    for (std::size_t q = 0; q < g.size(); ++q) {
        auto x = g.position(q);
        double lin = 0.0;
        for (int d = 0; d < g.dim(); ++d) lin += p.klin()[static_cast<std::size_t>(d)] * x[d];
        u[q] -= lin;
    }
    return u;
}

// One oscillatory summand Re(e^{i theta / lambda} coef) with a purely spatial phase.
struct OscPiece {
    Field theta;
    std::vector<Field> grad;
    Field lap;
    Field coef;
};

OscPiece make_piece(const Phase& p, const Field& coef) {
    const Grid& g = p.grid();
    OscPiece o;
    o.theta = p.u_values(0);
    VecField d = p.dcov(0);
    o.grad.resize(static_cast<std::size_t>(g.dim()));
    for (int i = 0; i < g.dim(); ++i) o.grad[static_cast<std::size_t>(i)] = d[i + 1];
    o.lap = spectral::laplacian(phase_periodic(p, 0));
    o.coef = coef;
    return o;
}

OscPiece make_piece_combined(const CombinedPhase& cp, const Field& coef) {
    const Grid& g = coef.grid();
    OscPiece o;
    o.theta = cp.u_values(0);
    VecField d = cp.dcov(0);
    o.grad.resize(static_cast<std::size_t>(g.dim()));
    for (int i = 0; i < g.dim(); ++i) o.grad[static_cast<std::size_t>(i)] = d[i + 1];
    Field per = phase_periodic(*cp.pa, 0);
    per *= cplx{static_cast<double>(cp.sa), 0.0};
    axpy(per, cplx{static_cast<double>(cp.sb), 0.0}, phase_periodic(*cp.pb, 0));
    o.lap = spectral::laplacian(per);
    o.coef = coef;
    return o;
}

Field piece_value(const OscPiece& o, double lambda) {
    Field e = oscillation(o.theta, lambda);
    Field r(o.coef.grid());
    for (std::size_t q = 0; q < r.size(); ++q) r[q] = (e[q] * o.coef[q]).real();
    return r;
}

// -lap applied analytically to Re(e^{i theta/lambda} coef)
Field piece_neg_laplacian(const OscPiece& o, double lambda) {
    const Grid& g = o.coef.grid();
    Field e = oscillation(o.theta, lambda);
    std::vector<Field> dc(static_cast<std::size_t>(g.dim()));
    for (int i = 0; i < g.dim(); ++i) dc[static_cast<std::size_t>(i)] = spectral::derivative(o.coef, i);
    Field lapc = spectral::laplacian(o.coef);
    const double il = 1.0 / lambda;
    Field r(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        double g2 = 0.0;
        cplx gdotdc{0.0, 0.0};
        for (int i = 0; i < g.dim(); ++i) {
            double gi = o.grad[static_cast<std::size_t>(i)][q].real();
            g2 += gi * gi;
            gdotdc += gi * dc[static_cast<std::size_t>(i)][q];
        }
        cplx inner = il * il * g2 * o.coef[q] -
                     cplx{0.0, il} * (2.0 * gdotdc + o.lap[q] * o.coef[q]) - lapc[q];
        r[q] = (e[q] * inner).real();
    }
    return r;
}

// (d_a W_A^a)|_{t=0} = Wdot^0 + div w^i
Field divergence_W0(const Grid& g, const BackgroundInitialData& bg, const BgFrame& fr, std::size_t a) {
    Field divw = fr.Wdot[a][0];
    for (int i = 0; i < g.dim(); ++i)
        divw += spectral::derivative(bg.w[a][static_cast<std::size_t>(i) + 1], i);
    return divw;
}

struct AnsatzFields {
    Field a10;
    Field phi1, phi1dot;
    Field defect; // -lap a1^0 - div a1dot^i + Im(phi1 conj(phi1dot)) + a1^0 |phi1|^2
};

AnsatzFields ansatz_constraint_fields(const BackgroundInitialData& bg, const std::vector<Phase>& phases,
                                      const BgFrame& fr, double lambda) {
    const Grid& g = bg.grid;
    const double rl = std::sqrt(lambda);
    AnsatzFields out;

    out.a10 = bg.a0[0];
    out.phi1 = bg.phi0;
    out.phi1dot = bg.phi0dot;

    Field smooth = spectral::laplacian(bg.a0[0]);
    smooth *= cplx{-1.0, 0.0};
    smooth -= spectral::spatial_divergence(bg.a0dot);
    out.defect = smooth;

    for (std::size_t a = 0; a < phases.size(); ++a) {
        const Phase& p = phases[a];
        Field e = oscillation(p.u_values(0), lambda);
        VecField du = p.dcov(0);

        for (std::size_t q = 0; q < g.size(); ++q) {
            out.a10[q] += rl * (e[q] * std::conj(bg.w[a][0][q])).real();
            out.phi1[q] += rl * e[q] * bg.psi[a][q];
            out.phi1dot[q] +=
                e[q] * (cplx{0.0, du[0][q].real() / rl} * bg.psi[a][q] + rl * fr.Psidot[a][q]);
        }

        // -lap of the oscillatory part of a1^0
        {
            Field c = conj(bg.w[a][0]);
            c *= cplx{rl, 0.0};
            out.defect += piece_neg_laplacian(make_piece(p, c), lambda);
        }
        // -div of the oscillatory part of a1dot^i: a1dot^i = Re(e g^i) with
        // g^i = i vdot conj(w^i)/sqrt(lambda) + sqrt(lambda) conj(wdot^i)
        {
            for (int i = 0; i < g.dim(); ++i) {
                Field gi(g);
                for (std::size_t q = 0; q < g.size(); ++q)
                    gi[q] = cplx{0.0, du[0][q].real() / rl} *
                                std::conj(bg.w[a][static_cast<std::size_t>(i) + 1][q]) +
                            rl * std::conj(fr.Wdot[a][static_cast<std::size_t>(i) + 1][q]);
                Field dgi = spectral::derivative(gi, i);
                for (std::size_t q = 0; q < g.size(); ++q) {
                    cplx inner = cplx{0.0, du[i + 1][q].real() / lambda} * gi[q] + dgi[q];
                    out.defect[q] -= (e[q] * inner).real();
                }
            }
        }
    }

    for (std::size_t q = 0; q < g.size(); ++q) {
        out.defect[q] += (out.phi1[q] * std::conj(out.phi1dot[q])).imag() +
                         out.a10[q].real() * std::norm(out.phi1[q]);
        out.defect[q] = cplx{out.defect[q].real(), 0.0};
    }
    return out;
}

// The closed-form inverted oscillatory pieces of z^0: single-phase lambda^{3/2} slots
// (the W-divergence and the zeta-mixed terms) over |grad v_A|^2, and the lambda^2 pair
// interaction slot over |grad(v_A - v_B)|^2. The transport and polarization identities
// collapse the lambda^{-3/2} and phi0-cross contributions, so only these survive.
std::vector<OscPiece> z0bis_pieces(const FreeErrorData& free, const BackgroundInitialData& bg,
                                   const std::vector<Phase>& phases, const InteractionTable& table,
                                   const BgFrame& fr, double eta_floor) {
    const Grid& g = bg.grid;
    const double lambda = free.lambda;
    const double l32 = lambda * std::sqrt(lambda);
    std::vector<OscPiece> pieces;

    for (std::size_t a = 0; a < phases.size(); ++a) {
        const Phase& p = phases[a];
        VecField du = p.dcov(0);
        Field divW = divergence_W0(g, bg, fr, a);
        Field coef(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            double g2 = 0.0;
            for (int i = 1; i <= g.dim(); ++i) g2 += std::norm(du[i][q]);
            if (g2 < eta_floor) throw SolverAbort("phase gradient denominator fell below the eta0 floor");
            double vd = du[0][q].real();
            coef[q] = l32 * vd *
                      (cplx{0.0, 1.0} * std::conj(divW[q]) + bg.psi[a][q] * std::conj(free.zeta[q])) / g2;
        }
        pieces.push_back(make_piece(p, coef));
    }

    BgSlice s0 = initial_slice(bg);
    InteractionTerms terms = interaction_terms(s0, phases, table, 0);
    for (const auto& pi : terms.pairs) {
        CombinedPhase diff{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)],
                           1, -1};
        VecField dd = diff.dcov(0);
        Field coef(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            double g2 = 0.0;
            for (int i = 1; i <= g.dim(); ++i) g2 += std::norm(dd[i][q]);
            if (g2 < eta_floor)
                throw SolverAbort("combined-phase denominator fell below the eta0 floor");
            // constraint source carries -(vdot_A + vdot_B) Re(e psi_A conj(psi_B)) = 2 Re(e (-k^0))
            coef[q] = free.lambda * free.lambda * 2.0 * (-pi.k_diff[0][q]) / g2;
        }
        pieces.push_back(make_piece_combined(diff, coef));
    }
    return pieces;
}

} // namespace

FreeErrorData make_free_error_data(const Grid& g, double lambda, double amplitude, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-0.5, 0.5);
    std::uniform_real_distribution<double> amp(0.6, 1.0);
    const double rl = std::sqrt(lambda);
    FreeErrorData f;
    f.lambda = lambda;
    auto mk = [&]() {
        return bump(g, {pos(rng), g.dim() > 1 ? pos(rng) : 0.0, 0.0}, 0.9, amplitude * amp(rng) * rl);
    };
    for (int i = 0; i < g.dim(); ++i) {
        f.z.push_back(mk());
        f.zdot.push_back(mk());
    }
    f.zeta = mk();
    axpy(f.zeta, cplx{0.0, 0.6}, mk());
    f.zetadot = mk();
    axpy(f.zetadot, cplx{0.0, 0.4}, mk());

    // spectral divergence cleaning: zdot <- zdot - grad(inv_lap div zdot)
    VecField v(g);
    for (int i = 0; i < g.dim(); ++i) v[i + 1] = f.zdot[static_cast<std::size_t>(i)];
    Field divv = spectral::spatial_divergence(v);
    Field pot = spectral::inv_neg_laplacian_meanzero(divv); // solves -lap pot = divv - mean
    for (int i = 0; i < g.dim(); ++i) {
        Field gp = spectral::derivative(pot, i);
        f.zdot[static_cast<std::size_t>(i)] += gp; // grad pot = -grad(lap^-1 divv)
    }
    return f;
}

double neutralize_free_error_data(FreeErrorData& free, const BackgroundInitialData& bg,
                                  const std::vector<Phase>& phases) {
    const Grid& g = bg.grid;
    BgFrame fr = background_frame(g, initial_slice(bg), phases, 0, false);
    AnsatzFields az = ansatz_constraint_fields(bg, phases, fr, free.lambda);
    double c = 0.0, denom = 0.0;
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx zeta = free.zeta[q];
        c += (az.phi1[q] * std::conj(free.zetadot[q])).imag() +
             (zeta * std::conj(az.phi1dot[q])).imag() + (zeta * std::conj(free.zetadot[q])).imag() +
             az.a10[q].real() * (2.0 * (zeta * std::conj(az.phi1[q])).real() + std::norm(zeta));
        denom += ((az.phi1[q] + zeta) * std::conj(az.phi1[q])).real();
    }
    c *= g.cell_volume();
    denom *= g.cell_volume();
    if (std::abs(denom) < 1e-12) {
        if (std::abs(c) > 1e-12) throw NeutralityError("cannot balance the error charge: phi1 vanishes");
        return 0.0;
    }
    double mu = c / denom;
    // Im((phi1 + zeta) conj(i mu phi1)) = -mu Re((phi1 + zeta) conj(phi1)) shifts the charge by -c
    for (std::size_t q = 0; q < g.size(); ++q) free.zetadot[q] += cplx{0.0, mu} * az.phi1[q];
    return mu;
}

Field gauge_time_derivative(const FreeErrorData& free, const BackgroundInitialData& bg,
                            const std::vector<Phase>& phases) {
    const Grid& g = bg.grid;
    BgFrame fr = background_frame(g, initial_slice(bg), phases, 0, false);
    VecField zv(g);
    for (int i = 0; i < g.dim(); ++i) zv[i + 1] = free.z[static_cast<std::size_t>(i)];
    Field zdot0 = spectral::spatial_divergence(zv);
    zdot0 *= cplx{-1.0, 0.0};
    const double rl = std::sqrt(free.lambda);
    for (std::size_t a = 0; a < phases.size(); ++a) {
        Field divW = divergence_W0(g, bg, fr, a);
        Field e = oscillation(phases[a].u_values(0), free.lambda);
        for (std::size_t q = 0; q < g.size(); ++q)
            zdot0[q] -= rl * (e[q] * std::conj(divW[q])).real();
    }
    return zdot0;
}

Field build_z0bis(const FreeErrorData& free, const BackgroundInitialData& bg,
                  const std::vector<Phase>& phases, const InteractionTable& table, double eta_floor) {
    BgFrame fr = background_frame(bg.grid, initial_slice(bg), phases, 0, false);
    Field out(bg.grid);
    for (const auto& piece : z0bis_pieces(free, bg, phases, table, fr, eta_floor))
        out += piece_value(piece, free.lambda);
    return out;
}

ConstrainedErrorData assemble_error_initial(const FreeErrorData& free, const BackgroundInitialData& bg,
                                            const std::vector<Phase>& phases,
                                            const InteractionTable& table, double tol) {
    const Grid& g = bg.grid;
    const double lambda = free.lambda;
    BgFrame fr = background_frame(g, initial_slice(bg), phases, 0, false);

    ConstrainedErrorData out;
    out.lambda = lambda;
    out.zeta = free.zeta;
    out.zetadot = free.zetadot;
    out.z = VecField(g);
    out.zdot = VecField(g);
    for (int i = 0; i < g.dim(); ++i) {
        out.z[i + 1] = free.z[static_cast<std::size_t>(i)];
        out.zdot[i + 1] = free.zdot[static_cast<std::size_t>(i)];
    }
    out.zdot[0] = gauge_time_derivative(free, bg, phases);

    AnsatzFields az = ansatz_constraint_fields(bg, phases, fr, lambda);

    Field gcoef(g);
    for (std::size_t q = 0; q < g.size(); ++q) gcoef[q] = std::norm(az.phi1[q] + free.zeta[q]);
    VecField zdv(g);
    for (int i = 0; i < g.dim(); ++i) zdv[i + 1] = free.zdot[static_cast<std::size_t>(i)];
    Field h = spectral::spatial_divergence(zdv);
    h -= az.defect;
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx zeta = free.zeta[q];
        h[q] -= (az.phi1[q] * std::conj(free.zetadot[q])).imag() +
                (zeta * std::conj(az.phi1dot[q])).imag() + (zeta * std::conj(free.zetadot[q])).imag() +
                az.a10[q].real() * (2.0 * (zeta * std::conj(az.phi1[q])).real() + std::norm(zeta));
        h[q] = cplx{h[q].real(), 0.0};
    }

    double e0 = eta0(phases, table, 0.0);
    auto pieces = z0bis_pieces(free, bg, phases, table, fr, e0 / 2.0);
    Field z0bis(g), op_z0bis(g);
    for (const auto& piece : pieces) {
        z0bis += piece_value(piece, lambda);
        op_z0bis += piece_neg_laplacian(piece, lambda);
    }
    for (std::size_t q = 0; q < g.size(); ++q) op_z0bis[q] += gcoef[q].real() * z0bis[q];

    Field h_eff = h;
    h_eff -= op_z0bis;
    auto solved = solve_perturbed_laplacian(gcoef, h_eff, tol);
    out.z[0] = z0bis;
    out.z[0] += solved.f;

    {
        Field lap_ter = spectral::laplacian(solved.f);
        Field res = op_z0bis;
        for (std::size_t q = 0; q < g.size(); ++q)
            res[q] += -lap_ter[q] + gcoef[q].real() * solved.f[q] - h[q];
        out.constraint_residual = spectral::l2_norm(res) / std::max(spectral::l2_norm(h), 1e-300);

        Field lz = out.zdot[0];
        VecField zsp(g);
        for (int i = 0; i < g.dim(); ++i) zsp[i + 1] = out.z[i + 1];
        lz += spectral::spatial_divergence(zsp);
        const double rl = std::sqrt(lambda);
        for (std::size_t a = 0; a < phases.size(); ++a) {
            Field divW = divergence_W0(g, bg, fr, a);
            Field e = oscillation(phases[a].u_values(0), lambda);
            for (std::size_t q = 0; q < g.size(); ++q)
                lz[q] += rl * (e[q] * std::conj(divW[q])).real();
        }
        out.gauge_residual = spectral::l2_norm(lz);
    }

    {
        SmallnessLedger& led = out.smallness;
        for (int k = 0; k <= 1; ++k) {
            double lk = std::pow(lambda, k);
            led.free_bundle += lk * (spectral::sobolev_norm(free.zeta, k + 1.0) +
                                     spectral::sobolev_norm(free.zetadot, static_cast<double>(k)));
            for (int i = 0; i < g.dim(); ++i)
                led.free_bundle +=
                    lk * (spectral::sobolev_norm(free.z[static_cast<std::size_t>(i)], k + 1.0) +
                          spectral::sobolev_norm(free.zdot[static_cast<std::size_t>(i)], static_cast<double>(k)));
            led.z0_bundle += lk * (spectral::sobolev_norm(out.z[0], k + 1.0) +
                                   spectral::sobolev_norm(out.zdot[0], static_cast<double>(k)));
        }
        led.div_zdot = spectral::l2_norm(spectral::spatial_divergence(zdv));
    }
    return out;
}

EllWithRate e_ell_with_rate(const BgSlice& s, const BgFrame& fr, const std::vector<Phase>& phases,
                            const InteractionTable& table, int step, double lambda, double eta_floor) {
    const Grid& g = s.Phi.grid();
    EllWithRate out;
    out.value.A = VecField(g);
    out.value.Phi = Field(g);
    out.rate.A = VecField(g);
    out.rate.Phi = Field(g);
    const double l2 = lambda * lambda;

    for (const auto& pr : table.pairs) {
        if (pr.cls != PairClass::Separated) continue;
        std::size_t ia = static_cast<std::size_t>(pr.a), ib = static_cast<std::size_t>(pr.b);
        VecField dua = phases[ia].dcov(step), dub = phases[ib].dcov(step);
        VecField dua_t = phases[ia].dcov_dt(step), dub_t = phases[ib].dcov_dt(step);

        auto wdu = [&](const VecField& w, const VecField& du) {
            Field r(g);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx t = w[0][q] * du[0][q].real();
                for (int i = 1; i <= g.dim(); ++i) t += w[i][q] * du[i][q].real();
                r[q] = t;
            }
            return r;
        };
        Field wadub = wdu(s.W[ia], dub), wbdua = wdu(s.W[ib], dua);
        Field wadub_t(g), wbdua_t(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx t1 = fr.Wdot[ia][0][q] * dub[0][q].real() + s.W[ia][0][q] * dub_t[0][q].real();
            cplx t2 = fr.Wdot[ib][0][q] * dua[0][q].real() + s.W[ib][0][q] * dua_t[0][q].real();
            for (int i = 1; i <= g.dim(); ++i) {
                t1 += fr.Wdot[ia][i][q] * dub[i][q].real() + s.W[ia][i][q] * dub_t[i][q].real();
                t2 += fr.Wdot[ib][i][q] * dua[i][q].real() + s.W[ib][i][q] * dua_t[i][q].real();
            }
            wadub_t[q] = t1;
            wbdua_t[q] = t2;
        }

        Field c_pp(g), c_pm(g), c_mp(g), c_pp_t(g), c_pm_t(g), c_mp_t(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            c_pp[q] = -(std::conj(wadub[q]) * s.Psi[ib][q] + std::conj(wbdua[q]) * s.Psi[ia][q]);
            c_pm[q] = -wbdua[q] * s.Psi[ia][q];
            c_mp[q] = -wadub[q] * s.Psi[ib][q];
            c_pp_t[q] = -(std::conj(wadub_t[q]) * s.Psi[ib][q] + std::conj(wadub[q]) * fr.Psidot[ib][q] +
                          std::conj(wbdua_t[q]) * s.Psi[ia][q] + std::conj(wbdua[q]) * fr.Psidot[ia][q]);
            c_pm_t[q] = -(wbdua_t[q] * s.Psi[ia][q] + wbdua[q] * fr.Psidot[ia][q]);
            c_mp_t[q] = -(wadub_t[q] * s.Psi[ib][q] + wadub[q] * fr.Psidot[ib][q]);
        }
        VecField kd(g), kd_t(g);
        for (int b = 0; b <= g.dim(); ++b) {
            double sgn = raise_sign(b);
            for (std::size_t q = 0; q < g.size(); ++q) {
                double dsum = sgn * (dua[b][q].real() + dub[b][q].real());
                double dsum_t = sgn * (dua_t[b][q].real() + dub_t[b][q].real());
                cplx pp = s.Psi[ia][q] * std::conj(s.Psi[ib][q]);
                cplx pp_t = fr.Psidot[ia][q] * std::conj(s.Psi[ib][q]) +
                            s.Psi[ia][q] * std::conj(fr.Psidot[ib][q]);
                kd[b][q] = -0.5 * dsum * pp;
                kd_t[b][q] = -0.5 * (dsum_t * pp + dsum * pp_t);
            }
        }

        for (int sb : {+1, -1}) {
            CombinedPhase cp{&phases[ia], &phases[ib], 1, sb};
            VecField dth = cp.dcov(step);
            VecField dth_t(g);
            for (int c = 0; c <= g.dim(); ++c) {
                dth_t[c] = dua_t[c];
                axpy(dth_t[c], cplx{static_cast<double>(sb), 0.0}, dub_t[c]);
            }
            Field den = minkowski_dot(dth, dth);
            Field den_t(g);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx t = -2.0 * dth[0][q] * dth_t[0][q];
                for (int i = 1; i <= g.dim(); ++i) t += 2.0 * dth[i][q] * dth_t[i][q];
                den_t[q] = t;
            }
            for (std::size_t q = 0; q < g.size(); ++q)
                if (std::abs(den[q].real()) < eta_floor)
                    throw SolverAbort("separated-pair denominator fell below the eta0 floor");
            Field e = oscillation(cp.u_values(step), lambda);
            Field thdot = dth[0];

            auto add_kg = [&](const Field& c, const Field& cdot, int conj_sign) {
                for (std::size_t q = 0; q < g.size(); ++q) {
                    double dn = den[q].real();
                    cplx F = l2 * c[q] / dn;
                    cplx Fdot = l2 * (cdot[q] * dn - c[q] * den_t[q].real()) / (dn * dn);
                    cplx ph = (conj_sign > 0) ? e[q] : std::conj(e[q]);
                    double th_t = ((conj_sign > 0) ? 1.0 : -1.0) * thdot[q].real();
                    out.value.Phi[q] += ph * F;
                    out.rate.Phi[q] += ph * (cplx{0.0, th_t / lambda} * F + Fdot);
                }
            };
            if (sb == +1) {
                add_kg(c_pp, c_pp_t, +1);
            } else {
                add_kg(c_pm, c_pm_t, +1);
                add_kg(c_mp, c_mp_t, -1);
                for (int b = 0; b <= g.dim(); ++b) {
                    for (std::size_t q = 0; q < g.size(); ++q) {
                        double dn = den[q].real();
                        cplx F = l2 * kd[b][q] / dn;
                        cplx Fdot = l2 * (kd_t[b][q] * dn - kd[b][q] * den_t[q].real()) / (dn * dn);
                        out.value.A[b][q] += 2.0 * (e[q] * F).real();
                        out.rate.A[b][q] +=
                            2.0 * (e[q] * (cplx{0.0, thdot[q].real() / lambda} * F + Fdot)).real();
                    }
                }
            }
        }
    }
    return out;
}

ErrorParameterInit split_parameters(const ConstrainedErrorData& data, const BackgroundInitialData& bg,
                                    const std::vector<Phase>& phases, const InteractionTable& table,
                                    double kappa) {
    const Grid& g = bg.grid;
    const double lambda = data.lambda;
    const double rl = std::sqrt(lambda);
    std::size_t np = phases.size();
    BgSlice s0 = initial_slice(bg);
    BgFrame fr = background_frame(g, s0, phases, 0, false);

    ErrorParameterInit out;
    out.lambda = lambda;
    out.kappa = kappa;
    out.wplus.assign(np, VecField(g));
    out.psiplus.assign(np, Field(g));
    out.dtWplus.assign(np, VecField(g));
    out.dtPsiplus.assign(np, Field(g));
    out.gW.assign(np, VecField(g));
    out.gPsi.assign(np, Field(g));

    double e0 = eta0(phases, table, 0.0);
    EllWithRate ell = e_ell_with_rate(s0, fr, phases, table, 0, lambda, e0 / 2.0);
    out.eell = ell.value.A;
    out.eelldot = ell.rate.A;
    out.epsell = ell.value.Phi;
    out.epselldot = ell.rate.Phi;

    out.eevo = data.z;
    for (int b = 0; b <= g.dim(); ++b) out.eevo[b] -= out.eell[b];
    out.epsevo = data.zeta;
    out.epsevo -= out.epsell;

    for (std::size_t a = 0; a < np; ++a) {
        VecField du = phases[a].dcov(0);
        for (std::size_t q = 0; q < g.size(); ++q) {
            double d0u = -du[0][q].real();
            for (int b = 0; b <= g.dim(); ++b) {
                double dbu = raise_sign(b) * du[b][q].real();
                out.dtWplus[a][b][q] =
                    cplx{0.0, dbu / rl} * std::conj(bg.psi[a][q]) * out.epsevo[q] / (2.0 * d0u);
            }
            cplx edv = out.eevo[0][q] * du[0][q].real();
            for (int i = 1; i <= g.dim(); ++i) edv += out.eevo[i][q] * du[i][q].real();
            out.dtPsiplus[a][q] = cplx{0.0, -2.0 / rl} * edv * bg.psi[a][q] / (2.0 * d0u);
        }
    }

    InteractionTerms terms = interaction_terms(s0, phases, table, 0);
    struct FabRate {
        int a, b;
        VecField dtW_diff;
        Field dtPsi_pp, dtPsi_pm, dtPsi_mp;
    };
    std::vector<FabRate> fabrates;
    for (const auto& pi : terms.pairs) {
        if (pi.cls != PairClass::Resonant) continue;
        FabRate fb;
        fb.a = pi.a;
        fb.b = pi.b;
        CombinedPhase sum{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, 1};
        CombinedPhase diff{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, -1};
        VecField ds = sum.dcov(0), dd = diff.dcov(0);
        fb.dtW_diff = VecField(g);
        fb.dtPsi_pp = Field(g);
        fb.dtPsi_pm = Field(g);
        fb.dtPsi_mp = Field(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            double d0s = -ds[0][q].real();
            double d0d = -dd[0][q].real();
            // transported amplitudes absorb the interaction part of the error equation:
            // L_theta Psi = i c - ..., L_theta W = -2i conj(k) + ... from zero data
            for (int b = 0; b <= g.dim(); ++b)
                fb.dtW_diff[b][q] = cplx{0.0, -1.0} * std::conj(pi.k_diff[b][q]) / d0d;
            fb.dtPsi_pp[q] = cplx{0.0, 1.0} * pi.c_pp[q] / (2.0 * d0s);
            fb.dtPsi_pm[q] = cplx{0.0, 1.0} * pi.c_pm[q] / (2.0 * d0d);
            fb.dtPsi_mp[q] = cplx{0.0, -1.0} * pi.c_mp[q] / (2.0 * d0d);
        }
        fabrates.push_back(std::move(fb));
    }

    out.eevodot = data.zdot;
    for (int b = 0; b <= g.dim(); ++b) out.eevodot[b] -= out.eelldot[b];
    out.epsevodot = data.zetadot;
    out.epsevodot -= out.epselldot;
    for (std::size_t a = 0; a < np; ++a) {
        Field e = oscillation(phases[a].u_values(0), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                out.eevodot[b][q] -= lambda * (e[q] * std::conj(out.dtWplus[a][b][q])).real();
        for (std::size_t q = 0; q < g.size(); ++q)
            out.epsevodot[q] -= lambda * e[q] * out.dtPsiplus[a][q];
    }
    for (const auto& fb : fabrates) {
        CombinedPhase sum{&phases[static_cast<std::size_t>(fb.a)], &phases[static_cast<std::size_t>(fb.b)], 1, 1};
        CombinedPhase diff{&phases[static_cast<std::size_t>(fb.a)], &phases[static_cast<std::size_t>(fb.b)], 1, -1};
        Field es = oscillation(sum.u_values(0), lambda);
        Field ed = oscillation(diff.u_values(0), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                out.eevodot[b][q] -= lambda * (ed[q] * std::conj(fb.dtW_diff[b][q])).real();
        for (std::size_t q = 0; q < g.size(); ++q)
            out.epsevodot[q] -= lambda * (fb.dtPsi_pp[q] * es[q] + fb.dtPsi_pm[q] * ed[q] +
                                          fb.dtPsi_mp[q] * std::conj(ed[q]));
    }

    for (std::size_t a = 0; a < np; ++a) {
        VecField du = phases[a].dcov(0);
        Field bxu = phases[a].box_u(0);
        VecField du_t = phases[a].dcov_dt(0);

        for (int b = 0; b <= g.dim(); ++b) {
            Field dtrhs(g);
            Field prod(g);
            for (std::size_t q = 0; q < g.size(); ++q)
                prod[q] = std::conj(out.dtPsiplus[a][q]) * out.epsevo[q];
            Field proj = spectral::project_low(prod, lambda, kappa);
            for (std::size_t q = 0; q < g.size(); ++q) {
                double dbu = raise_sign(b) * du[b][q].real();
                double dbu_t = raise_sign(b) * du_t[b][q].real();
                cplx t1 = cplx{0.0, dbu} * std::conj(out.dtPsiplus[a][q]) * bg.phi0[q];
                cplx t2 = cplx{0.0, dbu_t / rl} * std::conj(bg.psi[a][q]) * out.epsevo[q];
                cplx t3 = cplx{0.0, dbu / rl} * (std::conj(fr.Psidot[a][q]) * out.epsevo[q] +
                                                 std::conj(bg.psi[a][q]) * out.epsevodot[q]);
                cplx t4 = cplx{0.0, dbu} * proj[q];
                dtrhs[q] = t1 + t2 + t3 + t4;
            }
            Field d2(g);
            std::vector<Field> grad_dtW(static_cast<std::size_t>(g.dim()));
            for (int i = 0; i < g.dim(); ++i)
                grad_dtW[static_cast<std::size_t>(i)] = spectral::derivative(out.dtWplus[a][b], i);
            for (std::size_t q = 0; q < g.size(); ++q) {
                double d0u = -du[0][q].real();
                double d0u_t = -du_t[0][q].real();
                cplx adv{0.0, 0.0};
                for (int i = 0; i < g.dim(); ++i)
                    adv += du[i + 1][q].real() * grad_dtW[static_cast<std::size_t>(i)][q];
                d2[q] = (dtrhs[q] - 2.0 * d0u_t * out.dtWplus[a][b][q] - 2.0 * adv -
                         bxu[q] * out.dtWplus[a][b][q]) /
                        (2.0 * d0u);
            }
            out.gW[a][b] = d2;
            out.gW[a][b] *= cplx{-1.0, 0.0};
        }
        {
            Field dtrhs(g);
            Field prod(g);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx edv = out.eevo[0][q] * du[0][q].real();
                for (int i = 1; i <= g.dim(); ++i) edv += out.eevo[i][q] * du[i][q].real();
                prod[q] = edv * out.dtPsiplus[a][q];
            }
            Field proj = spectral::project_low(prod, lambda, kappa);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx adv0 = s0.A[0][q] * du[0][q].real();
                cplx edv_t = out.eevodot[0][q] * du[0][q].real() + out.eevo[0][q] * du_t[0][q].real();
                cplx edv = out.eevo[0][q] * du[0][q].real();
                for (int i = 1; i <= g.dim(); ++i) {
                    adv0 += s0.A[i][q] * du[i][q].real();
                    edv_t += out.eevodot[i][q] * du[i][q].real() + out.eevo[i][q] * du_t[i][q].real();
                    edv += out.eevo[i][q] * du[i][q].real();
                }
                cplx t1 = cplx{0.0, -2.0} * adv0 * out.dtPsiplus[a][q];
                cplx t2 = cplx{0.0, -2.0 / rl} * edv_t * bg.psi[a][q];
                cplx t3 = cplx{0.0, -2.0 / rl} * edv * fr.Psidot[a][q];
                dtrhs[q] = t1 + t2 + t3 + cplx{0.0, -2.0} * proj[q];
            }
            Field d2(g);
            std::vector<Field> grad_dtP(static_cast<std::size_t>(g.dim()));
            for (int i = 0; i < g.dim(); ++i)
                grad_dtP[static_cast<std::size_t>(i)] = spectral::derivative(out.dtPsiplus[a], i);
            for (std::size_t q = 0; q < g.size(); ++q) {
                double d0u = -du[0][q].real();
                double d0u_t = -du_t[0][q].real();
                cplx adv{0.0, 0.0};
                for (int i = 0; i < g.dim(); ++i)
                    adv += du[i + 1][q].real() * grad_dtP[static_cast<std::size_t>(i)][q];
                d2[q] = (dtrhs[q] - 2.0 * d0u_t * out.dtPsiplus[a][q] - 2.0 * adv -
                         bxu[q] * out.dtPsiplus[a][q]) /
                        (2.0 * d0u);
            }
            out.gPsi[a] = d2;
            out.gPsi[a] *= cplx{-1.0, 0.0};
        }
    }

    // reassembly defect of the parametrix identity
    {
        double worst = 0.0;
        VecField z_re = out.eevo;
        for (int b = 0; b <= g.dim(); ++b) z_re[b] += out.eell[b];
        Field zeta_re = out.epsevo;
        zeta_re += out.epsell;
        for (int b = 0; b <= g.dim(); ++b) {
            Field diffb = z_re[b] - data.z[b];
            worst = std::max(worst, max_abs(diffb));
        }
        Field diffz = zeta_re - data.zeta;
        worst = std::max(worst, max_abs(diffz));

        VecField zdot_re = out.eevodot;
        for (int b = 0; b <= g.dim(); ++b) zdot_re[b] += out.eelldot[b];
        Field zetadot_re = out.epsevodot;
        zetadot_re += out.epselldot;
        for (std::size_t a = 0; a < np; ++a) {
            Field e = oscillation(phases[a].u_values(0), lambda);
            for (int b = 0; b <= g.dim(); ++b)
                for (std::size_t q = 0; q < g.size(); ++q)
                    zdot_re[b][q] += lambda * (e[q] * std::conj(out.dtWplus[a][b][q])).real();
            for (std::size_t q = 0; q < g.size(); ++q)
                zetadot_re[q] += lambda * e[q] * out.dtPsiplus[a][q];
        }
        for (const auto& fb : fabrates) {
            CombinedPhase sum{&phases[static_cast<std::size_t>(fb.a)], &phases[static_cast<std::size_t>(fb.b)], 1, 1};
            CombinedPhase diff{&phases[static_cast<std::size_t>(fb.a)], &phases[static_cast<std::size_t>(fb.b)], 1, -1};
            Field es = oscillation(sum.u_values(0), lambda);
            Field ed = oscillation(diff.u_values(0), lambda);
            for (int b = 0; b <= g.dim(); ++b)
                for (std::size_t q = 0; q < g.size(); ++q)
                    zdot_re[b][q] += lambda * (ed[q] * std::conj(fb.dtW_diff[b][q])).real();
            for (std::size_t q = 0; q < g.size(); ++q)
                zetadot_re[q] += lambda * (fb.dtPsi_pp[q] * es[q] + fb.dtPsi_pm[q] * ed[q] +
                                           fb.dtPsi_mp[q] * std::conj(ed[q]));
        }
        for (int b = 0; b <= g.dim(); ++b) {
            Field diffb = zdot_re[b] - data.zdot[b];
            worst = std::max(worst, max_abs(diffb));
        }
        Field diffzd = zetadot_re - data.zetadot;
        worst = std::max(worst, max_abs(diffzd));
        out.reassembly_error = worst;
    }

    // required-smallness ledger
    {
        SmallnessLedger& led = out.smallness;
        led = data.smallness;
        for (int k = 0; k <= 1; ++k) {
            double lk = std::pow(lambda, k);
            led.evo_bundle += lk * (spectral::sobolev_norm(out.epsevo, k + 1.0) +
                                    spectral::sobolev_norm(out.epsevodot, static_cast<double>(k)));
            for (int b = 0; b <= g.dim(); ++b)
                led.evo_bundle += lk * (spectral::sobolev_norm(out.eevo[b], k + 1.0) +
                                        spectral::sobolev_norm(out.eevodot[b], static_cast<double>(k)));
            double fp = 0.0;
            for (std::size_t a = 0; a < np; ++a) {
                double fa = spectral::sobolev_norm(out.psiplus[a], k + 1.0) +
                            spectral::sobolev_norm(out.gPsi[a], static_cast<double>(k));
                for (int b = 0; b <= g.dim(); ++b)
                    fa += spectral::sobolev_norm(out.wplus[a][b], k + 1.0) +
                          spectral::sobolev_norm(out.gW[a][b], static_cast<double>(k));
                fp = std::max(fp, fa);
            }
            led.fplus_bundle += lk * fp;
        }
        for (int k = 0; k <= 2; ++k) {
            double lk = std::pow(lambda, k);
            led.ell_bundle += lk * spectral::sobolev_norm(out.epsell, static_cast<double>(k));
            for (int b = 0; b <= g.dim(); ++b)
                led.ell_bundle += lk * spectral::sobolev_norm(out.eell[b], static_cast<double>(k));
        }
        for (int k = 0; k <= 1; ++k) {
            double lk1 = std::pow(lambda, k + 1);
            led.ell_bundle += lk1 * spectral::sobolev_norm(out.epselldot, static_cast<double>(k));
            for (int b = 0; b <= g.dim(); ++b)
                led.ell_bundle += lk1 * spectral::sobolev_norm(out.eelldot[b], static_cast<double>(k));
        }
    }
    return out;
}

} // namespace kgmo
