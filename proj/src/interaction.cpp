#include "kgmo/interaction.hpp"

namespace kgmo {

namespace {

// contravariant d^b u from the stored covariant gradient
inline double raise_sign(int b) { return b == 0 ? -1.0 : 1.0; }

// W^alpha d_alpha u (contravariant amplitude against covariant phase gradient)
Field contract_w_du(const VecField& w, const VecField& du) {
    Field r(w.grid());
    for (std::size_t q = 0; q < r.size(); ++q) {
        cplx s = w[0][q] * du[0][q].real();
        for (int i = 1; i < w.components(); ++i) s += w[i][q] * du[i][q].real();
        r[q] = s;
    }
    return r;
}

} // namespace

InteractionTerms interaction_terms(const BgSlice& s, const std::vector<Phase>& phases,
                                   const InteractionTable& table, int step) {
    if (!table.coherent()) throw ConfigError("interaction terms require a coherent phase set");
    InteractionTerms out;
    out.step = step;
    const Grid& g = phases.front().grid();
    for (const auto& pr : table.pairs) {
        PairInteraction pi;
        pi.a = pr.a;
        pi.b = pr.b;
        pi.cls = pr.cls;
        const Field& psa = s.Psi[static_cast<std::size_t>(pr.a)];
        const Field& psb = s.Psi[static_cast<std::size_t>(pr.b)];
        VecField dua = phases[static_cast<std::size_t>(pr.a)].dcov(step);
        VecField dub = phases[static_cast<std::size_t>(pr.b)].dcov(step);

        // Maxwell: k_diff^b = -(1/2)(d^b u_A + d^b u_B) Psi_A conj(Psi_B)
        pi.k_diff = VecField(g);
        for (int b = 0; b <= g.dim(); ++b) {
            double sgn = raise_sign(b);
            for (std::size_t q = 0; q < g.size(); ++q) {
                double dsum = sgn * (dua[b][q].real() + dub[b][q].real());
                pi.k_diff[b][q] = -0.5 * dsum * psa[q] * std::conj(psb[q]);
            }
        }

        // Klein-Gordon coefficients
        Field wadub = contract_w_du(s.W[static_cast<std::size_t>(pr.a)], dub); // W_A . du_B
        Field wbdua = contract_w_du(s.W[static_cast<std::size_t>(pr.b)], dua); // W_B . du_A
        pi.c_pp = Field(g);
        pi.c_pm = Field(g);
        pi.c_mp = Field(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            pi.c_pp[q] = -(std::conj(wadub[q]) * psb[q] + std::conj(wbdua[q]) * psa[q]);
            pi.c_pm[q] = -wbdua[q] * psa[q];
            pi.c_mp[q] = -wadub[q] * psb[q];
        }
        out.pairs.push_back(std::move(pi));
    }
    return out;
}

VecField reconstruct_xi_maxwell(const InteractionTerms& t, const std::vector<Phase>& phases,
                                double lambda, PairFilter which) {
    const Grid& g = phases.front().grid();
    VecField xi(g);
    for (const auto& pi : t.pairs) {
        if (which == PairFilter::Resonant && pi.cls != PairClass::Resonant) continue;
        if (which == PairFilter::Separated && pi.cls != PairClass::Separated) continue;
        CombinedPhase diff{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, -1};
        Field e = oscillation(diff.u_values(t.step), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                xi[b][q] += 2.0 * (pi.k_diff[b][q] * e[q]).real();
    }
    return xi;
}

Field reconstruct_xi_kg(const InteractionTerms& t, const std::vector<Phase>& phases, double lambda,
                        PairFilter which) {
    const Grid& g = phases.front().grid();
    Field xi(g);
    for (const auto& pi : t.pairs) {
        if (which == PairFilter::Resonant && pi.cls != PairClass::Resonant) continue;
        if (which == PairFilter::Separated && pi.cls != PairClass::Separated) continue;
        CombinedPhase sum{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, 1};
        CombinedPhase diff{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, -1};
        Field es = oscillation(sum.u_values(t.step), lambda);
        Field ed = oscillation(diff.u_values(t.step), lambda);
        for (std::size_t q = 0; q < g.size(); ++q)
            xi[q] += pi.c_pp[q] * es[q] + pi.c_pm[q] * ed[q] + pi.c_mp[q] * std::conj(ed[q]);
    }
    return xi;
}

EllField build_E_ell(const InteractionTerms& t, const std::vector<Phase>& phases, int step,
                     double lambda, double eta_floor) {
    const Grid& g = phases.front().grid();
    EllField out;
    out.A = VecField(g);
    out.Phi = Field(g);
    const double l2 = lambda * lambda;
    for (const auto& pi : t.pairs) {
        if (pi.cls != PairClass::Separated) continue;
        CombinedPhase sum{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, 1};
        CombinedPhase diff{&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, -1};
        Field den_s = minkowski_dot(sum.dcov(step), sum.dcov(step));
        Field den_d = minkowski_dot(diff.dcov(step), diff.dcov(step));
        for (std::size_t q = 0; q < g.size(); ++q) {
            if (std::abs(den_s[q].real()) < eta_floor || std::abs(den_d[q].real()) < eta_floor)
                throw SolverAbort("separated-pair denominator fell below the eta0 floor");
        }
        Field es = oscillation(sum.u_values(step), lambda);
        Field ed = oscillation(diff.u_values(step), lambda);
        for (int b = 0; b <= g.dim(); ++b)
            for (std::size_t q = 0; q < g.size(); ++q)
                out.A[b][q] += l2 * 2.0 * (pi.k_diff[b][q] * ed[q]).real() / den_d[q].real();
        for (std::size_t q = 0; q < g.size(); ++q) {
            out.Phi[q] += l2 * (pi.c_pp[q] * es[q] / den_s[q].real() +
                                pi.c_pm[q] * ed[q] / den_d[q].real() +
                                pi.c_mp[q] * std::conj(ed[q]) / den_d[q].real());
        }
    }
    return out;
}

EllField e_ell_defect(const BgSlice& sm, const BgSlice& s0, const BgSlice& sp,
                      const std::vector<Phase>& phases, const InteractionTable& table, int step,
                      double lambda, double eta_floor) {
    const Grid& g = phases.front().grid();
    InteractionTerms tm = interaction_terms(sm, phases, table, step - 1);
    InteractionTerms t0 = interaction_terms(s0, phases, table, step);
    InteractionTerms tp = interaction_terms(sp, phases, table, step + 1);

    EllField defect;
    defect.A = VecField(g);
    defect.Phi = Field(g);
    const double l2 = lambda * lambda;

    for (std::size_t ip = 0; ip < t0.pairs.size(); ++ip) {
        const auto& pi = t0.pairs[ip];
        if (pi.cls != PairClass::Separated) continue;
        CombinedPhase combos[2] = {
            {&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, 1},
            {&phases[static_cast<std::size_t>(pi.a)], &phases[static_cast<std::size_t>(pi.b)], 1, -1}};
        for (int ci = 0; ci < 2; ++ci) {
            const CombinedPhase& cp = combos[ci];
            Field u0 = cp.u_values(step);
            VecField du = cp.dcov(step);
            Field bx = cp.box_u(step);
            Field den_m = minkowski_dot(cp.dcov(step - 1), cp.dcov(step - 1));
            Field den_0 = minkowski_dot(du, du);
            Field den_p = minkowski_dot(cp.dcov(step + 1), cp.dcov(step + 1));
            for (std::size_t q = 0; q < g.size(); ++q)
                if (std::abs(den_0[q].real()) < eta_floor)
                    throw SolverAbort("separated-pair denominator fell below the eta0 floor");

            // Maxwell slot lives on the difference combo only: box(Re(z)) = Re(box z)
            if (ci == 1) {
                for (int b = 0; b <= g.dim(); ++b) {
                    auto coef = [&](const InteractionTerms& tt, const Field& den) {
                        Field f(g);
                        for (std::size_t q = 0; q < g.size(); ++q)
                            f[q] = l2 * tt.pairs[ip].k_diff[b][q] / den[q].real();
                        return f;
                    };
                    FieldHistory F{coef(tm, den_m), coef(t0, den_0), coef(tp, den_p)};
                    Field box = oscillatory_dalembert(F, u0, du, bx, lambda);
                    Field e = oscillation(u0, lambda);
                    for (std::size_t q = 0; q < g.size(); ++q)
                        defect.A[b][q] += 2.0 * box[q].real() + 2.0 * (pi.k_diff[b][q] * e[q]).real();
                }
            }
            // KG slot: sum combo carries c_pp; diff combo carries c_pm (e^{+i}) and c_mp (e^{-i})
            auto add_kg = [&](const Field PairInteraction::* member, int conj_sign) {
                auto coef = [&](const InteractionTerms& tt, const Field& den) {
                    Field f(g);
                    for (std::size_t q = 0; q < g.size(); ++q)
                        f[q] = l2 * (tt.pairs[ip].*member)[q] / den[q].real();
                    return f;
                };
                Field u_use = u0;
                VecField du_use = du;
                Field bx_use = bx;
                if (conj_sign < 0) {
                    for (std::size_t q = 0; q < g.size(); ++q) u_use[q] = -u_use[q];
                    for (int b = 0; b <= g.dim(); ++b) du_use[b] *= cplx{-1.0, 0.0};
                    bx_use *= cplx{-1.0, 0.0};
                }
                FieldHistory F{coef(tm, den_m), coef(t0, den_0), coef(tp, den_p)};
                Field box = oscillatory_dalembert(F, u_use, du_use, bx_use, lambda);
                Field e = oscillation(u_use, lambda);
                for (std::size_t q = 0; q < g.size(); ++q)
                    defect.Phi[q] += box[q] + (pi.*member)[q] * e[q];
            };
            if (ci == 0) {
                add_kg(&PairInteraction::c_pp, +1);
            } else {
                add_kg(&PairInteraction::c_pm, +1);
                add_kg(&PairInteraction::c_mp, -1);
            }
        }
    }
    return defect;
}

} // namespace kgmo
