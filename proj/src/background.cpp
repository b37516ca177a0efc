#include "kgmo/background.hpp"

#include <cmath>
#include <sstream>

namespace kgmo {

namespace {

// -Im(Phi conj(d^b Phi)) + A^b |Phi|^2 + sum_A d^b u_A |Psi_A|^2, the Maxwell right side.
VecField maxwell_rhs(const Grid& g, const VecField& A, const Field& Phi, const Field& Phidot,
                     const std::vector<Field>& Psi, const std::vector<Phase>& phases, int step) {
    VecField rhs(g);
    Field absPhi2 = abs2(Phi);
    std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()));
    for (int d = 0; d < g.dim(); ++d) dPhi[static_cast<std::size_t>(d)] = spectral::derivative(Phi, d);

    for (int b = 0; b <= g.dim(); ++b) {
        Field r(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            // d^0 Phi = -Phidot, d^i Phi = dPhi_i
            cplx dup = (b == 0) ? -Phidot[q] : dPhi[static_cast<std::size_t>(b - 1)][q];
            double im = (Phi[q] * std::conj(dup)).imag();
            r[q] = -im + A[b][q] * absPhi2[q];
        }
        rhs[b] = r;
    }
    for (std::size_t a = 0; a < phases.size(); ++a) {
        VecField du = phases[a].dcov(step);
        Field p2 = abs2(Psi[a]);
        for (int b = 0; b <= g.dim(); ++b) {
            // raise the index: d^0 u = -d_t u, d^i u = d_i u
            double sgn = (b == 0) ? -1.0 : 1.0;
            for (std::size_t q = 0; q < g.size(); ++q)
                rhs[b][q] += sgn * du[b][q].real() * p2[q].real();
        }
    }
    return rhs;
}

// -2i A^a d_a Phi + A^a A_a Phi, the Klein-Gordon right side.
Field kg_rhs(const Grid& g, const VecField& A, const Field& Phi, const Field& Phidot) {
    Field rhs(g);
    std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()));
    for (int d = 0; d < g.dim(); ++d) dPhi[static_cast<std::size_t>(d)] = spectral::derivative(Phi, d);
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx AdPhi = A[0][q] * Phidot[q];
        for (int d = 1; d <= g.dim(); ++d) AdPhi += A[d][q] * dPhi[static_cast<std::size_t>(d - 1)][q];
        cplx A2 = -A[0][q] * A[0][q];
        for (int d = 1; d <= g.dim(); ++d) A2 += A[d][q] * A[d][q];
        rhs[q] = cplx{0.0, -2.0} * AdPhi + A2 * Phi[q];
    }
    return rhs;
}

Field psi_transport_rhs(const Grid& g, const VecField& A, const Field& Psi, const VecField& du) {
    // -2i A^a d_a u Psi
    Field rhs(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx Adu = A[0][q] * du[0][q];
        for (int d = 1; d <= g.dim(); ++d) Adu += A[d][q] * du[d][q];
        rhs[q] = cplx{0.0, -2.0} * Adu * Psi[q];
    }
    return rhs;
}

VecField w_transport_rhs(const Grid& g, const Field& Phi, const Field& Psi, const VecField& du) {
    // i d^b u conj(Psi) Phi
    VecField rhs(g);
    for (int b = 0; b <= g.dim(); ++b) {
        double sgn = (b == 0) ? -1.0 : 1.0;
        for (std::size_t q = 0; q < g.size(); ++q)
            rhs[b][q] = cplx{0.0, sgn} * du[b][q].real() * std::conj(Psi[q]) * Phi[q];
    }
    return rhs;
}

struct StagePhase {
    VecField du;
    Field box;
};

// Phase data at a stage time between stored steps (linear interpolation; plane is exact).
StagePhase phase_at(const Phase& p, int step, double frac) {
    if (p.is_plane() || frac == 0.0) return {p.dcov(step), p.box_u(step)};
    VecField a = p.dcov(step), b = p.dcov(step + 1);
    Field ba = p.box_u(step), bb = p.box_u(step + 1);
    VecField du(a.grid());
    for (int c = 0; c < a.components(); ++c) {
        du[c] = a[c];
        du[c] *= cplx{1.0 - frac, 0.0};
        axpy(du[c], cplx{frac, 0.0}, b[c]);
    }
    Field bx = ba;
    bx *= cplx{1.0 - frac, 0.0};
    axpy(bx, cplx{frac, 0.0}, bb);
    return {du, bx};
}

} // namespace

BackgroundInitialData BackgroundInitialData::zero(const Grid& g, const std::vector<EikonalData>& eik) {
    BackgroundInitialData d;
    d.grid = g;
    d.a0 = VecField(g);
    d.a0dot = VecField(g);
    d.phi0 = Field(g);
    d.phi0dot = Field(g);
    d.psi.assign(eik.size(), Field(g));
    d.w.assign(eik.size(), VecField(g));
    d.eikonal = eik;
    return d;
}

Field transport_time_derivative(const Field& f, const Field& rhs, const VecField& du, const Field& box_u) {
    const Grid& g = f.grid();
    Field out(g);
    std::vector<Field> df(static_cast<std::size_t>(g.dim()));
    for (int d = 0; d < g.dim(); ++d) df[static_cast<std::size_t>(d)] = spectral::derivative(f, d);
    for (std::size_t q = 0; q < g.size(); ++q) {
        cplx adv{0.0, 0.0};
        for (int d = 1; d <= g.dim(); ++d) adv += du[d][q] * df[static_cast<std::size_t>(d - 1)][q];
        double d0u = -du[0][q].real(); // d^0 u
        out[q] = (rhs[q] - 2.0 * adv - box_u[q] * f[q]) / (2.0 * d0u);
    }
    return out;
}

ConstraintReport check_background_constraints(const BackgroundInitialData& d, double tol) {
    const Grid& g = d.grid;
    ConstraintReport rep;

    // -lap a0^0 - div a0dot^i + Im(phi conj(phidot)) + a0^0 |phi|^2 - sum vdot |psi|^2
    Field maxres = spectral::laplacian(d.a0[0]);
    maxres *= cplx{-1.0, 0.0};
    Field divad = spectral::spatial_divergence(d.a0dot);
    maxres -= divad;
    for (std::size_t q = 0; q < g.size(); ++q) {
        maxres[q] += (d.phi0[q] * std::conj(d.phi0dot[q])).imag() +
                     d.a0[0][q].real() * std::norm(d.phi0[q]);
    }
    for (std::size_t a = 0; a < d.psi.size(); ++a)
        for (std::size_t q = 0; q < g.size(); ++q)
            maxres[q] -= d.eikonal[a].vdot[q].real() * std::norm(d.psi[a][q]);
    rep.maxwell = spectral::l2_norm(maxres);

    // Lorenz: a0dot^0 + div a0^i
    Field lz = spectral::spatial_divergence(d.a0);
    lz += d.a0dot[0];
    rep.lorenz = spectral::l2_norm(lz);

    // eikonal + polarization, per phase
    for (std::size_t a = 0; a < d.psi.size(); ++a) {
        auto er = validate_eikonal_data(d.eikonal[a], tol);
        rep.eikonal = std::max(rep.eikonal, er.eikonal_residual);
        Field pol(g);
        std::vector<Field> gv(static_cast<std::size_t>(g.dim()));
        for (int i = 0; i < g.dim(); ++i) {
            gv[static_cast<std::size_t>(i)] = spectral::derivative(d.eikonal[a].v_periodic, i);
            for (std::size_t q = 0; q < g.size(); ++q)
                gv[static_cast<std::size_t>(i)][q] += d.eikonal[a].klin[static_cast<std::size_t>(i)];
        }
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx s = d.eikonal[a].vdot[q].real() * d.w[a][0][q];
            for (int i = 1; i <= g.dim(); ++i) s += gv[static_cast<std::size_t>(i - 1)][q].real() * d.w[a][i][q];
            pol[q] = s;
        }
        rep.polarization = std::max(rep.polarization, spectral::l2_norm(pol));
    }

    double scale = 1.0;
    for (int b = 0; b <= g.dim(); ++b)
        scale = std::max({scale, spectral::l2_norm(d.a0[b]), spectral::l2_norm(d.a0dot[b])});
    scale = std::max({scale, spectral::l2_norm(d.phi0), spectral::l2_norm(d.phi0dot)});
    for (std::size_t a = 0; a < d.psi.size(); ++a) scale = std::max(scale, spectral::l2_norm(d.psi[a]));
    rep.scale = scale;
    rep.pass = rep.maxwell <= tol * scale && rep.lorenz <= tol * scale && rep.eikonal <= tol &&
               rep.polarization <= tol * scale;
    std::ostringstream os;
    os << "maxwell " << rep.maxwell << ", lorenz " << rep.lorenz << ", eikonal " << rep.eikonal
       << ", polarization " << rep.polarization << ", scale " << scale;
    rep.detail = os.str();
    return rep;
}

BackgroundEvolver::BackgroundEvolver(const BackgroundInitialData& d, std::vector<Phase> phases)
    : grid_(d.grid), phases_(std::move(phases)) {
    cur_.A = d.a0;
    cur_.Adot = d.a0dot;
    cur_.Phi = d.phi0;
    cur_.Phidot = d.phi0dot;
    cur_.Psi = d.psi;
    cur_.W = d.w;
    support0_ = d.support_radius;
    dealias_ = d.dealias;
}

VecField BackgroundEvolver::wave_acc_A(const BgSlice& s, int step) const {
    VecField rhs = maxwell_rhs(grid_, s.A, s.Phi, s.Phidot, s.Psi, phases_, step);
    VecField acc(grid_);
    for (int b = 0; b <= grid_.dim(); ++b) {
        if (dealias_) rhs[b] = spectral::dealias_two_thirds(rhs[b]);
        acc[b] = spectral::laplacian(s.A[b]);
        acc[b] -= rhs[b];
    }
    return acc;
}

Field BackgroundEvolver::wave_acc_Phi(const BgSlice& s) const {
    Field rhs = kg_rhs(grid_, s.A, s.Phi, s.Phidot);
    if (dealias_) rhs = spectral::dealias_two_thirds(rhs);
    Field acc = spectral::laplacian(s.Phi);
    acc -= rhs;
    return acc;
}

void BackgroundEvolver::check_health(const BgSlice& s) const {
    for (int b = 0; b <= grid_.dim(); ++b)
        if (!s.A[b].finite() || !s.Adot[b].finite()) throw SolverAbort("non-finite potential");
    if (!s.Phi.finite() || !s.Phidot.finite()) throw SolverAbort("non-finite wave function");
    if (support0_ <= 0.0) return; // no compact support declared (global data allowed)
    // effective compact supports must stay clear of the periodic image; A^0 is exempt
    double limit = 0.5 * grid_.length() - 2.0 * grid_.dx();
    double r = support_radius(s.Phi);
    for (const auto& p : s.Psi) r = std::max(r, support_radius(p));
    for (const auto& w : s.W)
        for (int b = 0; b <= grid_.dim(); ++b) r = std::max(r, support_radius(w[b]));
    for (int b = 1; b <= grid_.dim(); ++b) r = std::max(r, support_radius(s.A[b]));
    if (r > limit) throw SolverAbort("compact support reached the box boundary");
}

void BackgroundEvolver::step() {
    const double dt = grid_.dt();
    const int dim = grid_.dim();
    BgSlice& s = cur_;

    VecField accA = wave_acc_A(s, step_);
    Field accP = wave_acc_Phi(s);

    // Taylor predictors for the wave fields at stage times
    auto wave_at = [&](double tau, VecField& A, Field& Phi, Field& Phidot) {
        A = s.A;
        Phi = s.Phi;
        Phidot = s.Phidot;
        for (int b = 0; b <= dim; ++b) {
            axpy(A[b], cplx{tau, 0.0}, s.Adot[b]);
            axpy(A[b], cplx{0.5 * tau * tau, 0.0}, accA[b]);
        }
        axpy(Phi, cplx{tau, 0.0}, s.Phidot);
        axpy(Phi, cplx{0.5 * tau * tau, 0.0}, accP);
        axpy(Phidot, cplx{tau, 0.0}, accP);
    };

    // RK4 transports with wave sources at stage times
    std::size_t np = phases_.size();
    std::vector<Field> psi_new(np);
    std::vector<VecField> w_new(np);
    {
        VecField Ah, Af;
        Field Ph, Pd_h, Pf, Pd_f;
        wave_at(0.5 * dt, Ah, Ph, Pd_h);
        wave_at(dt, Af, Pf, Pd_f);

        for (std::size_t a = 0; a < np; ++a) {
            const Phase& ph = phases_[a];
            StagePhase p0 = phase_at(ph, step_, 0.0);
            StagePhase ph2 = phase_at(ph, step_, 0.5);
            StagePhase p1 = phase_at(ph, step_, 1.0);

            auto kpsi = [&](const Field& psi, const VecField& A, const StagePhase& sp) {
                return transport_time_derivative(psi, psi_transport_rhs(grid_, A, psi, sp.du), sp.du, sp.box);
            };
            auto kw = [&](const VecField& w, const Field& Phi, const Field& psi, const StagePhase& sp) {
                VecField rhs = w_transport_rhs(grid_, Phi, psi, sp.du);
                VecField out(grid_);
                for (int b = 0; b <= dim; ++b)
                    out[b] = transport_time_derivative(w[b], rhs[b], sp.du, sp.box);
                return out;
            };

            // Psi stages (W does not feed back into Psi)
            Field k1 = kpsi(s.Psi[a], s.A, p0);
            Field y2 = s.Psi[a];
            axpy(y2, cplx{0.5 * dt, 0.0}, k1);
            Field k2 = kpsi(y2, Ah, ph2);
            Field y3 = s.Psi[a];
            axpy(y3, cplx{0.5 * dt, 0.0}, k2);
            Field k3 = kpsi(y3, Ah, ph2);
            Field y4 = s.Psi[a];
            axpy(y4, cplx{dt, 0.0}, k3);
            Field k4 = kpsi(y4, Af, p1);
            psi_new[a] = s.Psi[a];
            axpy(psi_new[a], cplx{dt / 6.0, 0.0}, k1);
            axpy(psi_new[a], cplx{dt / 3.0, 0.0}, k2);
            axpy(psi_new[a], cplx{dt / 3.0, 0.0}, k3);
            axpy(psi_new[a], cplx{dt / 6.0, 0.0}, k4);

            // Psi stage values for the W right side
            VecField l1 = kw(s.W[a], s.Phi, s.Psi[a], p0);
            VecField w2 = s.W[a];
            for (int b = 0; b <= dim; ++b) axpy(w2[b], cplx{0.5 * dt, 0.0}, l1[b]);
            VecField l2 = kw(w2, Ph, y2, ph2);
            VecField w3 = s.W[a];
            for (int b = 0; b <= dim; ++b) axpy(w3[b], cplx{0.5 * dt, 0.0}, l2[b]);
            VecField l3 = kw(w3, Ph, y3, ph2);
            VecField w4 = s.W[a];
            for (int b = 0; b <= dim; ++b) axpy(w4[b], cplx{dt, 0.0}, l3[b]);
            VecField l4 = kw(w4, Pf, y4, p1);
            w_new[a] = s.W[a];
            for (int b = 0; b <= dim; ++b) {
                axpy(w_new[a][b], cplx{dt / 6.0, 0.0}, l1[b]);
                axpy(w_new[a][b], cplx{dt / 3.0, 0.0}, l2[b]);
                axpy(w_new[a][b], cplx{dt / 3.0, 0.0}, l3[b]);
                axpy(w_new[a][b], cplx{dt / 6.0, 0.0}, l4[b]);
            }
        }
    }

    // position update + velocity correction for the waves
    BgSlice next;
    next.Psi = std::move(psi_new);
    next.W = std::move(w_new);
    next.A = s.A;
    next.Phi = s.Phi;
    for (int b = 0; b <= dim; ++b) {
        axpy(next.A[b], cplx{dt, 0.0}, s.Adot[b]);
        axpy(next.A[b], cplx{0.5 * dt * dt, 0.0}, accA[b]);
    }
    axpy(next.Phi, cplx{dt, 0.0}, s.Phidot);
    axpy(next.Phi, cplx{0.5 * dt * dt, 0.0}, accP);

    // predictor velocities, then one fixed-point correction through the new accelerations
    next.Adot = s.Adot;
    for (int b = 0; b <= dim; ++b) axpy(next.Adot[b], cplx{dt, 0.0}, accA[b]);
    next.Phidot = s.Phidot;
    axpy(next.Phidot, cplx{dt, 0.0}, accP);

    for (int pass = 0; pass < 2; ++pass) {
        VecField accA1 = wave_acc_A(next, step_ + 1);
        Field accP1 = wave_acc_Phi(next);
        next.Adot = s.Adot;
        next.Phidot = s.Phidot;
        for (int b = 0; b <= dim; ++b) {
            axpy(next.Adot[b], cplx{0.5 * dt, 0.0}, accA[b]);
            axpy(next.Adot[b], cplx{0.5 * dt, 0.0}, accA1[b]);
        }
        axpy(next.Phidot, cplx{0.5 * dt, 0.0}, accP);
        axpy(next.Phidot, cplx{0.5 * dt, 0.0}, accP1);
    }

    cur_ = std::move(next);
    ++step_;
    check_health(cur_);
}

BackgroundState evolve_background(const BackgroundInitialData& d, double T, int stride) {
    std::vector<Phase> phases;
    for (const auto& e : d.eikonal) phases.push_back(trace_phase(e, T));
    int n_steps = static_cast<int>(std::round(T / d.grid.dt()));
    for (const auto& p : phases)
        if (p.steps() < n_steps) throw SolverAbort("phase caustic before requested final time");

    BackgroundEvolver ev(d, phases);
    BackgroundState st;
    st.grid = d.grid;
    st.phases = ev.phases();
    st.T = T;
    st.n_steps = n_steps;
    st.initial = ev.current();

    if (stride <= 0) stride = std::max(1, n_steps / 8);
    std::vector<int> centers;
    for (int c = stride; c + 2 <= n_steps; c += stride) {
        if (c >= 2) centers.push_back(c);
    }
    if (centers.empty() && n_steps >= 4) centers.push_back(n_steps - 2);
    else if (!centers.empty() && centers.back() != n_steps - 2 && n_steps - 2 >= 2)
        centers.push_back(n_steps - 2);

    std::vector<BgSlice> ring;
    ring.push_back(ev.current());
    std::size_t next_center = 0;
    for (int s = 1; s <= n_steps; ++s) {
        ev.step();
        ring.push_back(ev.current());
        if (ring.size() > 5) ring.erase(ring.begin());
        if (next_center < centers.size() && s == centers[next_center] + 2) {
            if (ring.size() == 5) {
                CheckpointWindow w;
                w.center_step = centers[next_center];
                for (int i = 0; i < 5; ++i) w.s[static_cast<std::size_t>(i)] = ring[static_cast<std::size_t>(i)];
                st.windows.push_back(std::move(w));
            }
            ++next_center;
        }
    }
    return st;
}

BgFrame background_frame(const Grid& g, const BgSlice& s, const std::vector<Phase>& phases, int step,
                         bool need_second) {
    BgFrame fr;
    std::size_t np = phases.size();
    fr.Psidot.resize(np);
    fr.Wdot.resize(np);
    for (std::size_t a = 0; a < np; ++a) {
        VecField du = phases[a].dcov(step);
        Field bx = phases[a].box_u(step);
        fr.Psidot[a] = transport_time_derivative(s.Psi[a], psi_transport_rhs(g, s.A, s.Psi[a], du), du, bx);
        VecField rhsw = w_transport_rhs(g, s.Phi, s.Psi[a], du);
        fr.Wdot[a] = VecField(g);
        for (int b = 0; b <= g.dim(); ++b)
            fr.Wdot[a][b] = transport_time_derivative(s.W[a][b], rhsw[b], du, bx);
    }
    // wave accelerations from the equations
    {
        VecField rhs = maxwell_rhs(g, s.A, s.Phi, s.Phidot, s.Psi, phases, step);
        fr.Addot = VecField(g);
        for (int b = 0; b <= g.dim(); ++b) {
            fr.Addot[b] = spectral::laplacian(s.A[b]);
            fr.Addot[b] -= rhs[b];
        }
        fr.Phiddot = spectral::laplacian(s.Phi);
        fr.Phiddot -= kg_rhs(g, s.A, s.Phi, s.Phidot);
    }
    if (!need_second) return fr;

    fr.Psiddot.resize(np);
    fr.Wddot.resize(np);
    for (std::size_t a = 0; a < np; ++a) {
        if (!phases[a].is_plane())
            throw ConfigError("second-order background frames require plane-wave phases");
        VecField du = phases[a].dcov(step);
        Field bx = phases[a].box_u(step); // zero for plane waves
        // d_t of the Psi transport right side: -2i (Adot . du) Psi - 2i (A . du) Psidot
        Field rhs2(g);
        for (std::size_t q = 0; q < g.size(); ++q) {
            cplx Adotdu = s.Adot[0][q] * du[0][q];
            cplx Adu = s.A[0][q] * du[0][q];
            for (int d = 1; d <= g.dim(); ++d) {
                Adotdu += s.Adot[d][q] * du[d][q];
                Adu += s.A[d][q] * du[d][q];
            }
            rhs2[q] = cplx{0.0, -2.0} * (Adotdu * s.Psi[a][q] + Adu * fr.Psidot[a][q]);
        }
        fr.Psiddot[a] = transport_time_derivative(fr.Psidot[a], rhs2, du, bx);

        // d_t of the W transport right side: i d^b u (conj(Psidot) Phi + conj(Psi) Phidot)
        fr.Wddot[a] = VecField(g);
        for (int b = 0; b <= g.dim(); ++b) {
            double sgn = (b == 0) ? -1.0 : 1.0;
            Field r2(g);
            for (std::size_t q = 0; q < g.size(); ++q)
                r2[q] = cplx{0.0, sgn} * du[b][q].real() *
                        (std::conj(fr.Psidot[a][q]) * s.Phi[q] + std::conj(s.Psi[a][q]) * s.Phidot[q]);
            fr.Wddot[a][b] = transport_time_derivative(fr.Wdot[a][b], r2, du, bx);
        }
    }
    return fr;
}

DiagnosticsTable background_diagnostics(const BackgroundState& st) {
    DiagnosticsTable tab;
    const Grid& g = st.grid;
    const double dt = g.dt();

    std::vector<double> charge0; // per-phase conserved charge at the first checkpoint
    double em_charge0 = 0.0;

    for (const auto& w : st.windows) {
        DiagnosticsRow row;
        row.t = w.center_step * dt;
        const BgSlice& c = w.center();

        // Lorenz gauge
        Field lz = spectral::spatial_divergence(c.A);
        lz += c.Adot[0];
        row.values["lorenz"] = spectral::l2_norm(lz);

        double pol_worst = 0.0, charge_transport_worst = 0.0;
        double geo_worst = 0.0, null_worst = 0.0, charge_eq_worst = 0.0;
        for (std::size_t a = 0; a < st.phases.size(); ++a) {
            const Phase& ph = st.phases[a];
            VecField du = ph.dcov(w.center_step);
            Field bx = ph.box_u(w.center_step);
            // polarization d_a u W^a (covariant du against contravariant W)
            Field pol(g);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx s = du[0][q].real() * c.W[a][0][q];
                for (int i = 1; i <= g.dim(); ++i) s += du[i][q].real() * c.W[a][i][q];
                pol[q] = s;
            }
            pol_worst = std::max(pol_worst, spectral::l2_norm(pol));

            // charge transport in squared-density form: 2 d^a u d_a(|Psi|^2) + 2 box u |Psi|^2
            Field rho2 = abs2(c.Psi[a]);
            Field rho2_m2 = abs2(w.s[0].Psi[a]), rho2_m1 = abs2(w.s[1].Psi[a]);
            Field rho2_p1 = abs2(w.s[3].Psi[a]), rho2_p2 = abs2(w.s[4].Psi[a]);
            Field dtr = time_derivative_o4(rho2_m2, rho2_m1, rho2_p1, rho2_p2, dt);
            Field ct(g);
            VecField gr = spectral::spatial_gradient(rho2);
            for (std::size_t q = 0; q < g.size(); ++q) {
                cplx adv = -du[0][q] * dtr[q];
                for (int i = 1; i <= g.dim(); ++i) adv += du[i][q] * gr[i][q];
                ct[q] = 2.0 * adv + 2.0 * bx[q] * rho2[q];
            }
            charge_transport_worst = std::max(charge_transport_worst, spectral::l2_norm(ct));

            // null-transport system residuals for (V = d#u, rho = |Psi|):
            // geodesic V^a d_a V^b and null V^a V_a
            Field nullres = minkowski_dot(du, du);
            null_worst = std::max(null_worst, max_abs(nullres));
            if (!ph.is_plane()) {
                VecField dum = ph.dcov(w.center_step - 1), dup = ph.dcov(w.center_step + 1);
                for (int b = 0; b <= g.dim(); ++b) {
                    Field dtc(g);
                    for (std::size_t q = 0; q < g.size(); ++q)
                        dtc[q] = (dup[b][q] - dum[b][q]) / (2.0 * dt);
                    VecField gc = spectral::spatial_gradient(du[b]);
                    for (std::size_t q = 0; q < g.size(); ++q) {
                        cplx acc = -du[0][q] * dtc[q];
                        for (int i = 1; i <= g.dim(); ++i) acc += du[i][q] * gc[i][q];
                        geo_worst = std::max(geo_worst, std::abs(acc));
                    }
                }
            }
            // charge equation 2 V^a d_a rho + div V rho, squared-density form as above
            charge_eq_worst = charge_transport_worst;

            // conserved ray charge int |Psi|^2 d^0 u dx
            double q0 = 0.0;
            for (std::size_t q = 0; q < g.size(); ++q)
                q0 += rho2[q].real() * (-du[0][q].real());
            q0 *= g.cell_volume();
            row.values["charge_phase_" + std::to_string(a)] = q0;
            if (charge0.size() <= a) charge0.push_back(q0);
        }
        row.values["polarization"] = pol_worst;
        row.values["charge_transport"] = charge_transport_worst;
        row.values["nt_geodesic"] = geo_worst;
        row.values["nt_null"] = null_worst;
        row.values["nt_charge"] = charge_eq_worst;

        // Maxwell equation of the null-transport system:
        // dF^{ab} residual = box A - grad(div A) + ... ; in Lorenz gauge measured as
        // box A - J - flux. The defect field box A - (-Im + A|Phi|^2) should equal the flux.
        {
            VecField boxA(g);
            for (int b = 0; b <= g.dim(); ++b) {
                Field lap = spectral::laplacian(c.A[b]);
                Field dtt = second_time_derivative_o4(w.s[0].A[b], w.s[1].A[b], c.A[b], w.s[3].A[b],
                                                      w.s[4].A[b], dt);
                boxA[b] = lap;
                boxA[b] -= dtt;
            }
            Field absPhi2 = abs2(c.Phi);
            std::vector<Field> dPhi(static_cast<std::size_t>(g.dim()));
            for (int d = 0; d < g.dim(); ++d) dPhi[static_cast<std::size_t>(d)] = spectral::derivative(c.Phi, d);
            double defect_norm = 0.0, defect_minus_flux = 0.0, flux_norm = 0.0;
            for (int b = 0; b <= g.dim(); ++b) {
                Field defect = boxA[b];
                for (std::size_t q = 0; q < g.size(); ++q) {
                    cplx dup = (b == 0) ? -c.Phidot[q] : dPhi[static_cast<std::size_t>(b - 1)][q];
                    defect[q] -= -(c.Phi[q] * std::conj(dup)).imag() + c.A[b][q] * absPhi2[q];
                }
                Field flux(g);
                for (std::size_t a = 0; a < st.phases.size(); ++a) {
                    VecField du = st.phases[a].dcov(w.center_step);
                    double sgn = (b == 0) ? -1.0 : 1.0;
                    for (std::size_t q = 0; q < g.size(); ++q)
                        flux[q] += sgn * du[b][q].real() * std::norm(c.Psi[a][q]);
                }
                Field diff = defect;
                diff -= flux;
                defect_norm += std::pow(spectral::l2_norm(defect), 2);
                defect_minus_flux += std::pow(spectral::l2_norm(diff), 2);
                flux_norm += std::pow(spectral::l2_norm(flux), 2);
            }
            row.values["maxwell_defect"] = std::sqrt(defect_norm);
            row.values["flux"] = std::sqrt(flux_norm);
            row.values["maxwell_defect_minus_flux"] = std::sqrt(defect_minus_flux);
        }

        // Klein-Gordon covariant residual (box Phi + 2iA.dPhi + i divA Phi - A.A Phi)
        {
            Field lap = spectral::laplacian(c.Phi);
            Field dtt = second_time_derivative_o4(w.s[0].Phi, w.s[1].Phi, c.Phi, w.s[3].Phi, w.s[4].Phi, dt);
            Field boxPhi = lap;
            boxPhi -= dtt;
            Field kg = boxPhi;
            kg -= kg_rhs(g, c.A, c.Phi, c.Phidot);
            // the reduced equation already carries the Lorenz-gauge form; report as is
            row.values["nt_kg"] = spectral::l2_norm(kg);
        }

        // total electromagnetic charge int J^0
        {
            double q = 0.0;
            for (std::size_t qq = 0; qq < g.size(); ++qq) {
                double j0 = (c.Phi[qq] * std::conj(c.Phidot[qq])).imag() +
                            c.A[0][qq].real() * std::norm(c.Phi[qq]);
                q += j0;
            }
            q *= g.cell_volume();
            row.values["em_charge"] = q;
            if (tab.rows.empty()) em_charge0 = q;
        }

        tab.rows.push_back(std::move(row));
    }

    // drift summaries
    double worst_charge_drift = 0.0;
    for (const auto& row : tab.rows) {
        for (std::size_t a = 0; a < charge0.size(); ++a) {
            auto it = row.values.find("charge_phase_" + std::to_string(a));
            if (it != row.values.end() && std::abs(charge0[a]) > 1e-14)
                worst_charge_drift =
                    std::max(worst_charge_drift, std::abs(it->second - charge0[a]) / std::abs(charge0[a]));
        }
    }
    tab.summary["ray_charge_drift"] = worst_charge_drift;
    double worst_em_drift = 0.0;
    for (const auto& row : tab.rows) {
        auto it = row.values.find("em_charge");
        if (it != row.values.end() && std::abs(em_charge0) > 1e-14)
            worst_em_drift = std::max(worst_em_drift, std::abs(it->second - em_charge0) / std::abs(em_charge0));
    }
    tab.summary["em_charge_drift"] = worst_em_drift;
    return tab;
}

Field bump(const Grid& g, const std::array<double, 3>& center, double radius, double amplitude) {
    // Gaussian with sigma = radius/3; effectively supported (below 1e-6 of the peak)
    // inside |x - center| < 1.8 radius and spectrally clean at the grids used here.
    const double sigma = radius / 3.0;
    Field f(g);
    for (std::size_t q = 0; q < g.size(); ++q) {
        auto x = g.position(q);
        double r2 = 0.0;
        for (int d = 0; d < g.dim(); ++d) {
            double dx = x[d] - center[d];
            dx -= g.length() * std::round(dx / g.length());
            r2 += dx * dx;
        }
        f[q] = amplitude * std::exp(-0.5 * r2 / (sigma * sigma));
    }
    return f;
}

double support_radius(const Field& f, double tail_fraction) {
    const Grid& g = f.grid();
    const int nbins = g.n() / 2 + 1;
    std::vector<double> mass(static_cast<std::size_t>(nbins), 0.0);
    double total = 0.0;
    for (std::size_t q = 0; q < f.size(); ++q) {
        double m = std::norm(f[q]);
        if (m == 0.0) continue;
        auto x = g.position(q);
        double r = 0.0;
        for (int d = 0; d < g.dim(); ++d) r = std::max(r, std::abs(x[d]));
        int bin = std::min(nbins - 1, static_cast<int>(r / g.dx()));
        mass[static_cast<std::size_t>(bin)] += m;
        total += m;
    }
    if (total <= 1e-26) return 0.0;
    double tail = 0.0;
    for (int b = nbins - 1; b >= 0; --b) {
        tail += mass[static_cast<std::size_t>(b)];
        if (tail > tail_fraction * total) return (b + 1) * g.dx();
    }
    return 0.0;
}

} // namespace kgmo
