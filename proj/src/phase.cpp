#include "kgmo/phase.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kgmo/interp.hpp"

namespace kgmo {

namespace {

double norm2(const std::vector<double>& k) {
    double s = 0.0;
    for (double x : k) s += x * x;
    return std::sqrt(s);
}

// Dense field of |grad v| and unit direction xi from eikonal data.
struct RayField {
    Grid grid;
    std::vector<Field> gradv;   // spatial components of grad v (real)
    Field speed;                // |grad v|
    std::vector<Field> xi;      // unit direction
    std::vector<Field> dxi;     // row-major Jacobian d xi_i / d y_j, dim*dim entries
};

RayField build_ray_field(const EikonalData& d) {
    RayField rf;
    rf.grid = d.grid;
    const int dim = d.grid.dim();
    rf.gradv.resize(dim);
    for (int i = 0; i < dim; ++i) {
        rf.gradv[i] = spectral::derivative(d.v_periodic, i);
        for (std::size_t p = 0; p < rf.gradv[i].size(); ++p)
            rf.gradv[i][p] += d.klin[static_cast<std::size_t>(i)];
    }
    rf.speed = Field(d.grid);
    for (std::size_t p = 0; p < rf.speed.size(); ++p) {
        double s = 0.0;
        for (int i = 0; i < dim; ++i) s += std::norm(rf.gradv[i][p]);
        rf.speed[p] = std::sqrt(s);
    }
    rf.xi.resize(dim);
    for (int i = 0; i < dim; ++i) {
        rf.xi[i] = Field(d.grid);
        for (std::size_t p = 0; p < rf.xi[i].size(); ++p)
            rf.xi[i][p] = rf.gradv[i][p] / rf.speed[p];
    }
    rf.dxi.resize(static_cast<std::size_t>(dim) * dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            rf.dxi[static_cast<std::size_t>(i) * dim + j] = spectral::derivative(rf.xi[i], j);
    return rf;
}

double jacobian_det(const RayField& rf, const std::array<double, 3>& y, double t) {
    const int dim = rf.grid.dim();
    double J[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            J[i][j] = (i == j ? 1.0 : 0.0) +
                      t * interp_periodic(rf.dxi[static_cast<std::size_t>(i) * dim + j], y).real();
    if (dim == 1) return J[0][0];
    if (dim == 2) return J[0][0] * J[1][1] - J[0][1] * J[1][0];
    return J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
           J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
           J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
}

double min_grid_jacobian(const RayField& rf, double t) {
    double m = 1e300;
    for (std::size_t p = 0; p < rf.grid.size(); ++p) {
        auto y = rf.grid.position(p);
        m = std::min(m, jacobian_det(rf, y, t));
    }
    return m;
}

// Solve y + t xi(y) = x by damped Newton with periodic wrapping.
std::array<double, 3> invert_ray(const RayField& rf, const std::array<double, 3>& x, double t) {
    const int dim = rf.grid.dim();
    std::array<double, 3> y = x;
    for (int it = 0; it < 50; ++it) {
        double r[3] = {0, 0, 0};
        double rmax = 0.0;
        for (int i = 0; i < dim; ++i) {
            r[i] = y[i] + t * interp_periodic(rf.xi[i], y).real() - x[i];
            // shortest periodic representative of the residual
            double L = rf.grid.length();
            r[i] -= L * std::round(r[i] / L);
            rmax = std::max(rmax, std::abs(r[i]));
        }
        if (rmax < 1e-13 * rf.grid.length()) break;
        double J[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
        for (int i = 0; i < dim; ++i)
            for (int j = 0; j < dim; ++j)
                J[i][j] = (i == j ? 1.0 : 0.0) +
                          t * interp_periodic(rf.dxi[static_cast<std::size_t>(i) * dim + j], y).real();
        double dy[3] = {0, 0, 0};
        if (dim == 1) {
            dy[0] = r[0] / J[0][0];
        } else if (dim == 2) {
            double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
            dy[0] = (r[0] * J[1][1] - r[1] * J[0][1]) / det;
            dy[1] = (J[0][0] * r[1] - J[1][0] * r[0]) / det;
        } else {
            double det = J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
                         J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
                         J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
            double inv[3][3];
            inv[0][0] = (J[1][1] * J[2][2] - J[1][2] * J[2][1]) / det;
            inv[0][1] = (J[0][2] * J[2][1] - J[0][1] * J[2][2]) / det;
            inv[0][2] = (J[0][1] * J[1][2] - J[0][2] * J[1][1]) / det;
            inv[1][0] = (J[1][2] * J[2][0] - J[1][0] * J[2][2]) / det;
            inv[1][1] = (J[0][0] * J[2][2] - J[0][2] * J[2][0]) / det;
            inv[1][2] = (J[0][2] * J[1][0] - J[0][0] * J[1][2]) / det;
            inv[2][0] = (J[1][0] * J[2][1] - J[1][1] * J[2][0]) / det;
            inv[2][1] = (J[0][1] * J[2][0] - J[0][0] * J[2][1]) / det;
            inv[2][2] = (J[0][0] * J[1][1] - J[0][1] * J[1][0]) / det;
            for (int i = 0; i < 3; ++i)
                dy[i] = inv[i][0] * r[0] + inv[i][1] * r[1] + inv[i][2] * r[2];
        }
        for (int i = 0; i < dim; ++i) y[i] -= dy[i];
    }
    return y;
}

} // namespace

EikonalData EikonalData::plane(const Grid& g, const std::vector<double>& k) {
    EikonalData d;
    d.grid = g;
    d.klin = k;
    d.klin.resize(static_cast<std::size_t>(g.dim()), 0.0);
    d.v_periodic = Field(g);
    d.vdot = Field(g, cplx{-norm2(d.klin), 0.0});
    d.plane_k = d.klin;
    return d;
}

EikonalData EikonalData::from_phase(const Grid& g, const std::vector<double>& klin, const Field& v_periodic) {
    EikonalData d;
    d.grid = g;
    d.klin = klin;
    d.klin.resize(static_cast<std::size_t>(g.dim()), 0.0);
    d.v_periodic = v_periodic;
    d.vdot = Field(g);
    for (int i = 0; i < g.dim(); ++i) {
        Field gv = spectral::derivative(v_periodic, i);
        for (std::size_t p = 0; p < g.size(); ++p) {
            double c = gv[p].real() + d.klin[static_cast<std::size_t>(i)];
            d.vdot[p] += c * c;
        }
    }
    for (std::size_t p = 0; p < g.size(); ++p) d.vdot[p] = -std::sqrt(d.vdot[p].real());
    return d;
}

EikonalReport validate_eikonal_data(const EikonalData& d, double tol) {
    EikonalReport rep;
    const int dim = d.grid.dim();
    std::vector<Field> gv(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        gv[static_cast<std::size_t>(i)] = spectral::derivative(d.v_periodic, i);
        for (std::size_t p = 0; p < gv[static_cast<std::size_t>(i)].size(); ++p)
            gv[static_cast<std::size_t>(i)][p] += d.klin[static_cast<std::size_t>(i)];
    }
    rep.eikonal_residual = 0.0;
    rep.min_grad = 1e300;
    rep.max_vdot = -1e300;
    for (std::size_t p = 0; p < d.grid.size(); ++p) {
        double g2 = 0.0;
        for (int i = 0; i < dim; ++i) g2 += std::norm(gv[static_cast<std::size_t>(i)][p]);
        double vd = d.vdot[p].real();
        rep.eikonal_residual = std::max(rep.eikonal_residual, std::abs(vd * vd - g2));
        rep.min_grad = std::min(rep.min_grad, std::sqrt(g2));
        rep.max_vdot = std::max(rep.max_vdot, vd);
    }
    rep.pass = rep.eikonal_residual <= tol && rep.min_grad > tol && rep.max_vdot < -tol;
    std::ostringstream os;
    os << "eikonal residual " << rep.eikonal_residual << ", min |grad v| " << rep.min_grad
       << ", max vdot " << rep.max_vdot;
    rep.detail = os.str();
    return rep;
}

Phase Phase::plane_wave(const Grid& g, const std::vector<double>& k, int n_steps) {
    Phase p;
    p.grid_ = g;
    p.plane_ = true;
    p.k_ = k;
    p.k_.resize(static_cast<std::size_t>(g.dim()), 0.0);
    p.n_steps_ = n_steps;
    return p;
}

Field Phase::u_values(int step) const {
    Field u(grid_);
    const double t = t_of(step);
    if (plane_) {
        const double om = norm2(k_);
        for (std::size_t p = 0; p < u.size(); ++p) {
            auto x = grid_.position(p);
            double s = -om * t;
            for (int d = 0; d < grid_.dim(); ++d) s += k_[static_cast<std::size_t>(d)] * x[d];
            u[p] = s;
        }
        return u;
    }
    const Field& per = u_periodic_[static_cast<std::size_t>(step)];
    for (std::size_t p = 0; p < u.size(); ++p) {
        auto x = grid_.position(p);
        double s = per[p].real();
        for (int d = 0; d < grid_.dim(); ++d) s += k_[static_cast<std::size_t>(d)] * x[d];
        u[p] = s;
    }
    return u;
}

VecField Phase::dcov(int step) const {
    if (!plane_) return dcov_[static_cast<std::size_t>(step)];
    VecField g(grid_);
    const double om = norm2(k_);
    g[0] = Field(grid_, cplx{-om, 0.0});
    for (int d = 0; d < grid_.dim(); ++d) g[d + 1] = Field(grid_, cplx{k_[static_cast<std::size_t>(d)], 0.0});
    return g;
}

VecField Phase::dcov_dt(int step) const {
    VecField out(grid_);
    if (plane_) return out;
    VecField du = dcov(step);
    for (int a = 0; a <= grid_.dim(); ++a) {
        VecField grad_a = spectral::spatial_gradient(du[a]);
        for (std::size_t q = 0; q < grid_.size(); ++q) {
            cplx adv{0.0, 0.0};
            for (int j = 1; j <= grid_.dim(); ++j) adv += du[j][q] * grad_a[j][q];
            out[a][q] = -adv / (-du[0][q].real()); // d^0 u = -d_t u
        }
    }
    return out;
}

Field Phase::box_u(int step) const {
    if (!plane_) return box_[static_cast<std::size_t>(step)];
    return Field(grid_);
}

Phase trace_phase(const EikonalData& d, double T) {
    Phase p;
    p.grid_ = d.grid;
    const double dt = d.grid.dt();
    int n_steps = static_cast<int>(std::round(T / dt));

    if (d.plane_k) {
        return Phase::plane_wave(d.grid, *d.plane_k, n_steps);
    }

    RayField rf = build_ray_field(d);
    const int dim = d.grid.dim();
    p.k_ = d.klin;

    // caustic scan: first step where the ray-map Jacobian dips below threshold
    const double jac_threshold = 0.1;
    int last_ok = n_steps;
    for (int s = 0; s <= n_steps; ++s) {
        if (min_grid_jacobian(rf, s * dt) < jac_threshold) {
            p.caustic_ = s * dt;
            last_ok = s > 0 ? s - 1 : 0;
            break;
        }
    }
    p.n_steps_ = last_ok;

    for (int s = 0; s <= p.n_steps_; ++s) {
        const double t = s * dt;
        Field uper(d.grid);
        VecField dc(d.grid);
        for (std::size_t q = 0; q < d.grid.size(); ++q) {
            auto x = d.grid.position(q);
            auto y = invert_ray(rf, x, t);
            double speed = interp_periodic(rf.speed, y).real();
            double vper = interp_periodic(d.v_periodic, y).real();
            // u(x,t) = v(y); subtract the linear part at x to keep the stored field periodic
            double lin_shift = 0.0;
            for (int i = 0; i < dim; ++i) {
                double dy = y[i] - x[i];
                double L = d.grid.length();
                dy -= L * std::round(dy / L);
                lin_shift += d.klin[static_cast<std::size_t>(i)] * dy;
            }
            uper[q] = vper + lin_shift;
            dc[0][q] = -speed;
            for (int i = 0; i < dim; ++i) dc[i + 1][q] = interp_periodic(rf.gradv[i], y).real();
        }
        // box u = -d2_t u + lap u; d2_t from the geodesic identity, lap from the periodic part
        Field lap = spectral::laplacian(uper);
        Field dtt(d.grid);
        {
            // d_t(d_t u) = (grad u . grad(d_t u)) / d_t u
            VecField gchi = spectral::spatial_gradient(dc[0]);
            for (std::size_t q = 0; q < d.grid.size(); ++q) {
                cplx s{0.0, 0.0};
                for (int i = 1; i <= dim; ++i) s += dc[i][q] * gchi[i][q];
                dtt[q] = s / dc[0][q];
            }
        }
        Field box(d.grid);
        for (std::size_t q = 0; q < d.grid.size(); ++q) box[q] = -dtt[q] + lap[q];
        p.u_periodic_.push_back(std::move(uper));
        p.dcov_.push_back(std::move(dc));
        p.box_.push_back(std::move(box));
    }
    return p;
}

const PairEntry& InteractionTable::entry(int a, int b) const {
    for (const auto& p : pairs)
        if ((p.a == a && p.b == b) || (p.a == b && p.b == a)) return p;
    throw ConfigError("interaction table: unknown pair");
}

PairClass classify_pair(const Phase& ua, const Phase& ub, double tol, PairEntry* details) {
    int steps = std::min(ua.steps(), ub.steps());
    double mn = 1e300, mx = 0.0;
    bool anti = true;
    for (int s = 0; s <= steps; ++s) {
        VecField da = ua.dcov(s);
        VecField db = ub.dcov(s);
        Field dot = minkowski_dot(da, db);
        for (std::size_t q = 0; q < dot.size(); ++q) {
            double a = std::abs(dot[q].real());
            mn = std::min(mn, a);
            mx = std::max(mx, a);
        }
        if (s == 0) {
            for (std::size_t q = 0; q < dot.size(); ++q) {
                double sp = 0.0, na = 0.0, nb = 0.0;
                for (int i = 1; i <= ua.grid().dim(); ++i) {
                    sp += da[i][q].real() * db[i][q].real();
                    na += da[i][q].real() * da[i][q].real();
                    nb += db[i][q].real() * db[i][q].real();
                }
                if (sp > -std::sqrt(na * nb) * (1.0 - 1e-9)) anti = false;
            }
        }
    }
    PairClass cls;
    if (mx <= tol)
        cls = PairClass::Resonant;
    else if (mn >= tol)
        cls = PairClass::Separated;
    else
        cls = PairClass::Incoherent;
    if (details) {
        details->cls = cls;
        details->min_abs_dot = mn;
        details->max_abs_dot = mx;
        details->anti_parallel = anti;
    }
    return cls;
}

InteractionTable build_interaction_table(const std::vector<Phase>& phases, double tol) {
    InteractionTable t;
    t.tol = tol;
    const int n = static_cast<int>(phases.size());
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            // identical phases are forbidden: min |grad v_A - grad v_B| must stay positive
            VecField da = phases[static_cast<std::size_t>(a)].dcov(0);
            VecField db = phases[static_cast<std::size_t>(b)].dcov(0);
            double mind = 1e300;
            for (std::size_t q = 0; q < da.grid().size(); ++q) {
                double s = 0.0;
                for (int i = 1; i <= da.grid().dim(); ++i)
                    s += std::norm(da[i][q] - db[i][q]);
                mind = std::min(mind, std::sqrt(s));
            }
            if (mind <= tol)
                throw ConfigError("phase set contains two phases with identical spatial gradients");
            PairEntry e;
            e.a = a;
            e.b = b;
            classify_pair(phases[static_cast<std::size_t>(a)], phases[static_cast<std::size_t>(b)], tol, &e);
            t.pairs.push_back(e);
        }
    }
    return t;
}

double eta0(const std::vector<Phase>& phases, const InteractionTable& table, double T) {
    if (!table.coherent()) throw ConfigError("eta0 requires a coherent interaction table");
    if (phases.empty()) throw ConfigError("eta0 requires at least one phase");
    const Grid& g = phases.front().grid();
    int steps = static_cast<int>(std::round(T / g.dt()));
    for (const auto& p : phases) steps = std::min(steps, p.steps());

    double m = 1e300;
    for (int s = 0; s <= steps; ++s) {
        for (const auto& ph : phases) {
            VecField d = ph.dcov(s);
            for (std::size_t q = 0; q < g.size(); ++q) {
                m = std::min(m, std::abs(d[0][q].real())); // |d^0 u| = |d_t u|
                double g2 = 0.0;
                for (int i = 1; i <= g.dim(); ++i) g2 += std::norm(d[i][q]);
                m = std::min(m, std::sqrt(g2));
            }
        }
        for (const auto& pr : table.pairs) {
            VecField da = phases[static_cast<std::size_t>(pr.a)].dcov(s);
            VecField db = phases[static_cast<std::size_t>(pr.b)].dcov(s);
            for (int sgn : {+1, -1}) {
                VecField comb(g);
                for (int a = 0; a <= g.dim(); ++a) {
                    comb[a] = da[a];
                    axpy(comb[a], cplx{static_cast<double>(sgn), 0.0}, db[a]);
                }
                if (pr.cls == PairClass::Separated) {
                    Field st = minkowski_dot(comb, comb);
                    for (std::size_t q = 0; q < g.size(); ++q) m = std::min(m, std::abs(st[q].real()));
                }
                // anti-parallel pairs: the spatial gradient of the sum combination vanishes
                // identically, and no inverted coefficient lives on that combination; it is
                // flagged in the table and excluded from the spatial lower bound.
                if (pr.anti_parallel && sgn == +1) continue;
                for (std::size_t q = 0; q < g.size(); ++q) {
                    double g2 = 0.0;
                    for (int i = 1; i <= g.dim(); ++i) g2 += std::norm(comb[i][q]);
                    m = std::min(m, g2); // |grad(u_A +- u_B)|^2, both classes
                }
            }
        }
    }
    if (m <= 0.0) throw ConfigError("degenerate phase set: eta0 is not positive");
    return m;
}

Field CombinedPhase::u_values(int step) const {
    Field u = pa->u_values(step);
    u *= cplx{static_cast<double>(sa), 0.0};
    axpy(u, cplx{static_cast<double>(sb), 0.0}, pb->u_values(step));
    return u;
}

VecField CombinedPhase::dcov(int step) const {
    VecField a = pa->dcov(step);
    VecField b = pb->dcov(step);
    VecField r(a.grid());
    for (int c = 0; c < r.components(); ++c) {
        r[c] = a[c];
        r[c] *= cplx{static_cast<double>(sa), 0.0};
        axpy(r[c], cplx{static_cast<double>(sb), 0.0}, b[c]);
    }
    return r;
}

Field CombinedPhase::box_u(int step) const {
    Field r = pa->box_u(step);
    r *= cplx{static_cast<double>(sa), 0.0};
    axpy(r, cplx{static_cast<double>(sb), 0.0}, pb->box_u(step));
    return r;
}

Field oscillation(const Field& u, double lambda) {
    Field r(u.grid());
    const double il = 1.0 / lambda;
    for (std::size_t q = 0; q < u.size(); ++q)
        r[q] = std::exp(cplx{0.0, u[q].real() * il});
    return r;
}

} // namespace kgmo
