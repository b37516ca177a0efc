#include "kgmo/spectral.hpp"

#include <cmath>

#include "kgmo/fft.hpp"

namespace kgmo {
namespace spectral {

namespace {

// Apply a multiplier m(mode vector) in Fourier space.
template <typename Mult>
Field apply_multiplier(const Field& f, Mult&& m) {
    f.require_finite("spectral operator");
    const Grid& g = f.grid();
    Field r = f;
    fft::forward(g, r.data());
    const int n = g.n();
    const int dim = g.dim();
    std::array<int, 3> idx{0, 0, 0};
    for (std::size_t flat = 0; flat < r.size(); ++flat) {
        std::size_t rem = flat;
        for (int d = dim - 1; d >= 0; --d) {
            idx[d] = static_cast<int>(rem % n);
            rem /= n;
        }
        std::array<double, 3> xi{0.0, 0.0, 0.0};
        for (int d = 0; d < dim; ++d) xi[d] = g.wavenumber(g.mode(idx[d]));
        r[flat] *= m(xi);
    }
    fft::inverse(g, r.data());
    return r;
}

} // namespace

Field derivative(const Field& f, int axis) {
    return apply_multiplier(f, [axis](const std::array<double, 3>& xi) {
        return cplx{0.0, xi[axis]};
    });
}

Field laplacian(const Field& f) {
    return apply_multiplier(f, [](const std::array<double, 3>& xi) {
        return cplx{-(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]), 0.0};
    });
}

Field inv_neg_laplacian_meanzero(const Field& f) {
    return apply_multiplier(f, [](const std::array<double, 3>& xi) {
        double k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        return (k2 == 0.0) ? cplx{0.0, 0.0} : cplx{1.0 / k2, 0.0};
    });
}

double sobolev_norm(const Field& f, const NormSpec& spec) {
    f.require_finite("sobolev_norm");
    if (spec.s < -2.0 || spec.s > 3.0) throw ConfigError("sobolev order outside supported range [-2,3]");
    const Grid& g = f.grid();
    std::vector<cplx> c = f.data();
    fft::forward(g, c);
    const int n = g.n();
    const int dim = g.dim();
    double acc = 0.0;
    for (std::size_t flat = 0; flat < c.size(); ++flat) {
        std::size_t rem = flat;
        double k2 = 0.0;
        for (int d = dim - 1; d >= 0; --d) {
            int i = static_cast<int>(rem % n);
            rem /= n;
            double xi = g.wavenumber(g.mode(i));
            k2 += xi * xi;
        }
        acc += std::pow(1.0 + k2, spec.s) * std::norm(c[flat]);
    }
    return std::sqrt(acc * g.volume());
}

double l2_norm(const Field& f) {
    f.require_finite("l2_norm");
    double acc = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) acc += std::norm(f[i]);
    return std::sqrt(acc * f.grid().cell_volume());
}

Field project_low(const Field& f, double lambda, double kappa) {
    if (lambda <= 0.0) throw ConfigError("lambda must be positive");
    if (kappa <= 0.0 || kappa >= 0.25) throw ConfigError("kappa must lie in (0, 1/4)");
    const double cutoff = std::pow(lambda, -kappa);
    return apply_multiplier(f, [cutoff](const std::array<double, 3>& xi) {
        double k = std::sqrt(xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]);
        return (k <= cutoff) ? cplx{1.0, 0.0} : cplx{0.0, 0.0};
    });
}

Field project_high(const Field& f, double lambda, double kappa) {
    Field low = project_low(f, lambda, kappa);
    Field r = f;
    r -= low;
    return r;
}

Field dealias_two_thirds(const Field& f) {
    const double kmax = f.grid().wavenumber(f.grid().n() / 2) * (2.0 / 3.0);
    return apply_multiplier(f, [kmax](const std::array<double, 3>& xi) {
        for (double x : xi)
            if (std::abs(x) > kmax) return cplx{0.0, 0.0};
        return cplx{1.0, 0.0};
    });
}

VecField spatial_gradient(const Field& f) {
    VecField r(f.grid());
    for (int d = 0; d < f.grid().dim(); ++d) r[d + 1] = derivative(f, d);
    return r;
}

Field spatial_divergence(const VecField& v) {
    Field r(v.grid());
    for (int d = 0; d < v.grid().dim(); ++d) r += derivative(v[d + 1], d);
    return r;
}

} // namespace spectral

Field dalembert(const FieldHistory& h) {
    h.require_same_grid();
    const double dt = h.grid().dt();
    Field r = spectral::laplacian(h.mid);
    const double idt2 = 1.0 / (dt * dt);
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] -= (h.next[i] - 2.0 * h.mid[i] + h.prev[i]) * idt2;
    r.require_finite("dalembert");
    return r;
}

VecField dalembert(const VecFieldHistory& h) {
    VecField r(h.grid());
    for (int a = 0; a < r.components(); ++a)
        r[a] = dalembert(FieldHistory{h.prev[a], h.mid[a], h.next[a]});
    return r;
}

Field second_time_derivative_o4(const Field& m2, const Field& m1, const Field& c, const Field& p1,
                                const Field& p2, double dt) {
    Field r(c.grid());
    const double s = 1.0 / (12.0 * dt * dt);
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = (-m2[i] + 16.0 * m1[i] - 30.0 * c[i] + 16.0 * p1[i] - p2[i]) * s;
    return r;
}

Field time_derivative_o4(const Field& m2, const Field& m1, const Field& p1, const Field& p2, double dt) {
    Field r(m1.grid());
    const double s = 1.0 / (12.0 * dt);
    for (std::size_t i = 0; i < r.size(); ++i)
        r[i] = (m2[i] - 8.0 * m1[i] + 8.0 * p1[i] - p2[i]) * s;
    return r;
}

Field oscillatory_dalembert(const FieldHistory& F, const Field& u_mid, const VecField& du,
                            const Field& box_u, double lambda) {
    if (lambda <= 0.0) throw ConfigError("lambda must be positive");
    if (F.grid() != u_mid.grid()) throw ConfigError("oscillatory_dalembert: mismatched grids");
    const Grid& g = F.grid();
    const double dt = g.dt();

    // Smooth-coefficient derivatives: spectral in space, second-order central in time.
    Field boxF = dalembert(F);
    Field dtF(g);
    const double i2dt = 1.0 / (2.0 * dt);
    for (std::size_t i = 0; i < dtF.size(); ++i) dtF[i] = (F.next[i] - F.prev[i]) * i2dt;

    std::vector<Field> dxF(static_cast<std::size_t>(g.dim()));
    for (int d = 0; d < g.dim(); ++d) dxF[static_cast<std::size_t>(d)] = spectral::derivative(F.mid, d);

    Field eik = minkowski_dot(du, du);
    Field r(g);
    const double il = 1.0 / lambda;
    for (std::size_t i = 0; i < r.size(); ++i) {
        // 2 d^a u d_a F = 2(-du_t dF_t + sum_i du_i dF_i)
        cplx transport = -du[0][i] * dtF[i];
        for (int d = 1; d < du.components(); ++d) transport += du[d][i] * dxF[static_cast<std::size_t>(d - 1)][i];
        transport *= 2.0;
        cplx inner = -il * il * eik[i] * F.mid[i] + cplx{0.0, il} * (transport + box_u[i] * F.mid[i]) + boxF[i];
        cplx phase = std::exp(cplx{0.0, u_mid[i].real() * il});
        r[i] = phase * inner;
    }
    r.require_finite("oscillatory_dalembert");
    return r;
}

} // namespace kgmo
