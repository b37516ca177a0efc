#include "kgmo/elliptic.hpp"

#include <cmath>

#include "kgmo/fft.hpp"
#include "kgmo/spectral.hpp"

namespace kgmo {

namespace {

Field apply_operator(const Field& g, const Field& x) {
    Field r = spectral::laplacian(x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = -r[i] + g[i] * x[i];
    return r;
}

// Spectral inverse of (-lap + gbar), gbar a positive constant.
Field precondition(double gbar, const Field& r) {
    const Grid& gr = r.grid();
    Field z = r;
    fft::forward(gr, z.data());
    const int n = gr.n();
    const int dim = gr.dim();
    for (std::size_t flat = 0; flat < z.size(); ++flat) {
        std::size_t rem = flat;
        double k2 = 0.0;
        for (int d = dim - 1; d >= 0; --d) {
            int i = static_cast<int>(rem % n);
            rem /= n;
            double xi = gr.wavenumber(gr.mode(i));
            k2 += xi * xi;
        }
        z[flat] /= (k2 + gbar);
    }
    fft::inverse(gr, z.data());
    return z;
}

} // namespace

EllipticResult solve_perturbed_laplacian(const Field& g, const Field& h, double tol, int max_iter) {
    g.require_finite("perturbed laplacian coefficient");
    h.require_finite("perturbed laplacian source");
    for (std::size_t i = 0; i < g.size(); ++i)
        if (g[i].real() < -1e-14 || std::abs(g[i].imag()) > 1e-12)
            throw EllipticError("coefficient g must be real and nonnegative");

    const double hnorm = spectral::l2_norm(h);
    double gbar = mean(g).real();

    EllipticResult out;
    if (gbar <= 1e-14) {
        // pure Laplacian: only solvable against mean-zero sources
        double m = std::abs(mean(h));
        if (m > tol * std::max(hnorm, 1e-300) && m > 1e-14)
            throw NeutralityError("g == 0 requires a mean-zero source");
        out.f = spectral::inv_neg_laplacian_meanzero(h);
        Field res = apply_operator(g, out.f);
        res -= h;
        // the projected-out mean is not part of the residual
        cplx mres = mean(res);
        for (std::size_t i = 0; i < res.size(); ++i) res[i] -= mres;
        out.relative_residual = spectral::l2_norm(res) / std::max(hnorm, 1e-300);
        return out;
    }

    if (hnorm == 0.0) {
        out.f = Field(h.grid());
        return out;
    }

    Field x(h.grid());
    Field r = h; // r = h - A x with x = 0
    Field z = precondition(gbar, r);
    Field p = z;
    cplx rz = inner(r, z);
    for (int it = 0; it < max_iter; ++it) {
        Field Ap = apply_operator(g, p);
        cplx alpha = rz / inner(p, Ap);
        axpy(x, alpha, p);
        axpy(r, -alpha, Ap);
        double rel = spectral::l2_norm(r) / hnorm;
        if (rel <= tol) {
            out.f = x;
            out.iterations = it + 1;
            out.relative_residual = rel;
            return out;
        }
        Field z2 = precondition(gbar, r);
        cplx rz2 = inner(r, z2);
        cplx beta = rz2 / rz;
        rz = rz2;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] = z2[i] + beta * p[i];
    }
    throw EllipticError("conjugate gradients did not converge within max iterations");
}

} // namespace kgmo
