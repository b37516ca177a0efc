// Periodic cubic (Catmull-Rom) interpolation, tensor product across axes.
#ifndef KGMO_INTERP_HPP
#define KGMO_INTERP_HPP

#include <array>
#include <cmath>

#include "kgmo/field.hpp"

namespace kgmo {

namespace detail {

inline cplx catmull_rom(cplx fm1, cplx f0, cplx f1, cplx f2, double t) {
    return 0.5 * ((2.0 * f0) + (-fm1 + f1) * t + (2.0 * fm1 - 5.0 * f0 + 4.0 * f1 - f2) * (t * t) +
                  (-fm1 + 3.0 * f0 - 3.0 * f1 + f2) * (t * t * t));
}

} // namespace detail

// Evaluate f at an arbitrary point x (wrapped periodically into the box).
inline cplx interp_periodic(const Field& f, const std::array<double, 3>& x) {
    const Grid& g = f.grid();
    const int n = g.n();
    const double dx = g.dx();
    const int dim = g.dim();

    std::array<int, 3> base{0, 0, 0};
    std::array<double, 3> frac{0.0, 0.0, 0.0};
    for (int d = 0; d < dim; ++d) {
        double s = (x[d] + 0.5 * g.length()) / dx;
        double fl = std::floor(s);
        base[d] = static_cast<int>(fl);
        frac[d] = s - fl;
    }
    auto wrap = [n](int i) { return ((i % n) + n) % n; };

    if (dim == 1) {
        auto at = [&](int i) { return f[static_cast<std::size_t>(wrap(i))]; };
        return detail::catmull_rom(at(base[0] - 1), at(base[0]), at(base[0] + 1), at(base[0] + 2), frac[0]);
    }
    if (dim == 2) {
        auto at = [&](int i, int j) {
            return f[static_cast<std::size_t>(wrap(i)) * n + static_cast<std::size_t>(wrap(j))];
        };
        cplx rows[4];
        for (int a = -1; a <= 2; ++a)
            rows[a + 1] = detail::catmull_rom(at(base[0] + a, base[1] - 1), at(base[0] + a, base[1]),
                                              at(base[0] + a, base[1] + 1), at(base[0] + a, base[1] + 2), frac[1]);
        return detail::catmull_rom(rows[0], rows[1], rows[2], rows[3], frac[0]);
    }
    auto at = [&](int i, int j, int k) {
        return f[(static_cast<std::size_t>(wrap(i)) * n + static_cast<std::size_t>(wrap(j))) * n +
                 static_cast<std::size_t>(wrap(k))];
    };
    cplx planes[4];
    for (int a = -1; a <= 2; ++a) {
        cplx rows[4];
        for (int b = -1; b <= 2; ++b)
            rows[b + 1] = detail::catmull_rom(at(base[0] + a, base[1] + b, base[2] - 1),
                                              at(base[0] + a, base[1] + b, base[2]),
                                              at(base[0] + a, base[1] + b, base[2] + 1),
                                              at(base[0] + a, base[1] + b, base[2] + 2), frac[2]);
        planes[a + 1] = detail::catmull_rom(rows[0], rows[1], rows[2], rows[3], frac[1]);
    }
    return detail::catmull_rom(planes[0], planes[1], planes[2], planes[3], frac[0]);
}

} // namespace kgmo

#endif
