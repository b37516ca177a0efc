// Inversion of the perturbed Laplacian -lap + g on the periodic box.
#ifndef KGMO_ELLIPTIC_HPP
#define KGMO_ELLIPTIC_HPP

#include "kgmo/field.hpp"

namespace kgmo {

struct EllipticResult {
    Field f;
    int iterations = 0;
    double relative_residual = 0.0;
};

struct EllipticError : std::runtime_error {
    explicit EllipticError(const std::string& m) : std::runtime_error("elliptic solve: " + m) {}
};
struct NeutralityError : std::runtime_error {
    explicit NeutralityError(const std::string& m) : std::runtime_error("neutrality: " + m) {}
};

// Solves (-lap + g) f = h with g >= 0 by conjugate gradients preconditioned with the
// spectral inverse of (-lap + mean(g)). When g vanishes identically, h must be mean-zero
// and the mean-zero spectral pseudo-inverse is returned directly.
EllipticResult solve_perturbed_laplacian(const Field& g, const Field& h, double tol, int max_iter = 500);

} // namespace kgmo

#endif
