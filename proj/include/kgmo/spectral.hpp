// Spectral derivatives, Sobolev norms, frequency projectors and the discrete d'Alembertian.
#ifndef KGMO_SPECTRAL_HPP
#define KGMO_SPECTRAL_HPP

#include <optional>

#include "kgmo/field.hpp"

namespace kgmo {

// Sobolev order s with an optional decay weight delta carried as metadata only; weighted
// norms are evaluated as unweighted ones on the periodic box.
struct NormSpec {
    double s = 0.0;
    std::optional<double> delta{};
};

namespace spectral {

// d/dx_axis, axis in [0, dim).
Field derivative(const Field& f, int axis);
Field laplacian(const Field& f);
// Inverse Laplacian with the zero mode removed: solves -lap(u) = f - mean(f), mean(u) = 0.
Field inv_neg_laplacian_meanzero(const Field& f);

// ( sum_xi (1+|xi|^2)^s |c_xi|^2 * V )^{1/2}; s=0 recovers the discrete L2 norm.
double sobolev_norm(const Field& f, const NormSpec& spec);
inline double sobolev_norm(const Field& f, double s) { return sobolev_norm(f, NormSpec{s, {}}); }
// Cell-volume weighted l2 of the samples, computed without any transform.
double l2_norm(const Field& f);

// Low-pass projector: zeroes modes with |xi| > lambda^{-kappa}. Requires 0 < kappa < 1/4.
Field project_low(const Field& f, double lambda, double kappa);
Field project_high(const Field& f, double lambda, double kappa);

// 2/3-rule dealiasing, applied only when a diagnostic flag asks for it.
Field dealias_two_thirds(const Field& f);

// Spatial gradient (components 1..dim of the result; component 0 left zero).
VecField spatial_gradient(const Field& f);
// div of the spatial components 1..dim.
Field spatial_divergence(const VecField& v);

} // namespace spectral

// Discrete box f = -d^2_t f + lap f(t) from three consecutive slices (signature -+++).
Field dalembert(const FieldHistory& h);
VecField dalembert(const VecFieldHistory& h);

// Fourth-order accurate second time derivative from five consecutive slices.
Field second_time_derivative_o4(const Field& m2, const Field& m1, const Field& c, const Field& p1,
                                const Field& p2, double dt);
// Fourth-order accurate first time derivative from five consecutive slices.
Field time_derivative_o4(const Field& m2, const Field& m1, const Field& p1, const Field& p2, double dt);

// box(e^{iu/lambda} F) by the exact cascade identity
//   e^{iu/lambda} ( -lambda^{-2} (du.du) F + i lambda^{-1} (2 d^a u d_a F + box u F) + box F ),
// with the phase never differentiated numerically. du is the covariant spacetime gradient of u,
// u_mid holds the phase samples at the middle slice.
Field oscillatory_dalembert(const FieldHistory& F, const Field& u_mid, const VecField& du,
                            const Field& box_u, double lambda);

} // namespace kgmo

#endif
