// Cross-phase O(1) interaction coefficients along combined phases u_A +- u_B,
// and the elliptic inversion E^ell of the separated-pair part.
#ifndef KGMO_INTERACTION_HPP
#define KGMO_INTERACTION_HPP

#include "kgmo/background.hpp"

namespace kgmo {

// Coefficients of the O(1) oscillating part of the KGML residual of the first-order
// expansion, in complex-exponential form. For the pair {A < B}:
//   Maxwell slot: k_diff^b e^{i(u_A-u_B)/lambda} + conj, the sum-phase coefficient vanishes
//   structurally (no harmonic is generated there).
//   Klein-Gordon slot: c_pp e^{i(u_A+u_B)/lambda} + c_pm e^{i(u_A-u_B)/lambda}
//                      + c_mp e^{-i(u_A-u_B)/lambda}.
struct PairInteraction {
    int a = 0, b = 0;
    PairClass cls = PairClass::Separated;
    VecField k_diff;
    Field c_pp, c_pm, c_mp;
};

struct InteractionTerms {
    int step = 0;
    std::vector<PairInteraction> pairs;
};

InteractionTerms interaction_terms(const BgSlice& s, const std::vector<Phase>& phases,
                                   const InteractionTable& table, int step);

// Pointwise reconstruction of the O(1) interaction fields at the given lambda.
// `which` selects all pairs, only resonant, or only separated ones.
enum class PairFilter { All, Resonant, Separated };
VecField reconstruct_xi_maxwell(const InteractionTerms& t, const std::vector<Phase>& phases,
                                double lambda, PairFilter which = PairFilter::All);
Field reconstruct_xi_kg(const InteractionTerms& t, const std::vector<Phase>& phases, double lambda,
                        PairFilter which = PairFilter::All);

struct EllField {
    VecField A;  // real-valued slot
    Field Phi;   // complex slot
};

// E^ell = lambda^2 sum_{separated combos} e^{i theta/lambda} coef / (d theta . d theta).
// Aborts if any denominator falls below eta_floor (use eta0/2).
EllField build_E_ell(const InteractionTerms& t, const std::vector<Phase>& phases, int step,
                     double lambda, double eta_floor);

// box E^ell + Xi_separated, evaluated by the cascade identity with discrete coefficient
// histories from three consecutive background slices. This is the inversion defect field.
EllField e_ell_defect(const BgSlice& sm, const BgSlice& s0, const BgSlice& sp,
                      const std::vector<Phase>& phases, const InteractionTable& table, int step,
                      double lambda, double eta_floor);

} // namespace kgmo

#endif
