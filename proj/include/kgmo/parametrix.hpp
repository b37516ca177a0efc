// First-order WKB assembly, KGML residual evaluation and decomposition, the cascade
// cancellation ledger, and assembly of the full solution parametrix.
#ifndef KGMO_PARAMETRIX_HPP
#define KGMO_PARAMETRIX_HPP

#include "kgmo/interaction.hpp"

namespace kgmo {

// First-order expansion at three consecutive time levels.
struct FirstOrderExpansion {
    double lambda = 0.0;
    int center_step = 0;
    VecFieldHistory A;
    FieldHistory Phi;
};

// Exact pointwise assembly from a background checkpoint window (the three central slices).
FirstOrderExpansion assemble_first_order(const CheckpointWindow& w, const std::vector<Phase>& phases,
                                         double lambda);

// Single-slice assembly helpers (oscillatory factors evaluated analytically).
VecField first_order_A(const BgSlice& s, const std::vector<Phase>& phases, int step, double lambda);
Field first_order_Phi(const BgSlice& s, const std::vector<Phase>& phases, int step, double lambda);

struct ResidualReport {
    VecField RA;   // Maxwell slot residual fields
    Field RPhi;    // Klein-Gordon slot
    Field RL;      // gauge slot d_a A^a
    double norm_RA = 0.0, norm_RPhi = 0.0, norm_RL = 0.0;
};

// Literal-field residual: discrete box (three slices) and centered time derivatives.
// Suitable for non-oscillatory or grid-resolved inputs.
ResidualReport residual_kgml(const VecFieldHistory& A, const FieldHistory& Phi);

// Structured residual of the first-order expansion: smooth parts discrete, oscillatory
// parts through the cascade identity, so no wavelength ever has to be resolved.
ResidualReport residual_first_order(const CheckpointWindow& w, const std::vector<Phase>& phases,
                                    double lambda);

struct DecomposedResidual {
    double xi_tilde = 0.0;    // L2 of the reconstructed O(1) interaction part (both slots)
    double remainder = 0.0;   // L2 of residual minus reconstruction (both slots)
    double gauge = 0.0;       // L2 of R_L
};
DecomposedResidual residual_decompose(const ResidualReport& rep, const InteractionTerms& terms,
                                      const std::vector<Phase>& phases, double lambda,
                                      double xi_scale = 1.0);

// Term-by-term cancellation slots of the plug-in identities at a checkpoint:
// lambda^{-3/2} (eikonal), lambda^{-1/2} (transport), O(1) non-oscillating (wave).
struct CascadeLedger {
    double eikonal_slot = 0.0;
    double transport_slot = 0.0;
    double wave_slot = 0.0;
    double largest_surviving = 0.0; // norm of the O(1) interaction reconstruction
};
CascadeLedger cascade_ledger(const CheckpointWindow& w, const std::vector<Phase>& phases);

// Charge flux J^b = -Im(Phi conj(d^b Phi)) + A^b |Phi|^2 of literal field histories,
// and the total charge integral of J^0.
VecField charge_flux(const VecFieldHistory& A, const FieldHistory& Phi);
double total_charge(const VecFieldHistory& A, const FieldHistory& Phi);
// Integral of |J^0|, the natural scale for charge-drift measurements (the signed total
// vanishes on the torus whenever the Maxwell constraint holds).
double total_abs_charge(const VecFieldHistory& A, const FieldHistory& Phi);

// ---- full parametrix -------------------------------------------------------------

// Coupled error parameters at one time level (velocities carried for the wave slots).
struct ErrorSlice {
    VecField Eevo, EevoDot;
    Field EevoPhi, EevoPhiDot;
    std::vector<VecField> Wplus;   // per phase
    std::vector<Field> Psiplus;
    std::vector<VecField> GW;      // auxiliary box W+
    std::vector<Field> GPsi;
};

// Decoupled transported amplitudes along resonant combined phases, per resonant pair.
struct FabSlice {
    std::vector<VecField> W_sum, W_diff;       // Maxwell amplitudes at u_A+u_B and u_A-u_B
    std::vector<Field> Psi_pp, Psi_pm, Psi_mp; // KG amplitudes at +(A+B), +(A-B), -(A-B)
    std::vector<int> pair_a, pair_b;           // phase indices per entry
};

ErrorSlice zero_error_slice(const Grid& g, std::size_t n_phases);
FabSlice zero_fab_slice(const Grid& g, const InteractionTable& table);

// Full fields A_lambda, Phi_lambda = first order + error pieces + E^ell at one time level.
struct FullFields {
    VecField A;
    Field Phi;
};
FullFields assemble_full(const BgSlice& bg, const ErrorSlice& err, const FabSlice& fab,
                         const EllField& ell, const std::vector<Phase>& phases, int step,
                         double lambda);

// The error term Z alone (assembled full minus first order), same pieces without background.
FullFields assemble_error(const ErrorSlice& err, const FabSlice& fab, const EllField& ell,
                          const std::vector<Phase>& phases, int step, double lambda);

} // namespace kgmo

#endif
