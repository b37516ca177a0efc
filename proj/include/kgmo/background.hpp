// Background cascade: admissibility checks, the coupled wave/transport solver for
// (A0, Phi0, Psi_A, W_A), streaming evolution and diagnostics.
#ifndef KGMO_BACKGROUND_HPP
#define KGMO_BACKGROUND_HPP

#include <array>
#include <map>
#include <string>
#include <vector>

#include "kgmo/phase.hpp"

namespace kgmo {

struct SolverAbort : std::runtime_error {
    explicit SolverAbort(const std::string& m) : std::runtime_error("solver abort: " + m) {}
};

struct BackgroundInitialData {
    Grid grid;
    VecField a0, a0dot;           // electromagnetic potential and its time derivative, real
    Field phi0, phi0dot;          // wave function
    std::vector<Field> psi;       // first-order Klein-Gordon amplitudes, one per phase
    std::vector<VecField> w;      // first-order potential amplitudes w = p + i q, one per phase
    std::vector<EikonalData> eikonal;
    double support_radius = 0.0;  // S': declared ball containing every compact slot
    bool dealias = false;         // 2/3-rule on the wave right sides (diagnostic flag)

    static BackgroundInitialData zero(const Grid& g, const std::vector<EikonalData>& eik);
};

struct ConstraintReport {
    bool pass = false;
    double maxwell = 0.0;       // L2 of the Maxwell-with-backreaction constraint residual
    double lorenz = 0.0;        // L2 of adot^0 + div a
    double eikonal = 0.0;       // worst per-phase eikonal residual (max norm)
    double polarization = 0.0;  // worst per-phase L2 of d_i v w^i + vdot w^0
    double scale = 1.0;         // field scale used for the relative pass decision
    std::string detail;
};

ConstraintReport check_background_constraints(const BackgroundInitialData& d, double tol);

// One time level of the background with its velocities.
struct BgSlice {
    VecField A, Adot;
    Field Phi, Phidot;
    std::vector<Field> Psi;
    std::vector<VecField> W;
};

// Five consecutive slices centered on a checkpoint (for honest discrete operators).
struct CheckpointWindow {
    int center_step = 0;
    std::array<BgSlice, 5> s;
    const BgSlice& center() const { return s[2]; }
};

struct BackgroundState {
    Grid grid;
    std::vector<Phase> phases;
    double T = 0.0;
    int n_steps = 0;
    BgSlice initial;
    std::vector<CheckpointWindow> windows;
};

// Streaming integrator: velocity-form leapfrog with one fixed-point velocity correction
// for the two wave equations, classical RK4 with mid-step wave fields for the transports.
class BackgroundEvolver {
public:
    BackgroundEvolver(const BackgroundInitialData& d, std::vector<Phase> phases);

    void step();
    const BgSlice& current() const { return cur_; }
    const std::vector<Phase>& phases() const { return phases_; }
    const Grid& grid() const { return grid_; }
    int step_index() const { return step_; }
    double time() const { return step_ * grid_.dt(); }
    double support_radius0() const { return support0_; }

    // wave accelerations of the current slice (equation right sides, used by jets)
    VecField wave_acc_A(const BgSlice& s, int step) const;
    Field wave_acc_Phi(const BgSlice& s) const;

private:
    void check_health(const BgSlice& s) const;
    Grid grid_;
    std::vector<Phase> phases_;
    BgSlice cur_;
    int step_ = 0;
    double support0_ = 0.0;
    bool dealias_ = false;
};

// Runs the evolver to time T, collecting five-slice windows every `stride` steps
// (and around the final step).
BackgroundState evolve_background(const BackgroundInitialData& d, double T, int stride = 0);

// Equation-derived time derivatives of a background slice (plane-wave phases required
// for the second-order entries; first-order entries work for traced phases too).
struct BgFrame {
    VecField Addot;               // from the Maxwell wave equation
    Field Phiddot;                // from the Klein-Gordon wave equation
    std::vector<Field> Psidot, Psiddot;
    std::vector<VecField> Wdot, Wddot;
};
BgFrame background_frame(const Grid& g, const BgSlice& s, const std::vector<Phase>& phases, int step,
                         bool need_second_derivatives);

// Transport-equation time derivative of one amplitude: dt f = (rhs - 2 d^i u d_i f - box u f)/(2 d^0 u).
Field transport_time_derivative(const Field& f, const Field& rhs, const VecField& dcov_u, const Field& box_u);

struct DiagnosticsRow {
    double t = 0.0;
    std::map<std::string, double> values;
};
struct DiagnosticsTable {
    std::vector<DiagnosticsRow> rows;
    std::map<std::string, double> summary;
};

// Per-checkpoint norms: polarization, Lorenz gauge, charge transport, the five
// null-transport equation residuals, Maxwell-defect vs flux, conserved charges.
DiagnosticsTable background_diagnostics(const BackgroundState& s);

// Compactly supported mollifier bump of the given radius and amplitude.
Field bump(const Grid& g, const std::array<double, 3>& center, double radius, double amplitude);

// Smallest sup-norm radius containing all but `tail_fraction` of the squared mass.
// Sharp frequency projectors and spectral tails are nonlocal, so supports are always
// effective supports here.
double support_radius(const Field& f, double tail_fraction = 1e-6);

} // namespace kgmo

#endif
