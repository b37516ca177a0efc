// Characteristic phases: eikonal validation, ray tracing with caustic detection,
// pairwise coherence classification and the eta0 lower bounds.
#ifndef KGMO_PHASE_HPP
#define KGMO_PHASE_HPP

#include <optional>
#include <string>
#include <vector>

#include "kgmo/field.hpp"
#include "kgmo/spectral.hpp"

namespace kgmo {

// Initial phase data: v(x) = klin.x + v_periodic(x), vdot(x) sampled.
// Plane-wave data carry the analytic tag and skip sampling entirely.
struct EikonalData {
    Grid grid;
    std::vector<double> klin;            // linear part of v, size dim (zero for fully periodic data)
    Field v_periodic;                    // periodic remainder of v
    Field vdot;                          // initial time derivative, must be < 0
    std::optional<std::vector<double>> plane_k{}; // analytic tag: v = k.x, vdot = -|k|

    static EikonalData plane(const Grid& g, const std::vector<double>& k);
    // Build eikonal data from a sampled phase v = klin.x + v_periodic, with vdot = -|grad v|
    // (the future-directed branch).
    static EikonalData from_phase(const Grid& g, const std::vector<double>& klin, const Field& v_periodic);
};

struct EikonalReport {
    bool pass = false;
    double eikonal_residual = 0.0;  // max |vdot^2 - |grad v|^2|
    double min_grad = 0.0;          // min |grad v|
    double max_vdot = 0.0;          // max vdot (must be < 0)
    std::string detail;
};

EikonalReport validate_eikonal_data(const EikonalData& d, double tol);

// A traced characteristic phase sampled at solver steps (dt from the grid), or an exact
// plane wave. Covariant gradients are stored; raise indices with the -+++ metric.
class Phase {
public:
    static Phase plane_wave(const Grid& g, const std::vector<double>& k, int n_steps);

    bool is_plane() const { return plane_; }
    const std::vector<double>& wavevector() const { return k_; }
    const Grid& grid() const { return grid_; }
    int steps() const { return n_steps_; }
    double t_of(int step) const { return step * grid_.dt(); }
    std::optional<double> caustic_time() const { return caustic_; }

    // Phase samples u(t_step, x), including the non-periodic linear part.
    Field u_values(int step) const;
    // Covariant spacetime gradient (d_t u, d_i u).
    VecField dcov(int step) const;
    // d_t of the covariant gradient through the geodesic identity
    // d_t d_a u = -(d^j u d_j d_a u) / d^0 u; identically zero for plane waves.
    VecField dcov_dt(int step) const;
    Field box_u(int step) const;
    // Linear (mean) spatial gradient of u; exact for plane waves.
    const std::vector<double>& klin() const { return k_; }

    friend Phase trace_phase(const EikonalData& d, double T);

private:
    Phase() = default;
    Grid grid_;
    bool plane_ = false;
    std::vector<double> k_;          // plane wavevector, or linear part for traced phases
    int n_steps_ = 0;
    std::optional<double> caustic_{};
    // traced storage, one entry per step
    std::vector<Field> u_periodic_;
    std::vector<VecField> dcov_;
    std::vector<Field> box_;
};

// Construct the future-directed characteristic phase from eikonal data by the
// representation formula along rays chi(y,t) = y + t grad v/|grad v|. Truncates at the
// first time the ray-map Jacobian determinant falls below 0.1.
Phase trace_phase(const EikonalData& d, double T);

enum class PairClass { Resonant, Separated, Incoherent };

struct PairEntry {
    int a = 0, b = 0;
    PairClass cls = PairClass::Incoherent;
    double min_abs_dot = 0.0; // min over grid x time of |du_A . du_B|
    double max_abs_dot = 0.0;
    bool anti_parallel = false; // spatial gradients everywhere opposed (possible in 1d)
};

struct InteractionTable {
    std::vector<PairEntry> pairs;
    double tol = 1e-6;
    bool coherent() const {
        for (const auto& p : pairs)
            if (p.cls == PairClass::Incoherent) return false;
        return true;
    }
    const PairEntry& entry(int a, int b) const;
};

PairClass classify_pair(const Phase& ua, const Phase& ub, double tol, PairEntry* details = nullptr);

// Pairwise classification of a whole phase set; enforces the no-identical-gradients rule.
InteractionTable build_interaction_table(const std::vector<Phase>& phases, double tol);

// Minimum over the five lower-bound quantities, evaluated over grid x sampled times in [0,T].
double eta0(const std::vector<Phase>& phases, const InteractionTable& table, double T);

// Combined phase theta = sa*u_A + sb*u_B used for interaction terms and transported amplitudes.
struct CombinedPhase {
    const Phase* pa = nullptr;
    const Phase* pb = nullptr;
    int sa = 1, sb = 1;

    Field u_values(int step) const;
    VecField dcov(int step) const;
    Field box_u(int step) const;
};

// e^{i u / lambda} evaluated from real phase samples.
Field oscillation(const Field& u, double lambda);

} // namespace kgmo

#endif
