// Error-term evolution: decoupled transported amplitudes along resonant combined phases,
// the coupled wave/transport system for (E^evo, F+, G+) with frequency-projector routing,
// and the bootstrap, gauge and auxiliary-consistency monitors.
#ifndef KGMO_ERROR_EVOLUTION_HPP
#define KGMO_ERROR_EVOLUTION_HPP

#include <map>
#include <memory>

#include "kgmo/init_data.hpp"

namespace kgmo {

// Transported amplitudes along resonant combined phases; reads only the background.
class FabEvolver {
public:
    FabEvolver(const Grid& g, const std::vector<Phase>& phases, const InteractionTable& table);

    // advance across [step, step+1] given the bounding background slices
    void step(const BgSlice& bg0, const BgSlice& bg1, int step_index);
    const FabSlice& current() const { return cur_; }
    bool empty() const { return cur_.pair_a.empty(); }

    // worst polarization residual (d theta . W breve) over pairs at the current state
    double polarization_residual(int step_index) const;

private:
    Grid grid_;
    const std::vector<Phase>* phases_;
    InteractionTable table_;
    FabSlice cur_;
};

struct BootstrapFit {
    double c1 = 0.0, c2 = 0.0;
    double fit_residual = 0.0;
    double max_over_envelope = 0.0; // max of series / (c1 e^{c2 t})
    bool trivial = false;           // identically zero series
};

struct BootstrapMonitor {
    std::map<std::string, std::vector<std::pair<double, double>>> series; // family -> (t, bundle)
    std::map<std::string, BootstrapFit> fits;
};

BootstrapMonitor fit_bootstrap(const std::map<std::string, std::vector<std::pair<double, double>>>& series);

struct CoupledCheckpoint {
    int step = 0;
    double t = 0.0;
    std::map<std::string, double> values;
};

struct CoupledResult {
    bool completed = false;
    std::string abort_reason;
    double abort_time = 0.0;
    std::vector<CoupledCheckpoint> checkpoints;
    BootstrapMonitor bootstrap;
};

struct CoupledOptions {
    double T = 0.2;
    double kappa = 0.1;
    int checkpoint_stride = 0;     // 0: choose automatically
    double blowup_factor = 1e4;    // abort when a bundle exceeds this multiple of its start
    bool check_projector_split = false;
};

// One shared-dt loop advancing the background, the decoupled amplitudes and the coupled
// error parameters; plane-wave phase sets only (the transport/box commutator vanishes).
class CoupledEvolver {
public:
    CoupledEvolver(const BackgroundInitialData& bg, const ErrorParameterInit& init,
                   const InteractionTable& table, const CoupledOptions& opt);

    void run(CoupledResult& out);

    // single-step access for tests
    void step();
    int step_index() const { return step_; }
    const ErrorSlice& error_state() const { return err_; }
    const BgSlice& background_state() const { return bg_->current(); }
    const FabSlice& fab_state() const { return fab_->current(); }
    const std::vector<Phase>& phases() const { return phases_; }
    double lambda() const { return lambda_; }

    // G+ versus a discrete box of the stored F+ history (needs >= 2 steps taken)
    std::map<std::string, double> verify_auxiliary() const;
    // assembled error fields at the current step
    FullFields assembled_error() const;
    FullFields assembled_full() const;
    // d_a A_lambda^a and the polarization residuals of the W+ and W breve slots
    std::map<std::string, double> gauge_divergence() const;

private:
    struct RhsE {
        VecField A;
        Field Phi;
    };
    RhsE big_subtraction(const BgSlice& bg, int step, const FabSlice& fab, const ErrorSlice& err) const;
    EllField ell_at(const BgSlice& bg, int step) const;
    void record_checkpoint(CoupledResult& out);
    void check_health() const;

    Grid grid_;
    double lambda_ = 0.0, kappa_ = 0.1;
    CoupledOptions opt_;
    std::vector<Phase> phases_;
    InteractionTable table_;
    std::unique_ptr<BackgroundEvolver> bg_;
    std::unique_ptr<FabEvolver> fab_;
    ErrorSlice err_;
    int step_ = 0;
    double eta_floor_ = 0.0;
    // rings for discrete diagnostics
    std::vector<ErrorSlice> err_ring_;
    std::vector<BgSlice> bg_ring_;
    std::vector<FabSlice> fab_ring_;
    RhsE cached_rhs_;
    bool have_cached_rhs_ = false;
    std::map<std::string, double> start_bundles_;
    std::map<std::string, std::vector<std::pair<double, double>>> series_;
};

// Standalone decoupled evolution (reads only the background); returns per-checkpoint
// H^3 norms and polarization residuals of the transported amplitudes.
DiagnosticsTable evolve_fab(const BackgroundInitialData& bg, const InteractionTable& table, double T);

} // namespace kgmo

#endif
