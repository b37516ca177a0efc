// Experiment configuration: a flat key-value text format with nested tables,
// parsed fail-closed (unknown keys are errors).
#ifndef KGMO_CONFIG_HPP
#define KGMO_CONFIG_HPP

#include <string>
#include <vector>

#include "kgmo/grid.hpp"

namespace kgmo {

struct ExperimentConfig {
    std::string scenario;           // optional preset name applied before overrides

    // [grid]
    int dim = 1;
    int n = 512;
    double length = 6.283185307179586;
    double cfl = 0.25;

    // [phases]
    std::vector<std::vector<double>> plane;  // plane-wave vectors
    std::vector<std::string> files;          // eikonal snapshot files (v then vdot planes)

    // [background]
    std::vector<double> psi_amplitude;
    std::vector<double> w_amplitude;
    double phi_amplitude = 0.0;
    double phi_rotation = 0.0;      // spatially modulated charge rotation of phi0dot
    double bump_radius = 1.0;
    double support_radius = 1.8;

    // [error]
    bool error_evolution = false;
    double error_amplitude = 0.2;
    unsigned seed = 12345;

    // [run]
    double T = 0.4;
    std::vector<double> lambdas{0.1, 0.05, 0.025, 0.0125};
    double kappa = 0.1;
    double tol = 1e-8;
    int workers = 1;
    std::string out = "out";
    int checkpoint_stride = 0;
    int snapshot_stride = 0;   // 0: no snapshots
    bool dealias = false;

    // [gates]
    double slope_window = 0.1;
    double r2_min = 0.98;

    Grid grid() const { return Grid(dim, n, length, cfl); }
    void validate_for_sweep() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

} // namespace kgmo

#endif
