// Scenario presets, sweep orchestration, slope fitting and run reports: the CLI surface.
#ifndef KGMO_HARNESS_HPP
#define KGMO_HARNESS_HPP

#include "kgmo/config.hpp"
#include "kgmo/error_evolution.hpp"

namespace kgmo {

// ---- slope fitting ---------------------------------------------------------------

struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// least squares on (log lambda, log value); throws on nonpositive values
FitResult fit_slope(const std::vector<double>& lambdas, const std::vector<double>& values);

struct SweepMetric {
    std::vector<double> lambdas, values;
    FitResult fit;
    double expected = 0.0, window = 0.0;
    bool checked = false; // whether a pass window applies
    bool pass = true;
};

// ---- scenarios -------------------------------------------------------------------

std::vector<std::string> scenario_names();
// applies the named preset to a default config; throws on unknown names
ExperimentConfig scenario_config(const std::string& name);

// background data and phases from a configuration
BackgroundInitialData background_from_config(const ExperimentConfig& cfg);

// ---- run pipeline ----------------------------------------------------------------

struct LedgerRow {
    double lambda = 0.0; // 0 marks lambda-independent background rows
    double t = 0.0;
    std::string metric;
    double value = 0.0;
};

struct RunReport {
    bool pass = false;
    std::string first_failure;
    std::map<std::string, double> scalars;           // eta0, caustics, neutralization, ...
    std::map<std::string, SweepMetric> sweeps;       // fitted metrics
    std::vector<LedgerRow> ledger;
    std::map<std::string, std::string> notes;
};

// Full pipeline: phases -> background -> initial data -> parametrix diagnostics ->
// optional coupled error evolution, per lambda; fits the sweep metrics and writes
// ledger.csv plus summary.json under cfg.out.
RunReport run_experiment(const ExperimentConfig& cfg);

// constraint checks only (background admissibility and one error-data assembly)
RunReport check_constraints(const ExperimentConfig& cfg);

// ---- io --------------------------------------------------------------------------

void write_snapshot(const std::string& stem, const Field& f, const std::string& name, double time);
Field read_snapshot(const std::string& stem, const Grid& expected_grid);
void write_ledger_csv(const std::string& path, const std::vector<LedgerRow>& rows);
void write_summary_json(const std::string& path, const RunReport& report);

} // namespace kgmo

#endif
