// Command line front end for constructing, evolving and verifying multi-phase high-frequency
// Klein-Gordon-Maxwell solutions on the periodic box.
#include <cstdio>

#include <CLI11.hpp>

#include "kgmo/harness.hpp"

namespace {

void print_report(const kgmo::RunReport& rep) {
    for (const auto& [k, v] : rep.scalars) std::printf("  %-42s %.6g\n", k.c_str(), v);
    for (const auto& [name, m] : rep.sweeps) {
        std::printf("  slope %-28s %+.4f (R^2 %.4f)%s\n", name.c_str(), m.fit.slope, m.fit.r2,
                    m.checked ? (m.pass ? "  [pass]" : "  [FAIL]") : "");
    }
    if (rep.pass)
        std::printf("overall: PASS\n");
    else
        std::printf("overall: FAIL (%s)\n", rep.first_failure.c_str());
}

void apply_overrides(kgmo::ExperimentConfig& cfg, int grid_n, int dim, double kappa, double tol,
                     int workers, const std::string& out, const std::vector<double>& lambdas) {
    if (grid_n > 0) cfg.n = grid_n;
    if (dim > 0) cfg.dim = dim;
    if (kappa > 0) cfg.kappa = kappa;
    if (tol > 0) cfg.tol = tol;
    if (workers > 0) cfg.workers = workers;
    if (!out.empty()) cfg.out = out;
    if (!lambdas.empty()) cfg.lambdas = lambdas;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-phase geometric-optics solver for Klein-Gordon-Maxwell in Lorenz gauge"};
    app.require_subcommand(1);

    std::string config_path, scenario_name, out_dir;
    int grid_n = 0, dim = 0, workers = 0;
    double kappa = 0.0, tol = 0.0;
    std::vector<double> lambdas;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--grid", grid_n, "points per axis (power of two)");
        sub->add_option("--dim", dim, "dimension 1, 2 or 3")->check(CLI::Range(1, 3));
        sub->add_option("--kappa", kappa, "frequency projector exponent in (0, 1/4)");
        sub->add_option("--tol", tol, "constraint tolerance");
        sub->add_option("--workers", workers, "concurrent lambda instances");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--lambda", lambdas, "lambda values (strictly decreasing)");
    };

    auto* run = app.add_subcommand("run", "run the full pipeline from a config file");
    run->add_option("config", config_path, "config file")->required();
    add_common(run);

    auto* sweep = app.add_subcommand("sweep", "run a lambda sweep with slope fits (needs >= 3 lambdas)");
    sweep->add_option("config", config_path, "config file")->required();
    add_common(sweep);

    auto* chk = app.add_subcommand("check-constraints", "validate background and error-data constraints");
    chk->add_option("config", config_path, "config file")->required();
    add_common(chk);

    auto* scen = app.add_subcommand("scenario", "run a named scenario preset");
    scen->add_option("name", scenario_name, "preset name")->required();
    add_common(scen);

    auto* list = app.add_subcommand("scenarios", "list scenario presets");

    CLI11_PARSE(app, argc, argv);

    try {
        if (list->parsed()) {
            for (const auto& n : kgmo::scenario_names()) std::printf("%s\n", n.c_str());
            return 0;
        }
        kgmo::ExperimentConfig cfg;
        if (scen->parsed()) {
            cfg = kgmo::scenario_config(scenario_name);
        } else {
            cfg = kgmo::load_config(config_path); // a scenario key seeds the preset first
        }
        apply_overrides(cfg, grid_n, dim, kappa, tol, workers, out_dir, lambdas);

        if (chk->parsed()) {
            auto rep = kgmo::check_constraints(cfg);
            print_report(rep);
            return rep.pass ? 0 : 1;
        }
        if (sweep->parsed()) cfg.validate_for_sweep();
        auto rep = kgmo::run_experiment(cfg);
        print_report(rep);
        std::printf("ledger: %s/ledger.csv\nsummary: %s/summary.json\n", cfg.out.c_str(), cfg.out.c_str());
        return rep.pass ? 0 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
