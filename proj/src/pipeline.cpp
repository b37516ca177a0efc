#include <filesystem>
#include <thread>

#include "kgmo/harness.hpp"

namespace kgmo {

namespace {

struct LambdaResult {
    double lambda = 0.0;
    bool ok = false;
    std::string failure;
    std::map<std::string, double> scalars;
    std::vector<LedgerRow> rows;
};

// per-lambda work: initial data, parametrix diagnostics, optional coupled evolution
LambdaResult run_lambda(const ExperimentConfig& cfg, double lambda, const BackgroundInitialData& bgdata,
                        const std::vector<Phase>& phases, const InteractionTable& table,
                        const BackgroundState& bgstate, double eta) {
    LambdaResult out;
    out.lambda = lambda;
    const Grid& g = bgdata.grid;
    try {
        // ---- error initial data ----
        auto free = make_free_error_data(g, lambda, cfg.error_amplitude, cfg.seed);
        double mu = neutralize_free_error_data(free, bgdata, phases);
        out.scalars["neutralization_mu"] = mu;
        auto data = assemble_error_initial(free, bgdata, phases, table, 1e-12);
        out.rows.push_back({lambda, 0.0, "constraint_residual", data.constraint_residual});
        out.rows.push_back({lambda, 0.0, "gauge_residual_init", data.gauge_residual});
        if (data.constraint_residual > cfg.tol)
            throw SolverAbort("error-data constraint residual above tolerance");
        auto init = split_parameters(data, bgdata, phases, table, cfg.kappa);
        out.rows.push_back({lambda, 0.0, "reassembly_error", init.reassembly_error});
        out.rows.push_back({lambda, 0.0, "bundle_init_evo", init.smallness.evo_bundle});
        out.rows.push_back({lambda, 0.0, "bundle_init_fplus", init.smallness.fplus_bundle});
        out.rows.push_back({lambda, 0.0, "bundle_init_ell", init.smallness.ell_bundle});
        out.rows.push_back({lambda, 0.0, "bundle_init_z0", init.smallness.z0_bundle});
        if (init.reassembly_error > 1e-12)
            throw SolverAbort("parametrix reassembly identity violated");

        // ---- first-order residual decomposition at the checkpoint windows ----
        for (const auto& w : bgstate.windows) {
            double t = w.center_step * g.dt();
            auto rep = residual_first_order(w, phases, lambda);
            auto terms = interaction_terms(w.center(), phases, table, w.center_step);
            auto dec = residual_decompose(rep, terms, phases, lambda);
            out.rows.push_back({lambda, t, "remainder", dec.remainder});
            out.rows.push_back({lambda, t, "xi_tilde", dec.xi_tilde});
            out.rows.push_back({lambda, t, "gauge_first_order", dec.gauge});

            bool has_separated = false;
            for (const auto& p : table.pairs)
                if (p.cls == PairClass::Separated) has_separated = true;
            if (has_separated) {
                auto ell = build_E_ell(terms, phases, w.center_step, lambda, eta / 2.0);
                double n2 = std::pow(spectral::l2_norm(ell.Phi), 2);
                for (int b = 0; b <= g.dim(); ++b) n2 += std::pow(spectral::l2_norm(ell.A[b]), 2);
                out.rows.push_back({lambda, t, "ell_norm", std::sqrt(n2)});
                auto defect =
                    e_ell_defect(w.s[1], w.s[2], w.s[3], phases, table, w.center_step, lambda, eta / 2.0);
                double d2 = std::pow(spectral::l2_norm(defect.Phi), 2);
                for (int b = 0; b <= g.dim(); ++b) d2 += std::pow(spectral::l2_norm(defect.A[b]), 2);
                out.rows.push_back({lambda, t, "ell_defect", std::sqrt(d2)});
            }
            // convergence of the full assembly toward the limit potential
            {
                VecField A1 = first_order_A(w.center(), phases, w.center_step, lambda);
                double dev = 0.0;
                for (int b = 0; b <= g.dim(); ++b) {
                    Field diffb = A1[b] - w.center().A[b];
                    dev += std::pow(spectral::l2_norm(diffb), 2);
                }
                out.rows.push_back({lambda, t, "first_order_deviation", std::sqrt(dev)});
            }
        }

        // ---- coupled error evolution ----
        bool all_plane = true;
        for (const auto& e : bgdata.eikonal)
            if (!e.plane_k) all_plane = false;
        if (cfg.error_evolution && all_plane) {
            CoupledOptions opt;
            opt.T = cfg.T;
            opt.kappa = cfg.kappa;
            opt.checkpoint_stride = cfg.checkpoint_stride;
            CoupledEvolver ev(bgdata, init, table, opt);
            CoupledResult res;
            ev.run(res);
            if (!res.completed) throw SolverAbort("coupled evolution: " + res.abort_reason);
            for (const auto& cpt : res.checkpoints)
                for (const auto& [k, v] : cpt.values) out.rows.push_back({lambda, cpt.t, k, v});
            // values at t* = T/2 for the sweep fits
            const CoupledCheckpoint* mid = &res.checkpoints.front();
            for (const auto& cpt : res.checkpoints)
                if (std::abs(cpt.t - cfg.T / 2) < std::abs(mid->t - cfg.T / 2)) mid = &cpt;
            for (const char* m : {"z_l2", "z_h12", "z_h1"})
                out.scalars[std::string(m) + "_tstar"] = mid->values.at(m);
            for (const auto& [fam, fit] : res.bootstrap.fits) {
                if (fit.trivial) continue;
                out.scalars["c1_" + fam] = fit.c1;
                out.scalars["c2_" + fam] = fit.c2;
                out.scalars["envelope_" + fam] = fit.max_over_envelope;
            }
            // worst auxiliary-consistency and charge drift over the run
            double aux = 0.0, q0 = 0.0, qdrift = 0.0, qscale = 0.0;
            bool have_q0 = false;
            for (const auto& cpt : res.checkpoints) {
                for (const auto& [k, v] : cpt.values)
                    if (k.rfind("aux_", 0) == 0) aux = std::max(aux, v);
                auto it = cpt.values.find("total_charge");
                if (it != cpt.values.end()) {
                    if (!have_q0) {
                        q0 = it->second;
                        qscale = std::max(std::abs(q0), cpt.values.at("total_abs_charge"));
                        have_q0 = true;
                    } else {
                        qdrift = std::max(qdrift, std::abs(it->second - q0));
                    }
                }
            }
            out.scalars["aux_worst"] = aux;
            if (have_q0 && qscale > 0.0) out.scalars["charge_drift_rel"] = qdrift / qscale;
        }
        out.ok = true;
    } catch (const std::exception& e) {
        out.ok = false;
        out.failure = std::string(e.what()) + " (lambda = " + std::to_string(lambda) + ")";
    }
    return out;
}

void add_sweep(RunReport& rep, const std::string& name, const std::vector<double>& lams,
               const std::vector<double>& vals, double expected, double window, bool checked) {
    if (lams.size() < 3 || vals.size() != lams.size()) return;
    SweepMetric m;
    m.lambdas = lams;
    m.values = vals;
    bool positive = true;
    for (double v : vals)
        if (!(v > 0.0)) positive = false;
    if (!positive) return;
    m.fit = fit_slope(lams, vals);
    m.expected = expected;
    m.window = window;
    m.checked = checked;
    if (checked) m.pass = std::abs(m.fit.slope - expected) <= window;
    rep.sweeps[name] = m;
}

} // namespace

RunReport check_constraints(const ExperimentConfig& cfg) {
    RunReport rep;
    auto bgdata = background_from_config(cfg);
    auto crep = check_background_constraints(bgdata, cfg.tol);
    rep.scalars["bg_maxwell_residual"] = crep.maxwell;
    rep.scalars["bg_lorenz_residual"] = crep.lorenz;
    rep.scalars["bg_eikonal_residual"] = crep.eikonal;
    rep.scalars["bg_polarization_residual"] = crep.polarization;
    rep.notes["background_constraints"] = crep.detail;
    if (!crep.pass) {
        rep.pass = false;
        rep.first_failure = "background constraints";
        return rep;
    }
    std::vector<Phase> phases;
    for (const auto& e : bgdata.eikonal) phases.push_back(trace_phase(e, cfg.T));
    auto table = build_interaction_table(phases, 1e-6);
    if (!table.coherent()) {
        rep.pass = false;
        rep.first_failure = "phase coherence";
        return rep;
    }
    double lambda = cfg.lambdas.front();
    auto free = make_free_error_data(bgdata.grid, lambda, cfg.error_amplitude, cfg.seed);
    neutralize_free_error_data(free, bgdata, phases);
    auto data = assemble_error_initial(free, bgdata, phases, table, 1e-12);
    rep.scalars["error_constraint_residual"] = data.constraint_residual;
    rep.scalars["error_gauge_residual"] = data.gauge_residual;
    rep.pass = data.constraint_residual <= cfg.tol;
    if (!rep.pass) rep.first_failure = "error-data constraints";
    return rep;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
    RunReport rep;
    try {
        Grid g = cfg.grid();
        auto bgdata = background_from_config(cfg);
        bgdata.dealias = cfg.dealias;

        // ---- phases and coherence ----
        std::vector<Phase> phases;
        for (const auto& e : bgdata.eikonal) {
            auto vrep = validate_eikonal_data(e, std::max(cfg.tol, 1e-6));
            if (!vrep.pass) throw ConfigError("eikonal data rejected: " + vrep.detail);
            phases.push_back(trace_phase(e, cfg.T + 3.0 * g.dt()));
        }
        for (std::size_t a = 0; a < phases.size(); ++a)
            if (auto c = phases[a].caustic_time())
                rep.scalars["caustic_time_" + std::to_string(a)] = *c;
        InteractionTable table = build_interaction_table(phases, 1e-6);
        if (!table.coherent()) throw ConfigError("phase set is incoherent: classification failed");
        for (const auto& p : table.pairs) {
            std::string tag = std::to_string(p.a) + std::to_string(p.b);
            rep.scalars["pair_" + tag + "_class"] =
                p.cls == PairClass::Resonant ? 1.0 : (p.cls == PairClass::Separated ? 2.0 : 0.0);
            if (p.anti_parallel) rep.notes["pair_" + tag] = "anti-parallel (flagged)";
        }
        double eta = eta0(phases, table, cfg.T);
        rep.scalars["eta0"] = eta;

        // ---- background ----
        auto crep = check_background_constraints(bgdata, cfg.tol);
        rep.notes["background_constraints"] = crep.detail;
        if (!crep.pass) throw SolverAbort("background constraints rejected: " + crep.detail);
        auto bgstate = evolve_background(bgdata, cfg.T, cfg.checkpoint_stride);
        auto diag = background_diagnostics(bgstate);
        for (const auto& row : diag.rows)
            for (const auto& [k, v] : row.values) rep.ledger.push_back({0.0, row.t, k, v});
        for (const auto& [k, v] : diag.summary) rep.scalars[k] = v;

        // cascade cancellation ledger (lambda-free)
        if (!bgstate.windows.empty()) {
            auto led = cascade_ledger(bgstate.windows.back(), phases);
            rep.scalars["cascade_eikonal_slot"] = led.eikonal_slot;
            rep.scalars["cascade_transport_slot"] = led.transport_slot;
            rep.scalars["cascade_wave_slot"] = led.wave_slot;
            rep.scalars["cascade_largest_surviving"] = led.largest_surviving;
        }

        // ---- per-lambda work, optionally in parallel ----
        std::vector<LambdaResult> results(cfg.lambdas.size());
        int workers = std::max(1, std::min<int>(cfg.workers, static_cast<int>(cfg.lambdas.size())));
        if (workers == 1) {
            for (std::size_t i = 0; i < cfg.lambdas.size(); ++i)
                results[i] = run_lambda(cfg, cfg.lambdas[i], bgdata, phases, table, bgstate, eta);
        } else {
            std::vector<std::thread> pool;
            std::size_t next = 0;
            std::mutex mu;
            for (int wkr = 0; wkr < workers; ++wkr) {
                pool.emplace_back([&]() {
                    for (;;) {
                        std::size_t i;
                        {
                            std::lock_guard<std::mutex> lock(mu);
                            if (next >= cfg.lambdas.size()) return;
                            i = next++;
                        }
                        results[i] = run_lambda(cfg, cfg.lambdas[i], bgdata, phases, table, bgstate, eta);
                    }
                });
            }
            for (auto& th : pool) th.join();
        }
        for (const auto& r : results) {
            if (!r.ok) throw SolverAbort("stage failed: " + r.failure);
            for (const auto& row : r.rows) rep.ledger.push_back(row);
            for (const auto& [k, v] : r.scalars)
                rep.scalars[k + "_lambda_" + std::to_string(r.lambda)] = v;
        }

        // ---- sweep fits ----
        if (cfg.lambdas.size() >= 3) {
            auto series_at_last_t = [&](const std::string& metric) {
                std::vector<double> vals;
                for (double lam : cfg.lambdas) {
                    double best_t = -1.0, val = 0.0;
                    for (const auto& row : rep.ledger)
                        if (row.metric == metric && row.lambda == lam && row.t >= best_t) {
                            best_t = row.t;
                            val = row.value;
                        }
                    if (best_t >= 0.0) vals.push_back(val);
                }
                return vals;
            };
            auto w = cfg.slope_window;
            add_sweep(rep, "remainder", cfg.lambdas, series_at_last_t("remainder"), 0.5, w, true);
            add_sweep(rep, "gauge_first_order", cfg.lambdas, series_at_last_t("gauge_first_order"), 0.5,
                      w, true);
            add_sweep(rep, "xi_tilde", cfg.lambdas, series_at_last_t("xi_tilde"), 0.0, w, false);
            add_sweep(rep, "ell_norm", cfg.lambdas, series_at_last_t("ell_norm"), 2.0, 2.0 * w, true);
            add_sweep(rep, "ell_defect", cfg.lambdas, series_at_last_t("ell_defect"), 1.0, 2.0 * w, true);
            add_sweep(rep, "first_order_deviation", cfg.lambdas, series_at_last_t("first_order_deviation"),
                      0.5, w, true);
            add_sweep(rep, "bundle_init_evo", cfg.lambdas, series_at_last_t("bundle_init_evo"), 0.5,
                      2.0 * w, false);
            if (cfg.error_evolution) {
                auto scalar_series = [&](const std::string& name) {
                    std::vector<double> vals;
                    for (double lam : cfg.lambdas) {
                        auto it = rep.scalars.find(name + "_lambda_" + std::to_string(lam));
                        if (it != rep.scalars.end()) vals.push_back(it->second);
                    }
                    return vals;
                };
                add_sweep(rep, "z_l2_tstar", cfg.lambdas, scalar_series("z_l2_tstar"), 0.5, 0.15, true);
                add_sweep(rep, "z_h12_tstar", cfg.lambdas, scalar_series("z_h12_tstar"), 0.5, 0.15, true);
                add_sweep(rep, "z_h1_tstar", cfg.lambdas, scalar_series("z_h1_tstar"), 0.0, 0.15, true);
            }
        }

        // ---- gates ----
        rep.pass = true;
        for (const auto& [name, m] : rep.sweeps) {
            if (!m.checked) continue;
            if (!m.pass && rep.pass) {
                rep.pass = false;
                rep.first_failure = "slope window: " + name;
            }
            if (m.fit.r2 < cfg.r2_min && rep.pass) {
                rep.pass = false;
                rep.first_failure = "fit quality: " + name;
            }
        }
    } catch (const std::exception& e) {
        rep.pass = false;
        rep.first_failure = e.what();
    }

    // ---- outputs ----
    if (!cfg.out.empty()) {
        std::filesystem::create_directories(cfg.out);
        write_ledger_csv(cfg.out + "/ledger.csv", rep.ledger);
        write_summary_json(cfg.out + "/summary.json", rep);
    }
    return rep;
}

} // namespace kgmo
