#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "config.hpp"
#include "errors.hpp"
#include "synthesis.hpp"
#include "verify.hpp"

namespace fraclqr::cli {

enum ExitCode : int { ok = 0, invariant_failure = 1, config_error = 2 };

/// Config plus everything derived from it before any heavy numerics.
struct Resolved {
    RunConfig config;
    AdmissibilityConstants constants;
    TimeGrid grid;
    bool timestamp = true;
    bool admissible = true;

    SynthesisOptions synthesis_options() const {
        SynthesisOptions o;
        o.mu = constants.mu;
        o.allow_outside_contraction = config.allow_outside_contraction;
        o.drift_rule = config.drift_rule;
        return o;
    }
};

/**
 * Horizon from the config or, when absent, the default max(10/lambda, 8/mu, 4 delta + 1)
 * stretched so that delta falls on a node of the n-cell grid.
 */
inline TimeGrid resolve_grid(const RunConfig& c, double mu, int granularity = 1) {
    const LqModel& m = c.model;
    if (c.horizon) {
        TimeGrid g(*c.horizon, c.n);
        g.delay_steps(m.delta);
        return g;
    }
    const double T0 = default_horizon(m, mu);
    if (m.delta == 0.0) return TimeGrid(T0, c.n);
    int steps = static_cast<int>(std::floor(c.n * m.delta / T0));
    if (steps >= granularity) steps -= steps % granularity;
    if (steps < 1)
        throw GridError("grid.n = " + std::to_string(c.n) + " is too coarse to resolve delay " +
                        std::to_string(m.delta) + " on horizon " + std::to_string(T0));
    return TimeGrid(c.n * m.delta / steps, c.n);
}

/**
 * With `granularity` g the delay spans a multiple of g cells when the grid allows it. Runs that
 * never synthesize a law (need_law = false) accept inadmissible models and fall back to mu = lambda/2.
 */
inline Resolved resolve(const RunConfig& c, int granularity = 1, bool need_law = true) {
    validate(c.model);
    Resolved r{c, {}, {}, true, true};
    try {
        r.constants = admissibility(c.model, c.mu, c.allow_outside_contraction);
    } catch (const AdmissibilityError&) {
        if (need_law) throw;
        r.constants = admissibility(c.model, c.mu, true);
        r.admissible = false;
    }
    r.grid = resolve_grid(c, r.constants.mu, granularity);
    r.config.horizon = r.grid.horizon;
    return r;
}

// Resolved config minus the output directory, which does not affect any value written.
inline std::string provenance_config(const RunConfig& c) {
    nlohmann::json j = to_json(c);
    j["run"].erase("outputs");
    return j.dump();
}

inline void add_provenance(CsvWriter& csv, const Resolved& r) {
    csv.note("config=" + provenance_config(r.config));
    const auto& k = r.constants;
    csv.note("constants rho_alpha=" + fmt17(k.rho_alpha) + " rho_tilde_alpha=" +
             fmt17(k.rho_tilde_alpha) + " mu=" + fmt17(k.mu) + " K_lambda=" +
             fmt17(k_constant(r.config.model)) +
             " allow_outside_contraction=" + (r.config.allow_outside_contraction ? "1" : "0") +
             " admissible=" + (r.admissible ? "1" : "0"));
    if (r.timestamp) csv.note("generated=" + utc_timestamp());
}

inline std::filesystem::path output_dir(const Resolved& r) {
    std::filesystem::path dir(r.config.outputs);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void emit(CsvWriter& csv, const Resolved& r, const std::string& name) {
    add_provenance(csv, r);
    csv.write(output_dir(r) / name);
}

inline int cmd_synthesize(const Resolved& r) {
    const FeedbackLaw law = synthesize(r.config.model, r.grid, r.synthesis_options());
    CsvWriter phi({"t", "phi"});
    for (int i = 0; i <= r.grid.n; ++i) phi.row(std::vector<double>{r.grid.t(i), law.phi_nodes.values[i]});
    emit(phi, r, "law_phi.csv");
    CsvWriter psi({"t", "psi"});
    for (int j = 0; j < r.grid.n; ++j) psi.row(std::vector<double>{r.grid.mid(j), law.psi_mid.values[j]});
    emit(psi, r, "law_psi.csv");
    CsvWriter k({"name", "value"});
    auto put = [&k](const char* name, double v) { k.row(std::vector<std::string>{name, fmt17(v)}); };
    put("rho_alpha", law.constants.rho_alpha);
    put("rho_tilde_alpha", law.constants.rho_tilde_alpha);
    put("mu", law.constants.mu);
    put("K_lambda", law.k_const);
    put("gain", law.gain);
    put("kernel_norm_estimate", law.kernel->norm_estimate());
    put("phi_fie_residual", law.phi_residual);
    put("psi_fie_residual", law.psi_residual);
    emit(k, r, "constants.csv");
    std::cout << "synthesized on n=" << r.grid.n << " T=" << r.grid.horizon
              << ": K_lambda=" << fmt17(law.k_const) << " phi(0)=" << fmt17(law.phi_nodes.values[0])
              << " mu=" << fmt17(law.constants.mu) << "\n";
    return ok;
}

inline int cmd_simulate(const Resolved& r) {
    const RunConfig& c = r.config;
    const TimeGrid& g = r.grid;
    std::optional<FeedbackLaw> law;
    if (c.control == "optimal") law = synthesize(c.model, g, r.synthesis_options());
    const FracWeights fw(c.model.alpha, g, c.drift_rule);
    struct Triple {
        SamplePath x, u, v;
    };
    auto paths = map_paths<Triple>(g, c.n_paths, c.base_seed, [&](int, const BrownianPath& w) {
        if (law) {
            OptimalPaths p = optimal_paths(*law, w, &fw);
            return Triple{std::move(p.x_hat), std::move(p.u_hat), std::move(p.v_hat)};
        }
        SamplePath u = SamplePath::zeros(g, PathKind::control);
        SamplePath x = simulate_frac_sdde(c.model, u, w, &fw);
        SamplePath v = transform_T(c.model, u, x);
        return Triple{std::move(x), std::move(u), std::move(v)};
    });
    CsvWriter csv({"path", "seed", "t", "x", "u", "v"});
    for (int p = 0; p < c.n_paths; ++p)
        for (int i = 0; i <= g.n; ++i)
            csv.row(std::vector<std::string>{std::to_string(p), std::to_string(c.base_seed + p),
                                             fmt17(g.t(i)), fmt17(paths[p].x.values[i]),
                                             fmt17(paths[p].u.values[i]), fmt17(paths[p].v.values[i])});
    emit(csv, r, "paths.csv");
    std::cout << "simulated " << c.n_paths << " paths (" << c.control << " control)\n";
    return ok;
}

inline int cmd_cost(const Resolved& r) {
    const RunConfig& c = r.config;
    if (c.n_paths < 2) throw ConfigError("cost needs run.n_paths >= 2");
    CostEstimate est;
    if (c.control == "optimal") {
        const FeedbackLaw law = synthesize(c.model, r.grid, r.synthesis_options());
        est = cost_estimate(c.model, std::cref(law), r.grid, c.n_paths, c.base_seed);
    } else {
        est = cost_estimate(c.model, zero_control(r.grid), r.grid, c.n_paths, c.base_seed,
                            c.drift_rule);
    }
    CsvWriter csv({"control", "mean", "std_error", "truncation_bound", "n_paths", "seed"});
    csv.row(std::vector<std::string>{c.control, fmt17(est.mean), fmt17(est.std_error),
                                     fmt17(est.horizon_truncation_bound), std::to_string(est.n_paths),
                                     std::to_string(c.base_seed)});
    emit(csv, r, "cost.csv");
    std::cout << "J(" << c.control << ") = " << fmt17(est.mean) << " +- " << fmt17(est.std_error)
              << " (tail bound " << fmt17(est.horizon_truncation_bound) << ")\n";
    return ok;
}

/// Refinement study, optimality residuals and cost dominance; exit 0 iff every check passes.
inline int cmd_verify(const Resolved& r) {
    const RunConfig& c = r.config;
    const LqModel& m = c.model;
    const SynthesisOptions opt = r.synthesis_options();
    std::vector<int> cells;
    for (int l = c.verify.levels - 1; l >= 0; --l) {
        if (c.n % (1 << l) != 0) throw ConfigError("grid.n must be divisible by 2^(levels - 1)");
        const TimeGrid g(r.grid.horizon, c.n >> l);
        g.delay_steps(m.delta);
        cells.push_back(c.n >> l);
    }

    CsvWriter checks({"check", "value", "threshold", "pass"});
    bool all = true;
    auto check = [&](const std::string& name, double value, double threshold, bool pass) {
        checks.row(std::vector<std::string>{name, fmt17(value), fmt17(threshold), pass ? "1" : "0"});
        std::cout << (pass ? "PASS " : "FAIL ") << name << " = " << value << " (threshold "
                  << threshold << ")\n";
        all = all && pass;
    };

    const RefinementStudy study = refinement_study(m, r.grid.horizon, cells, c.n_paths, c.base_seed, opt);
    CsvWriter levels({"residual", "h", "sup", "l2"});
    for (const ResidualReport* rep : {&study.sfie, &study.oc1}) {
        for (std::size_t k = 0; k < rep->per_refinement.size(); ++k)
            levels.row(std::vector<std::string>{rep->name, fmt17(rep->per_refinement[k].first),
                                                fmt17(rep->per_refinement[k].second),
                                                fmt17(rep->per_refinement_l2[k].second)});
        check(rep->name + "_sup", rep->sup_residual, std::numeric_limits<double>::infinity(),
              std::isfinite(rep->sup_residual));
        const bool monotone = strictly_decreasing(rep->per_refinement) && strictly_decreasing(rep->per_refinement_l2);
        check(rep->name + "_monotone", monotone ? 1.0 : 0.0, 1.0, monotone);
        if (rep->per_refinement.size() >= 2)
            check(rep->name + "_order", rep->fitted_order, m.alpha - 0.2, rep->fitted_order >= m.alpha - 0.2);
    }
    levels.note("tail_bound sfie=" + fmt17(study.sfie.tail_bound) + " oc1=" + fmt17(study.oc1.tail_bound));
    emit(levels, r, "refinement.csv");

    const FeedbackLaw law = synthesize(m, r.grid, opt);
    std::vector<BrownianPath> paths;
    for (int k = 0; k < c.n_paths; ++k) paths.push_back(sample_brownian(r.grid, c.base_seed + k));
    const OptimalityReports opt_rep = optimality_residuals(law, paths);
    if (m.b == 0.0)
        check("oc0_oc1_gap", opt_rep.oc0_oc1_gap, 1e-12, opt_rep.oc0_oc1_gap <= 1e-12);
    else
        check("oc0_oc1_gap", opt_rep.oc0_oc1_gap, opt_rep.oc1.sup_residual,
              opt_rep.oc0_oc1_gap <= opt_rep.oc1.sup_residual);
    check("adjoint_sup", opt_rep.adjoint.sup_residual, opt_rep.oc1.sup_residual,
          opt_rep.adjoint.sup_residual <= opt_rep.oc1.sup_residual);

    if (c.verify.perturbations > 0) {
        if (c.n_paths < 2) throw ConfigError("cost dominance needs run.n_paths >= 2");
        const DominanceReport dom =
            cost_dominance(law, c.verify.perturbations, c.verify.epsilons, c.n_paths, c.base_seed);
        CsvWriter d({"center", "width", "curvature", "slope", "slope_se", "min_delta_j_over_se"});
        for (const auto& p : dom.perturbations) {
            double worst = std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < p.delta_j.size(); ++e)
                worst = std::min(worst, p.delta_se[e] > 0 ? p.delta_j[e] / p.delta_se[e]
                                                          : std::numeric_limits<double>::infinity());
            d.row(std::vector<double>{p.center, p.width, p.curvature, p.slope, p.slope_se, worst});
        }
        emit(d, r, "dominance.csv");
        check("dominance_convex", dom.all_convex ? 1.0 : 0.0, 1.0, dom.all_convex);
        check("dominance_nonnegative", dom.all_nonnegative ? 1.0 : 0.0, 1.0, dom.all_nonnegative);
        const double need = std::ceil(0.9 * c.verify.perturbations);
        check("dominance_slope_passes", dom.slope_passes, need, dom.slope_passes >= need);
    }
    emit(checks, r, "verify.csv");
    return all ? ok : invariant_failure;
}

inline double& model_field(LqModel& m, const std::string& name) {
    if (name == "x0") return m.x0;
    if (name == "b") return m.b;
    if (name == "c") return m.c;
    if (name == "sigma") return m.sigma;
    if (name == "gamma") return m.gamma;
    if (name == "alpha") return m.alpha;
    if (name == "delta") return m.delta;
    if (name == "lambda") return m.lambda;
    throw ConfigError("key 'run.sweep.parameter': unknown model field '" + name + "'");
}

/// One summary row per parameter value; values that fail admissibility are reported, not fatal.
inline int cmd_sweep(const Resolved& base) {
    const RunConfig& c = base.config;
    {
        LqModel probe = c.model;
        model_field(probe, c.sweep.parameter);
    }
    CsvWriter csv({c.sweep.parameter, "status", "rho_alpha", "rho_tilde_alpha", "mu", "K_lambda",
                   "horizon", "phi0", "cost_mean", "cost_se"});
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (double v : c.sweep.values) {
        RunConfig rc = c;
        model_field(rc.model, c.sweep.parameter) = v;
        if (!c.horizon) rc.horizon.reset();
        std::vector<double> row(8, nan);
        std::string status = "ok";
        try {
            const Resolved r = resolve(rc);
            const FeedbackLaw law = synthesize(rc.model, r.grid, r.synthesis_options());
            const CostEstimate est =
                cost_estimate(rc.model, std::cref(law), r.grid, std::max(2, rc.n_paths), rc.base_seed);
            row = {law.constants.rho_alpha, law.constants.rho_tilde_alpha, law.constants.mu, law.k_const,
                   r.grid.horizon, law.phi_nodes.values[0], est.mean, est.std_error};
        } catch (const ModelError&) {
            status = "invalid_model";
        } catch (const AdmissibilityError&) {
            status = "inadmissible";
        } catch (const GridError&) {
            status = "grid_error";
        } catch (const Error&) {
            status = "numerical_failure";
        }
        std::vector<std::string> cells{fmt17(v), status};
        for (double x : row) cells.push_back(fmt17(x));
        csv.row(cells);
        std::cout << c.sweep.parameter << "=" << v << ": " << status << "\n";
    }
    csv.note("config=" + provenance_config(c));
    csv.note("constants per row");
    if (base.timestamp) csv.note("generated=" + utc_timestamp());
    std::filesystem::path dir(c.outputs);
    std::filesystem::create_directories(dir);
    csv.write(dir / "sweep.csv");
    return ok;
}

/// Command-line entry point. Exit status: 0 success, 1 invariant failure, 2 config error.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Discounted LQ regulator for fractional stochastic delay equations"};
    app.require_subcommand(1);
    std::string config_path, out_dir, control;
    std::optional<std::uint64_t> seed;
    std::optional<int> n_paths, grid_n;
    std::optional<double> horizon;
    bool no_timestamp = false;
    const char* names[] = {"synthesize", "simulate", "cost", "verify", "sweep"};
    for (const char* name : names) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "JSON run config")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "base seed");
        sub->add_option("--paths", n_paths, "number of Monte Carlo paths");
        sub->add_option("--grid-n", grid_n, "number of grid cells");
        sub->add_option("--horizon", horizon, "truncation horizon T");
        sub->add_flag("--no-timestamp", no_timestamp, "omit the timestamp line from CSV outputs");
        if (std::string(name) == "simulate" || std::string(name) == "cost")
            sub->add_option("--control", control, "optimal or zero")
                ->check(CLI::IsMember({"optimal", "zero"}));
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : config_error;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        RunConfig c = load_config(config_path);
        if (!out_dir.empty()) c.outputs = out_dir;
        if (seed) c.base_seed = *seed;
        if (n_paths) c.n_paths = *n_paths;
        if (grid_n) c.n = *grid_n;
        if (horizon) c.horizon = *horizon;
        if (!control.empty()) c.control = control;
        if (c.n < 2) throw ConfigError("--grid-n: need at least 2 cells");
        if (c.n_paths < 1) throw ConfigError("--paths: need at least 1 path");
        if (cmd == "sweep") {
            Resolved base{c, {}, {}, !no_timestamp};
            return cmd_sweep(base);
        }
        const bool need_law = !((cmd == "simulate" || cmd == "cost") && c.control == "zero");
        Resolved r = resolve(c, cmd == "verify" ? 1 << std::max(0, c.verify.levels - 1) : 1, need_law);
        r.timestamp = !no_timestamp;
        if (cmd == "synthesize") return cmd_synthesize(r);
        if (cmd == "simulate") return cmd_simulate(r);
        if (cmd == "cost") return cmd_cost(r);
        return cmd_verify(r);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return config_error;
    } catch (const ModelError& e) {
        std::cerr << "model error: " << e.what() << "\n";
        return config_error;
    } catch (const AdmissibilityError& e) {
        std::cerr << "admissibility error: " << e.what() << "\n";
        return config_error;
    } catch (const GridError& e) {
        std::cerr << "grid error: " << e.what() << "\n";
        return config_error;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invariant_failure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return invariant_failure;
    }
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"fraclqr"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace fraclqr::cli
