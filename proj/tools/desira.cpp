// desira: generate instances, solve them, run experiment sweeps.
//
// Exit codes: 0 success, 1 internal error, 2 invalid input or arguments,
// 3 solver hit max iterations without converging (outputs still written).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "desira/desira.hpp"

namespace fs = std::filesystem;
using namespace desira;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kNotConverged = 3;

struct GeneratorFlags {
    bool urban = false;
    bool constellation = false;
    int agents = 200;
    int stations = 20;
    std::uint64_t seed = 1;
    std::string config;
};

struct Globals {
    bool timing = false;
    unsigned jobs = 1;
    std::string out;
};

std::string output_dir(const Globals& g) {
    std::string dir = g.out;
    if (dir.empty()) {
        const char* env = std::getenv("DESIRA_OUT");
        dir = env != nullptr && *env != '\0' ? env : ".";
    }
    fs::create_directories(dir);
    return dir;
}

void add_generator_flags(CLI::App* cmd, GeneratorFlags& f) {
    cmd->add_flag("--urban", f.urban, "Urban EV fleet");
    cmd->add_flag("--constellation", f.constellation, "6 x 10 satellite constellation");
    cmd->add_option("--agents", f.agents, "Number of agents (urban)");
    cmd->add_option("--stations", f.stations, "Number of stations (urban)");
    cmd->add_option("--seed", f.seed, "Generator seed");
    cmd->add_option("--scenario-config", f.config, "Scenario config JSON (urban); flags override its keys");
}

ProblemInstance generate(const GeneratorFlags& f, CLI::App* cmd) {
    if (f.urban == f.constellation) throw InputError("choose exactly one of --urban or --constellation");
    if (f.constellation) {
        ConstellationConfig cc;
        cc.seed = f.seed;
        return generate_constellation(cc);
    }
    ScenarioConfig sc;
    if (!f.config.empty()) sc = scenario_config_from_json(read_json_file(f.config));
    if (f.config.empty() || cmd->count("--agents") > 0) sc.n_agents = f.agents;
    if (f.config.empty() || cmd->count("--stations") > 0) sc.n_stations = f.stations;
    if (f.config.empty() || cmd->count("--seed") > 0) sc.seed = f.seed;
    if (sc.n_agents < 1 || sc.n_stations < 1) throw InputError("--agents and --stations must be >= 1");
    return generate_urban(sc);
}

void print_validation(const ValidationReport& rep) {
    for (const auto& is : rep.issues) std::cout << "  " << is.location << "." << is.field << ": " << is.message << "\n";
}

std::vector<std::uint64_t> seed_list(int count, std::uint64_t first) {
    if (count < 1) throw InputError("--seeds must be >= 1");
    std::vector<std::uint64_t> s;
    for (int k = 0; k < count; ++k) s.push_back(first + static_cast<std::uint64_t>(k));
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Side-information-aware chance-constrained allocation via consensus ADMM"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals globals;
    app.add_flag("--timing", globals.timing, "Record wall-clock times (outputs then differ run to run)");
    app.add_option("--jobs", globals.jobs, "Worker threads for sweeps; results do not depend on it")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", globals.out, "Output directory (default $DESIRA_OUT or .)");

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic instance");
    GeneratorFlags gen_flags;
    std::string gen_file = "instance.json";
    add_generator_flags(gen, gen_flags);
    gen->add_option("--file", gen_file, "Instance file name inside the output directory");

    // solve
    auto* solve = app.add_subcommand("solve", "Solve an instance with one method");
    GeneratorFlags solve_gen;
    std::string instance_path;
    std::string method_str = "desira";
    std::string mode_str = "exact";
    std::string model_path;
    AdmmConfig admm;
    double tol = admm.tol_primal;
    double ridge = 1.0;
    std::uint64_t solve_seed = 42;
    solve->add_option("--instance", instance_path, "Instance JSON");
    add_generator_flags(solve, solve_gen);
    solve->add_option("--method", method_str, "centralized | desira | no_side_info | greedy");
    solve->add_option("--rho", admm.rho, "ADMM penalty");
    solve->add_option("--tol", tol, "Primal and dual tolerance");
    solve->add_option("--max-iters", admm.max_iters, "Iteration limit");
    solve->add_option("--mode", mode_str, "exact | gossip");
    solve->add_option("--gossip-rounds", admm.gossip_rounds, "Mixing rounds per iteration");
    solve->add_option("--dropout", admm.dropout_prob, "Drop probability of intermittent links");
    solve->add_option("--ridge", ridge, "Ridge penalty for the learned model");
    solve->add_option("--model", model_path, "Use this model JSON instead of fitting one");
    solve->add_option("--solver-seed", solve_seed, "Seed for greedy order, scenarios and link sampling");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Run an experiment sweep");
    std::string kind;
    std::string config_path;
    int n_seeds = 10;
    std::uint64_t first_seed = 1;
    std::vector<double> radii{0.1, 0.15, 0.2, 0.3};
    std::vector<int> sizes{50, 100, 200, 400};
    std::vector<double> noise{0.0, 0.1, 0.3, 0.5};
    int sweep_agents = 200;
    int sweep_stations = 20;
    std::string sweep_mode;
    sweep->add_option("kind", kind, "methods | radius | scaling | noise")->required();
    sweep->add_option("--config", config_path, "Sweep config JSON; flags override its keys");
    sweep->add_option("--seeds", n_seeds, "Number of seeds");
    sweep->add_option("--first-seed", first_seed, "First seed");
    sweep->add_option("--radii", radii, "Radii for the radius sweep")->delimiter(',');
    sweep->add_option("--sizes", sizes, "Fleet sizes for the scaling sweep")->delimiter(',');
    sweep->add_option("--noise", noise, "Forecast noise factors for the noise sweep")->delimiter(',');
    sweep->add_option("--agents", sweep_agents, "Agents per instance");
    sweep->add_option("--stations", sweep_stations, "Stations per instance");
    sweep->add_option("--mode", sweep_mode, "DESIRA projection in method and noise sweeps: exact | gossip");

    // validate
    auto* val = app.add_subcommand("validate", "Check an instance file");
    std::string validate_path;
    val->add_option("instance", validate_path, "Instance JSON")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*gen) {
            const auto inst = generate(gen_flags, gen);
            const auto path = (fs::path(output_dir(globals)) / gen_file).string();
            write_json_file(path, to_json(inst));
            std::cout << "wrote " << path << ": N=" << inst.n_agents() << " S=" << inst.n_stations()
                      << " mean_degree=" << (inst.graph ? inst.graph->mean_degree() : 0.0) << "\n";
            return kOk;
        }

        if (*val) {
            const auto inst = instance_from_json(read_json_file(validate_path));
            const auto rep = validate(inst);
            if (rep.ok()) {
                std::cout << validate_path << ": ok (N=" << inst.n_agents() << ", S=" << inst.n_stations() << ")\n";
                return kOk;
            }
            std::cout << validate_path << ": " << rep.issues.size() << " issue(s)\n";
            print_validation(rep);
            return kInvalid;
        }

        if (*solve) {
            const bool from_file = !instance_path.empty();
            const bool from_gen = solve_gen.urban || solve_gen.constellation;
            if (from_file == from_gen) throw InputError("give exactly one of --instance or a generator (--urban / --constellation)");
            const auto inst = from_file ? instance_from_json(read_json_file(instance_path)) : generate(solve_gen, solve);
            const auto rep = validate(inst);
            if (!rep.ok()) {
                std::cout << "invalid instance:\n";
                print_validation(rep);
                return kInvalid;
            }
            Method method{};
            if (!parse_method(method_str, method)) throw InputError("unknown method " + method_str);
            admm.mode = mode_from_string(mode_str);
            admm.tol_primal = admm.tol_dual = tol;
            admm.seed = solve_seed;
            if (admm.mode == ProjectionMode::gossip && !inst.graph) throw InputError("gossip mode needs a graph in the instance");
            const CommGraph* graph = inst.graph ? &*inst.graph : nullptr;
            const std::uint64_t sseed = splitmix64(solve_seed);

            Matrix allocation;
            SolveReport report;
            bool converged = true;
            switch (method) {
                case Method::centralized: {
                    if (inst.true_model.mean_coeffs.empty()) throw InputError("centralized needs true_model in the instance");
                    const double ctol = solve->count("--tol") > 0 ? tol : 1e-6;
                    const int citers = solve->count("--max-iters") > 0 ? admm.max_iters : 5000;
                    auto c = centralized_solve(inst, oracle_risk_inputs(inst, sseed), ctol, citers, admm.rho);
                    allocation = std::move(c.allocation);
                    report = std::move(c.report);
                    converged = report.converged;
                    std::cout << "kkt_gap=" << c.kkt_gap << (c.certified ? " (certified)" : " (not certified)") << "\n";
                    break;
                }
                case Method::desira: {
                    const auto model = model_path.empty() ? fit_model(inst.history, ridge)
                                                          : model_from_json(read_json_file(model_path));
                    auto r = run(inst, graph, admm, fitted_risk_inputs(inst, model, sseed));
                    allocation = std::move(r.state.a);
                    report = std::move(r.report);
                    converged = report.converged;
                    break;
                }
                case Method::no_side_info: {
                    if (inst.history.empty()) throw InputError("no_side_info needs a history in the instance");
                    auto r = no_side_info_solve(inst, graph, admm, sseed);
                    allocation = std::move(r.state.a);
                    report = std::move(r.report);
                    converged = report.converged;
                    break;
                }
                case Method::greedy: {
                    if (inst.history.empty()) throw InputError("greedy needs a history in the instance");
                    RngStream rng(solve_seed, 0x67726565ULL);
                    allocation = greedy_fcfs(inst, pooled_risk_inputs(inst, sseed).lower_bounds, rng);
                    report.converged = true;
                    const auto over = station_overflow(allocation, inst.capacities());
                    report.overflow = over.empty() ? 0.0 : *std::max_element(over.begin(), over.end());
                    break;
                }
            }
            const fs::path dir = output_dir(globals);
            write_json_file((dir / "allocation.json").string(), allocation_to_json(allocation));
            auto rj = to_json(report, globals.timing);
            rj["method"] = method_str;
            rj["total_cost"] = total_cost(inst, allocation);
            write_json_file((dir / "report.json").string(), rj);
            std::ostringstream csv;
            write_residual_csv(csv, report);
            write_text_file((dir / "residuals.csv").string(), csv.str());
            std::cout << method_str << ": iterations=" << report.iterations << " converged=" << (converged ? "yes" : "no")
                      << " overflow=" << report.overflow << " cost=" << rj["total_cost"].get<double>() << "\n";
            for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
            return converged ? kOk : kNotConverged;
        }

        if (*sweep) {
            HarnessConfig cfg;
            if (!config_path.empty()) cfg = harness_config_from_json(read_json_file(config_path));
            if (config_path.empty() || sweep->count("--agents") > 0) cfg.scenario.n_agents = sweep_agents;
            if (config_path.empty() || sweep->count("--stations") > 0) cfg.scenario.n_stations = sweep_stations;
            if (!sweep_mode.empty()) cfg.desira_mode = mode_from_string(sweep_mode);
            cfg.timing = globals.timing;
            cfg.jobs = globals.jobs;
            const auto seeds = seed_list(n_seeds, first_seed);

            std::vector<EvalReport> rows;
            const char* param = "R";
            bool by_n = false;
            if (kind == "methods") {
                rows = sweep_methods(cfg, seeds);
            } else if (kind == "radius") {
                rows = sweep_radius(cfg, radii, seeds);
            } else if (kind == "scaling") {
                if (!globals.timing) std::cerr << "note: --timing is off, sec_per_iter is written as 0\n";
                rows = sweep_scaling(cfg, sizes, seeds);
                param = "N";
                by_n = true;
            } else if (kind == "noise") {
                rows = sweep_noise(cfg, noise, seeds);
                param = "noise";
            } else {
                std::cerr << "unknown sweep kind '" << kind << "' (expected methods, radius, scaling, noise)\n";
                return kInvalid;
            }
            const fs::path dir = output_dir(globals);
            std::ostringstream csv;
            write_csv(csv, rows);
            write_text_file((dir / ("sweep_" + kind + ".csv")).string(), csv.str());
            const auto summary = summarize(rows, by_n);
            json j = {{"kind", kind}, {"config", to_json(cfg)}, {"seeds", seeds}, {"summary", summary_to_json(summary, param)}};
            write_json_file((dir / ("sweep_" + kind + ".json")).string(), j);
            for (const auto& s : summary) {
                std::cout << s.group << " " << param << "=" << s.param << "  cost " << s.cost_ratio.mean << " +- "
                          << s.cost_ratio.std << "  failure " << 100.0 * s.failure.mean << "% +- "
                          << 100.0 * s.failure.std << "  iters " << s.iters.mean << "\n";
            }
            return kOk;
        }
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInvalid;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kOk;
}
