// emodel: simulate, integrate, score and check event models from JSON configs.

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "emodel/io.hpp"
#include "emodel/validation.hpp"

namespace {

using namespace emodel;

constexpr int kOk = 0;
constexpr int kValidationFailed = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

struct SimulateArgs {
    std::string config, out;
    std::optional<std::size_t> trajectories;
    std::optional<std::uint64_t> seed;
    std::optional<double> t_max, step;
    bool snapshots = false;
    std::size_t workers = 0;
};

struct LindbladArgs {
    std::string config, out;
    std::optional<double> t_max, step;
    std::vector<double> probes;
};

struct LikelihoodArgs {
    std::string config, history, out;
};

struct ValidateArgs {
    std::string config;
    std::optional<std::size_t> trajectories;
    double tol = 0.05;
    std::size_t workers = 0;
};

struct StatsArgs {
    std::string events, out;
};

// Command-line overrides become part of the configuration, and of its hash.
void refresh_hash(ParsedConfig& p) { p.hash = config_hash(p.config); }

int simulate(const SimulateArgs& a) {
    auto p = parse_config(a.config);
    auto& run = p.config.run;
    if (a.trajectories) run.trajectories = *a.trajectories;
    if (a.seed) run.seed = *a.seed;
    if (a.t_max) run.t_max = *a.t_max;
    if (a.step) run.step = *a.step;
    if (a.snapshots) run.snapshot_states = true;
    if (run.trajectories == 0) throw ConfigError("--trajectories must be at least 1");
    if (!(run.step > 0.0)) throw ConfigError("--step must be positive");
    if (!(run.t_max >= run.t0)) throw ConfigError("--t-max must not precede t0");
    refresh_hash(p);

    EnsembleOptions e;
    e.workers = a.workers;
    const auto summary = run_ensemble(p.model, p.initial, run.trajectories, p.run_options(), run.seed, e);
    const EventLogHeader header{p.hash, run.seed, run.trajectories, run.t0, run.t_max};
    const auto lines = write_event_log(summary.runs, header, std::filesystem::path(a.out));

    std::size_t budget_hits = 0;
    for (const auto& tr : summary.runs) budget_hits += tr.terminated_by == Termination::event_budget ? 1 : 0;
    std::cout << "trajectories " << run.trajectories << "\nevents " << lines << "\nbudget_terminated " << budget_hits
              << "\nconfig_hash " << p.hash << "\n";
    return kOk;
}

int lindblad(const LindbladArgs& a) {
    auto p = parse_config(a.config);
    auto& run = p.config.run;
    if (a.t_max) run.t_max = *a.t_max;
    if (a.step) run.step = *a.step;
    if (!a.probes.empty()) run.probe_times = a.probes;
    if (!(run.step > 0.0)) throw ConfigError("--step must be positive");
    std::vector<double> probes = run.probe_times.empty() ? std::vector<double>{run.t_max} : run.probe_times;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        if (probes[i] < run.t0 || (i > 0 && !(probes[i] > probes[i - 1]))) {
            throw ConfigError("probe times must be strictly increasing and not before t0");
        }
    }
    refresh_hash(p);

    const auto rho0 = DirectSumDensity::pure(p.model, p.initial.sector, p.initial.state);
    const auto rhos = integrate_master_probes(p.model, rho0, run.t0, probes, run.step);
    std::ofstream out(a.out);
    if (!out) throw Error("cannot write " + a.out);
    write_density_csv(probes, rhos, p.hash, out);
    for (std::size_t i = 0; i < probes.size(); ++i) {
        const auto d = diagnose(rhos[i]);
        std::cout << "t " << probes[i] << " trace " << d.trace << " min_eigenvalue " << d.min_eigenvalue << "\n";
    }
    return kOk;
}

int likelihood(const LikelihoodArgs& a) {
    const auto p = parse_config(a.config);
    const auto input = history_from_json(read_json_file(a.history));
    EventHistory h = input.history;
    Vector psi0;
    if (input.state) {
        psi0 = *input.state;
        if (!(psi0.norm() > 0.0)) throw ConfigError("history: state must be nonzero");
        psi0.normalize();
    } else if (h.start_sector == p.initial.sector) {
        psi0 = p.initial.state;
    } else {
        throw ConfigError("history starts in sector " + std::to_string(h.start_sector) +
                          " but the config's initial state lives in sector " + std::to_string(p.initial.sector) +
                          "; give a 'state' in the history");
    }
    if (h.start_sector >= p.model.sector_count() || psi0.size() != static_cast<Eigen::Index>(p.model.dim(h.start_sector))) {
        throw ConfigError("history: start state does not match the start sector");
    }
    const double step = p.config.run.step;

    ordered_json report;
    report["config_hash"] = p.hash;
    report["events"] = h.steps.size();
    const double density = joint_density(p.model, h, psi0, step);
    report["joint_density"] = density;
    report["log_joint_density"] = density > 0.0 ? json(std::log(density)) : json(nullptr);
    report["joint_density_chained"] = joint_density_chained(p.model, h, psi0, step);
    if (h.t_end && !h.steps.empty()) {
        // Density of exactly these events inside [t0, t_end].
        const double t_last = h.steps.back().time;
        if (*h.t_end < t_last) throw ConfigError("history: t_end precedes the last event");
        const Vector k = kn_apply(p.model, h, psi0, step);
        double trailing = 0.0;
        if (k.norm() > 0.0) trailing = no_event_probability(p.model, h.steps.back().sector, k.normalized(), t_last, *h.t_end, step);
        report["t_end"] = *h.t_end;
        report["trailing_no_event_probability"] = trailing;
        report["window_density"] = density * trailing;
    } else if (h.t_end) {
        report["t_end"] = *h.t_end;
    }
    std::ofstream out(a.out);
    if (!out) throw Error("cannot write " + a.out);
    out << report.dump(2) << "\n";
    std::cout << "joint_density " << density << "\n";
    return kOk;
}

int validate(const ValidateArgs& a) {
    const auto p = parse_config(a.config);
    const auto& run = p.config.run;
    const std::size_t n = a.trajectories.value_or(run.trajectories);
    if (n == 0) throw ConfigError("--trajectories must be at least 1");
    if (!(a.tol > 0.0)) throw ConfigError("--tol must be positive");
    if (!(run.t_max > run.t0)) throw ConfigError("validate needs t_max > t0");

    std::vector<double> probes = run.probe_times;
    if (probes.empty()) {
        const double span = run.t_max - run.t0;
        probes = {run.t0 + 0.25 * span, run.t0 + 0.5 * span, run.t_max};
    }
    EnsembleOptions e;
    e.workers = a.workers;
    bool ok = true;
    std::cout << "config_hash " << p.hash << "\n";
    const auto densities = ensemble_vs_master(p.model, p.initial, p.run_options(), n, run.seed, probes, e);
    for (const auto& d : densities) {
        const bool pass = d.distance <= a.tol;
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " density t=" << d.time << " frobenius=" << d.distance << " tol=" << a.tol
                  << " samples=" << d.samples << "\n";
    }
    std::vector<double> edges;
    for (int i = 0; i <= 20; ++i) edges.push_back(run.t0 + (run.t_max - run.t0) * i / 20.0);
    const auto hist = first_event_vs_law(p.model, p.initial, edges, n, run.seed, run.step, e);
    const bool pass = hist.total_variation <= a.tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " first-event histogram tv=" << hist.total_variation << " tol=" << a.tol
              << " samples=" << hist.samples << "\n";
    return ok ? kOk : kValidationFailed;
}

int stats(const StatsArgs& a) {
    const auto report = stats_report(std::filesystem::path(a.events));
    write_stats(report, a.out);
    std::cout << "trajectories " << report.trajectories << "\nevents " << report.events << "\n";
    return kOk;
}

template <class F>
int guarded(F&& f) {
    try {
        return f();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Event-model simulator: trajectories, master equation, likelihoods"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "Sample trajectories and write a JSON-Lines event log");
    s->add_option("--config", sim.config, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", sim.out, "Event log path")->required();
    s->add_option("--trajectories", sim.trajectories, "Number of trajectories");
    s->add_option("--seed", sim.seed, "Master seed");
    s->add_option("--t-max", sim.t_max, "Horizon");
    s->add_option("--step", sim.step, "Integrator step");
    s->add_flag("--snapshots", sim.snapshots, "Record post-jump states");
    s->add_option("--workers", sim.workers, "Worker threads (0: all cores)");

    LindbladArgs lin;
    auto* l = app.add_subcommand("lindblad", "Integrate the master equation and write densities as CSV");
    l->add_option("--config", lin.config, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    l->add_option("--out", lin.out, "CSV path")->required();
    l->add_option("--t-max", lin.t_max, "Horizon (used when no probe times are given)");
    l->add_option("--step", lin.step, "Integrator step");
    l->add_option("--probe", lin.probes, "Probe times, comma separated")->delimiter(',');

    LikelihoodArgs lik;
    auto* k = app.add_subcommand("likelihood", "Joint density of a recorded event history");
    k->add_option("--config", lik.config, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    k->add_option("--history", lik.history, "History (JSON)")->required()->check(CLI::ExistingFile);
    k->add_option("--out", lik.out, "Report path (JSON)")->required();

    ValidateArgs val;
    auto* v = app.add_subcommand("validate", "Check sampled trajectories against the master equation and event law");
    v->add_option("--config", val.config, "Model config (JSON)")->required()->check(CLI::ExistingFile);
    v->add_option("--trajectories", val.trajectories, "Ensemble size (default: config run.trajectories)");
    v->add_option("--tol", val.tol, "Tolerance for Frobenius and total-variation distances");
    v->add_option("--workers", val.workers, "Worker threads (0: all cores)");

    StatsArgs st;
    auto* t = app.add_subcommand("stats", "Inter-event statistics of an event log");
    t->add_option("--events", st.events, "Event log (JSON-Lines)")->required()->check(CLI::ExistingFile);
    t->add_option("--out", st.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    if (*s) return guarded([&] { return simulate(sim); });
    if (*l) return guarded([&] { return lindblad(lin); });
    if (*k) return guarded([&] { return likelihood(lik); });
    if (*v) return guarded([&] { return validate(val); });
    return guarded([&] { return stats(st); });
}
