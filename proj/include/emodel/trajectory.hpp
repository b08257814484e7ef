#pragma once

// The piecewise-deterministic jump process: draw a survival threshold, flow
// until the squared norm reaches it, pick a channel with probability
// ||G psi||^2 / <psi, Lambda psi>, jump, repeat.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "emodel/density.hpp"
#include "emodel/propagator.hpp"
#include "emodel/rng.hpp"

namespace emodel {

inline constexpr std::size_t kDefaultEventBudget = 1'000'000;

struct InitialState {
    SectorId sector = 0;
    Vector state;
};

/// Scalar function of the post-jump normalized state, evaluated per event.
using StateObservable = std::function<double(SectorId sector, const Vector& state)>;

struct EventRecord {
    std::size_t index = 0;  // k, starting at 1
    double time = 0.0;
    SectorId from = 0;
    SectorId to = 0;
    std::string label;
    ChannelId channel = 0;
    std::optional<Vector> state;     // post-jump state, only with snapshots enabled
    std::vector<double> observables; // one entry per RunOptions::event_observables
};

enum class Termination { horizon, event_budget };

inline const char* to_string(Termination t) {
    return t == Termination::horizon ? "horizon" : "event_budget";
}

struct ProbeSample {
    double time = 0.0;
    SectorId sector = 0;
    Vector state;  // normalized
};

struct Trajectory {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
    InitialState initial;
    double t0 = 0.0;
    std::vector<EventRecord> events;
    SectorId final_sector = 0;
    Vector final_state;
    double t_end = 0.0;
    Termination terminated_by = Termination::horizon;
    std::vector<ProbeSample> probes;
};

struct RunOptions {
    double t0 = 0.0;
    double t_max = 1.0;
    double step = kDefaultStep;
    std::size_t event_budget = kDefaultEventBudget;
    bool snapshot_states = false;
    std::vector<double> probe_times;
    std::vector<StateObservable> event_observables;
};

struct JumpProbability {
    ChannelId channel = 0;
    SectorId to = 0;
    double probability = 0.0;
};

/// Channel probabilities ||G_c psi||^2 / sum_c ||G_c psi||^2, ascending by target sector.
inline std::vector<JumpProbability> jump_distribution(const EventModel& m, SectorId alpha, const Vector& psi,
                                                      double t, History history = {}) {
    detail::check_state(m, alpha, psi, "jump_distribution");
    std::vector<JumpProbability> out;
    double total = 0.0;
    for (ChannelId c : m.outgoing(alpha)) {
        const double w = (m.channel(c).op.at(t, history) * psi).squaredNorm();
        out.push_back({c, m.channel(c).to, w});
        total += w;
    }
    const double n2 = psi.squaredNorm();
    if (!(n2 > 0.0) || !(total / n2 >= kDegenerateWeight)) {
        throw NumericalError("jump_distribution: zero total weight in sector " + std::to_string(alpha) +
                             " at t=" + std::to_string(t));
    }
    for (auto& p : out) p.probability /= total;
    return out;
}

/// G_c psi / ||G_c psi||.
inline Vector apply_jump(const EventModel& m, ChannelId c, const Vector& psi, double t, History history = {}) {
    const auto& ch = m.channel(c);
    detail::check_state(m, ch.from, psi, "apply_jump");
    const double n = psi.norm();
    if (!(n > 0.0)) throw NumericalError("apply_jump: zero input state");
    Vector out = ch.op.at(t, history) * (psi / n);
    const double out_norm = out.norm();
    if (!(out_norm > 1e-14)) {
        throw NumericalError("apply_jump: state annihilated by jump " + std::to_string(ch.from) + "->" +
                             std::to_string(ch.to) + " at t=" + std::to_string(t));
    }
    out /= out_norm;
    return out;
}

namespace detail {

inline ChannelId pick_channel(const std::vector<JumpProbability>& dist, double u) {
    double cumulative = 0.0;
    for (const auto& p : dist) {
        cumulative += p.probability;
        if (u < cumulative) return p.channel;
    }
    // Rounding left u above the last partial sum: take the last channel with weight.
    for (auto it = dist.rbegin(); it != dist.rend(); ++it) {
        if (it->probability > 0.0) return it->channel;
    }
    return dist.back().channel;
}

} // namespace detail

/// One sample history from `init` at options.t0 up to options.t_max or the event budget.
inline Trajectory run_trajectory(const EventModel& m, const InitialState& init, const RunOptions& options,
                                 RngStream rng) {
    detail::check_state(m, init.sector, init.state, "run_trajectory");
    if (std::abs(init.state.norm() - 1.0) > 1e-10) {
        throw PreconditionError("run_trajectory: initial state must be normalized");
    }
    if (!(options.t_max >= options.t0)) throw PreconditionError("run_trajectory: t_max precedes t0");
    if (options.event_budget == 0) throw PreconditionError("run_trajectory: event budget must be at least 1");

    Trajectory traj;
    traj.seed = rng.master_seed();
    traj.stream = rng.stream();
    traj.initial = init;
    traj.t0 = options.t0;

    std::vector<double> probes = options.probe_times;
    std::sort(probes.begin(), probes.end());
    probes.erase(std::remove_if(probes.begin(), probes.end(),
                                [&](double p) { return p < options.t0 || p > options.t_max; }),
                 probes.end());

    std::vector<Event> history;
    SectorId alpha = init.sector;
    Vector psi = init.state;
    double t = options.t0;

    for (;;) {
        const double r = rng.uniform_open_closed();
        const SectorId current = alpha;
        const auto record_probe = [&](double tp, const Vector& s) {
            traj.probes.push_back({tp, current, s.normalized()});
        };
        JumpSearch found;
        try {
            found = find_jump_time(m, alpha, psi, t, r, options.t_max, options.step, history, probes, record_probe);
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(e.what()) + " (trajectory stream " + std::to_string(rng.stream()) +
                                 ", after " + std::to_string(history.size()) + " events)");
        }
        // Probes already reported must not be re-emitted by later searches.
        probes.erase(probes.begin(), found.jumped ? std::lower_bound(probes.begin(), probes.end(), found.time)
                                                  : probes.end());
        if (!found.jumped) {
            traj.final_sector = alpha;
            traj.final_state = found.state.normalized();
            traj.t_end = options.t_max;
            traj.terminated_by = Termination::horizon;
            return traj;
        }

        const auto dist = jump_distribution(m, alpha, found.state, found.time, history);
        const ChannelId c = detail::pick_channel(dist, rng.uniform01());
        Vector next = apply_jump(m, c, found.state, found.time, history);
        const auto& ch = m.channel(c);

        EventRecord rec;
        rec.index = history.size() + 1;
        rec.time = found.time;
        rec.from = ch.from;
        rec.to = ch.to;
        rec.label = m.event_label(c);
        rec.channel = c;
        for (const auto& obs : options.event_observables) rec.observables.push_back(obs(ch.to, next));
        if (options.snapshot_states) rec.state = next;
        traj.events.push_back(std::move(rec));
        history.push_back({found.time, ch.from, ch.to, m.event_label(c), c});

        alpha = ch.to;
        psi = std::move(next);
        t = found.time;
        if (traj.events.size() >= options.event_budget) {
            traj.final_sector = alpha;
            traj.final_state = psi;
            traj.t_end = t;
            traj.terminated_by = Termination::event_budget;
            return traj;
        }
    }
}

struct EnsembleSummary {
    std::size_t trajectories = 0;
    std::uint64_t master_seed = 0;
    std::vector<double> probe_times;
    /// Average of the per-trajectory projectors at each probe time.
    std::vector<DirectSumDensity> densities;
    /// Trajectories that reached each probe time (budget-terminated runs may not).
    std::vector<std::size_t> probe_counts;
    std::map<std::size_t, std::size_t> event_count_histogram;
    /// Waiting times between consecutive events (the first measured from t0), in trajectory order.
    std::vector<double> inter_event_times;
    std::vector<Trajectory> runs;
};

struct EnsembleOptions {
    std::size_t workers = 0;  // 0: hardware concurrency
    bool keep_trajectories = true;
};

/// N independent trajectories on streams (seed, 0..N-1). Results are merged in
/// trajectory-index order, so the summary does not depend on scheduling.
inline EnsembleSummary run_ensemble(const EventModel& m, const InitialState& init, std::size_t n,
                                    const RunOptions& options, std::uint64_t master_seed,
                                    const EnsembleOptions& ensemble = {}) {
    if (n == 0) throw PreconditionError("run_ensemble: need at least one trajectory");
    std::vector<Trajectory> runs(n);
    std::vector<std::exception_ptr> errors(n);

    std::size_t workers = ensemble.workers != 0 ? ensemble.workers : std::thread::hardware_concurrency();
    workers = std::clamp<std::size_t>(workers, 1, n);
    auto work = [&](std::size_t w) {
        for (std::size_t i = w; i < n; i += workers) {
            try {
                runs[i] = run_trajectory(m, init, options, RngStream(master_seed, i));
            } catch (...) {
                errors[i] = std::current_exception();
                return;
            }
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    EnsembleSummary out;
    out.trajectories = n;
    out.master_seed = master_seed;
    out.probe_times = options.probe_times;
    out.densities.assign(out.probe_times.size(), DirectSumDensity::zero(m));
    out.probe_counts.assign(out.probe_times.size(), 0);
    for (const auto& tr : runs) {
        for (const auto& p : tr.probes) {
            for (std::size_t j = 0; j < out.probe_times.size(); ++j) {
                if (out.probe_times[j] == p.time) {
                    out.densities[j].add_projector(p.sector, p.state);
                    ++out.probe_counts[j];
                }
            }
        }
        ++out.event_count_histogram[tr.events.size()];
        double last = tr.t0;
        for (const auto& e : tr.events) {
            out.inter_event_times.push_back(e.time - last);
            last = e.time;
        }
    }
    for (std::size_t j = 0; j < out.densities.size(); ++j) {
        if (out.probe_counts[j] > 0) out.densities[j] *= 1.0 / static_cast<double>(out.probe_counts[j]);
    }
    if (ensemble.keep_trajectories) {
        out.runs = std::move(runs);
    }
    return out;
}

} // namespace emodel
