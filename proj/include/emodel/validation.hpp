#pragma once

// Statistical cross-checks between sampled trajectories and the deterministic
// descriptions (master equation, first-event law).

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <map>
#include <vector>

#include "emodel/likelihood.hpp"
#include "emodel/lindblad.hpp"
#include "emodel/trajectory.hpp"

namespace emodel {

struct DensityComparison {
    double time = 0.0;
    double distance = 0.0;  // Frobenius norm of the block difference
    std::size_t samples = 0;
};

/// Ensemble-averaged projectors against the integrated master equation at each probe time.
inline std::vector<DensityComparison> ensemble_vs_master(const EventModel& m, const InitialState& init,
                                                         RunOptions options, std::size_t n, std::uint64_t seed,
                                                         const std::vector<double>& probes,
                                                         const EnsembleOptions& ensemble = {}) {
    options.probe_times = probes;
    options.snapshot_states = false;
    if (!probes.empty()) options.t_max = std::max(options.t_max, probes.back());
    EnsembleOptions e = ensemble;
    e.keep_trajectories = false;
    const auto summary = run_ensemble(m, init, n, options, seed, e);
    const auto exact = integrate_master_probes(m, DirectSumDensity::pure(m, init.sector, init.state), options.t0, probes,
                                               options.step);
    std::vector<DensityComparison> out;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        out.push_back({probes[i], frobenius_distance(summary.densities[i], exact[i]), summary.probe_counts[i]});
    }
    return out;
}

struct HistogramComparison {
    double total_variation = 0.0;
    std::size_t samples = 0;
    std::vector<double> empirical;  // table outcomes in order, then quiet, then overflow
    std::vector<double> predicted;
};

namespace detail {

inline std::size_t bin_of(const std::vector<double>& edges, double t) {
    auto it = std::upper_bound(edges.begin(), edges.end(), t);
    const auto i = static_cast<std::size_t>(it - edges.begin());
    return i == 0 ? 0 : std::min(i - 1, edges.size() - 2);
}

// Sorts each run into a table cell: its first `max_events` events when it has
// at most that many (or always, with `marginal`), quiet, or overflow.
inline HistogramComparison compare_with_table(const WindowedTable& table, const std::vector<Trajectory>& runs,
                                              bool marginal) {
    std::map<std::pair<std::vector<ChannelId>, std::vector<std::size_t>>, std::size_t> cell;
    for (std::size_t i = 0; i < table.outcomes.size(); ++i) {
        cell[{table.outcomes[i].channels, table.outcomes[i].bins}] = i;
    }
    const std::size_t quiet = table.outcomes.size();
    const std::size_t overflow = quiet + 1;
    HistogramComparison out;
    out.samples = runs.size();
    out.empirical.assign(overflow + 1, 0.0);
    for (const auto& tr : runs) {
        std::size_t n = 0;
        for (const auto& e : tr.events) n += e.time <= table.edges.back() ? 1 : 0;
        if (n == 0) {
            out.empirical[quiet] += 1.0;
            continue;
        }
        if (n > table.max_events && !marginal) {
            out.empirical[overflow] += 1.0;
            continue;
        }
        std::vector<ChannelId> channels;
        std::vector<std::size_t> bins;
        for (std::size_t k = 0; k < std::min(n, table.max_events); ++k) {
            channels.push_back(tr.events[k].channel);
            bins.push_back(bin_of(table.edges, tr.events[k].time));
        }
        auto it = cell.find({channels, bins});
        // A pattern the table does not list carries predicted mass zero.
        if (it == cell.end()) out.empirical[overflow] += 1.0;
        else out.empirical[it->second] += 1.0;
    }
    for (auto& v : out.empirical) v /= static_cast<double>(runs.size());
    for (const auto& o : table.outcomes) out.predicted.push_back(o.probability);
    out.predicted.push_back(table.quiet);
    out.predicted.push_back(table.overflow);
    for (std::size_t i = 0; i < out.predicted.size(); ++i) {
        out.total_variation += 0.5 * std::abs(out.empirical[i] - out.predicted[i]);
    }
    return out;
}

} // namespace detail

/// Exact-count event patterns of sampled runs on `edges` against
/// windowed_event_probability (1 or 2 events, plus quiet and overflow).
inline HistogramComparison windowed_vs_ensemble(const EventModel& m, const InitialState& init,
                                                const std::vector<double>& edges, std::size_t max_events,
                                                std::size_t n, std::uint64_t seed, double step = kDefaultStep,
                                                const EnsembleOptions& ensemble = {}) {
    const auto table = windowed_event_probability(m, init.sector, init.state, edges, max_events, step);
    RunOptions options;
    options.t0 = edges.front();
    options.t_max = edges.back();
    options.step = step;
    options.event_budget = max_events + 1;
    const auto summary = run_ensemble(m, init, n, options, seed, ensemble);
    return detail::compare_with_table(table, summary.runs, false);
}

/// First event (channel, time bin) histogram against the first-event law on `edges`.
/// Only the first event of each trajectory is sampled.
inline HistogramComparison first_event_vs_law(const EventModel& m, const InitialState& init, const std::vector<double>& edges,
                                              std::size_t n, std::uint64_t seed, double step = kDefaultStep,
                                              const EnsembleOptions& ensemble = {}) {
    const auto table = first_event_table(m, init.sector, init.state, edges, step);
    RunOptions options;
    options.t0 = edges.front();
    options.t_max = edges.back();
    options.step = step;
    options.event_budget = 1;
    const auto summary = run_ensemble(m, init, n, options, seed, ensemble);
    return detail::compare_with_table(table, summary.runs, true);
}

} // namespace emodel
