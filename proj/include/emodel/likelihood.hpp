#pragma once

// Exact event-law evaluation. The joint density of the first n events is
// ||K_n psi0||^2 with
//   K_n = G_n W(t_n, t_{n-1}) ... G_1 W(t_1, t_0),
// the G being the channel operators of the recorded transitions.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "emodel/propagator.hpp"

namespace emodel {

/// Simpson panels per bin (and per inner bin) in windowed integration.
inline constexpr std::size_t kSimpsonPanels = 64;

struct HistoryStep {
    SectorId sector = 0;
    double time = 0.0;
    std::string label;  // selects among parallel channels; required in label-record models
};

struct EventHistory {
    SectorId start_sector = 0;
    double t0 = 0.0;
    std::vector<HistoryStep> steps;
    /// Horizon for an event-free history; ignored when steps are present.
    std::optional<double> t_end;
};

namespace detail {

struct ResolvedStep {
    std::optional<ChannelId> channel;  // empty: no jump operator joins the two sectors, G = 0
    SectorId from;
    SectorId to;
    double time;
};

inline bool has_pair(const EventModel& m, SectorId from, SectorId to) {
    for (ChannelId c : m.outgoing(from)) {
        if (m.channel(c).to == to) return true;
    }
    return false;
}

inline std::vector<ResolvedStep> resolve_history(const EventModel& m, const EventHistory& h) {
    if (h.start_sector >= m.sector_count()) throw PreconditionError("event history: start sector out of range");
    std::vector<ResolvedStep> out;
    SectorId prev = h.start_sector;
    double t_prev = h.t0;
    for (std::size_t k = 0; k < h.steps.size(); ++k) {
        const auto& s = h.steps[k];
        const std::string where = "event history step " + std::to_string(k + 1);
        if (s.sector >= m.sector_count()) throw PreconditionError(where + ": sector out of range");
        if (!(s.time > t_prev)) throw PreconditionError(where + ": event times must strictly increase");
        if (s.sector == prev && !m.is_label_record()) {
            throw PreconditionError(where + ": repeated sector " + std::to_string(s.sector) +
                                    " (a transition that keeps the sector is a non-event)");
        }
        const auto c = m.find_channel(prev, s.sector, s.label);
        if (!c && !has_pair(m, prev, s.sector)) {
            out.push_back({std::nullopt, prev, s.sector, s.time});
        } else if (!c) {
            throw PreconditionError(where + ": no unique jump channel " + std::to_string(prev) + "->" +
                                    std::to_string(s.sector) + (s.label.empty() ? "" : " [" + s.label + "]"));
        } else {
            out.push_back({*c, prev, s.sector, s.time});
        }
        prev = s.sector;
        t_prev = s.time;
    }
    if (h.steps.empty() && h.t_end && *h.t_end < h.t0) throw PreconditionError("event history: t_end precedes t0");
    return out;
}

inline void check_normalized(const Vector& psi, const char* where) {
    if (std::abs(psi.squaredNorm() - 1.0) > 1e-10) {
        throw PreconditionError(std::string(where) + ": initial state must be normalized");
    }
}

inline Event make_event(const EventModel& m, const ResolvedStep& s) {
    return {s.time, s.from, s.to, m.event_label(*s.channel), *s.channel};
}

} // namespace detail

/// K_n psi0, a vector in the last sector of the history.
inline Vector kn_apply(const EventModel& m, const EventHistory& h, const Vector& psi0, double step = kDefaultStep) {
    detail::check_state(m, h.start_sector, psi0, "kn_apply");
    detail::check_normalized(psi0, "kn_apply");
    const auto steps = detail::resolve_history(m, h);
    Vector psi = psi0;
    SectorId alpha = h.start_sector;
    double t = h.t0;
    std::vector<Event> events;
    if (steps.empty()) {
        if (h.t_end) psi = evolve(m, alpha, psi, t, *h.t_end, step).state;
        return psi;
    }
    for (const auto& s : steps) {
        if (!s.channel) return Vector::Zero(static_cast<Eigen::Index>(m.dim(steps.back().to)));
        psi = evolve(m, alpha, psi, t, s.time, step, events).state;
        psi = m.channel(*s.channel).op.at(s.time, events) * psi;
        events.push_back(detail::make_event(m, s));
        alpha = s.to;
        t = s.time;
    }
    return psi;
}

/// ||K_n psi0||^2, a density in (1/time)^n.
inline double joint_density(const EventModel& m, const EventHistory& h, const Vector& psi0,
                            double step = kDefaultStep) {
    return kn_apply(m, h, psi0, step).squaredNorm();
}

/// The same density accumulated as a product over events of
///   (survival to t_k) x (rate at t_k) x (probability of the recorded channel),
/// restarting from the normalized post-jump state each time.
inline double joint_density_chained(const EventModel& m, const EventHistory& h, const Vector& psi0,
                                    double step = kDefaultStep) {
    detail::check_state(m, h.start_sector, psi0, "joint_density_chained");
    detail::check_normalized(psi0, "joint_density_chained");
    const auto steps = detail::resolve_history(m, h);
    if (steps.empty()) {
        if (!h.t_end) return 1.0;
        return evolve(m, h.start_sector, psi0, h.t0, *h.t_end, step).survival;
    }
    Vector psi = psi0;
    SectorId alpha = h.start_sector;
    double t = h.t0;
    double density = 1.0;
    std::vector<Event> events;
    for (const auto& s : steps) {
        if (!s.channel) return 0.0;
        const auto flow = evolve(m, alpha, psi, t, s.time, step, events);
        const Vector unit = flow.state / std::sqrt(flow.survival);
        double weight = 0.0;
        for (ChannelId c : m.outgoing(alpha)) weight += (m.channel(c).op.at(s.time, events) * unit).squaredNorm();
        const Vector jumped = m.channel(*s.channel).op.at(s.time, events) * unit;
        const double channel_weight = jumped.squaredNorm();
        if (channel_weight == 0.0) return 0.0;
        const double rate = weight;
        const double probability = channel_weight / weight;
        density *= flow.survival * rate * probability;
        events.push_back(detail::make_event(m, s));
        alpha = s.to;
        psi = jumped / std::sqrt(channel_weight);
        t = s.time;
    }
    return density;
}

/// ||W_alpha(T, t0) psi0||^2.
inline double no_event_probability(const EventModel& m, SectorId alpha, const Vector& psi0, double t0, double t_end,
                                   double step = kDefaultStep, History history = {}) {
    detail::check_state(m, alpha, psi0, "no_event_probability");
    detail::check_normalized(psi0, "no_event_probability");
    if (t_end < t0) throw PreconditionError("no_event_probability: T precedes t0");
    return evolve(m, alpha, psi0, t0, t_end, step, history).survival;
}

struct WindowedOutcome {
    std::vector<ChannelId> channels;  // one per event
    std::vector<SectorId> sectors;    // target sector of each event
    std::vector<std::size_t> bins;    // time bin of each event
    double probability = 0.0;
};

/// Probabilities of all event patterns inside [t0, T] at bin resolution.
struct WindowedTable {
    std::vector<double> edges;
    std::size_t max_events = 1;
    double quiet = 0.0;     // no event before T
    double overflow = 0.0;  // more than max_events events (exact-count tables only)
    std::vector<WindowedOutcome> outcomes;

    double total() const {
        double s = quiet + overflow;
        for (const auto& o : outcomes) s += o.probability;
        return s;
    }
};

namespace detail {

inline void check_edges(const std::vector<double>& edges, const char* where) {
    if (edges.size() < 2) throw PreconditionError(std::string(where) + ": need at least one bin");
    for (std::size_t i = 1; i < edges.size(); ++i) {
        if (!(edges[i] > edges[i - 1])) throw PreconditionError(std::string(where) + ": bin edges must increase");
    }
}

inline double simpson_weight(std::size_t j, std::size_t panels, double h) {
    if (j == 0 || j == panels) return h / 3.0;
    return (j % 2 == 1 ? 4.0 : 2.0) * h / 3.0;
}

// Probability that the post-event state survives without further events until t_end.
inline double trailing_survival(const EventModel& m, SectorId alpha, const Vector& unit, double t, double t_end,
                                double step, History history) {
    if (m.outgoing(alpha).empty()) return 1.0;
    return evolve(m, alpha, unit, t, t_end, step, history).survival;
}

// Calls visit(t, weight, state) on the Simpson nodes of [a, b], where state is
// W(t, t_start) psi propagated incrementally from (t_start, psi).
template <class Visit>
void simpson_nodes(const EventModel& m, SectorId alpha, Vector psi, double t_start, double a, double b,
                   double step, History history, Visit&& visit) {
    const double h = (b - a) / static_cast<double>(kSimpsonPanels);
    double t = t_start;
    for (std::size_t j = 0; j <= kSimpsonPanels; ++j) {
        const double node = j == kSimpsonPanels ? b : a + static_cast<double>(j) * h;
        if (node > t) {
            psi = evolve(m, alpha, psi, t, node, step, history).state;
            t = node;
        }
        visit(node, simpson_weight(j, kSimpsonPanels, h), psi);
    }
}

} // namespace detail

/// Exact-count event probabilities on bins partitioning [t0, T] for up to
/// `max_events` (1 or 2) events. Each outcome integrates the joint density over
/// its bin box with composite Simpson and multiplies by the probability of no
/// further event up to T; `overflow` collects the mass of longer histories.
inline WindowedTable windowed_event_probability(const EventModel& m, SectorId alpha0, const Vector& psi0,
                                                const std::vector<double>& edges, std::size_t max_events = 2,
                                                double step = kDefaultStep) {
    detail::check_state(m, alpha0, psi0, "windowed_event_probability");
    detail::check_normalized(psi0, "windowed_event_probability");
    detail::check_edges(edges, "windowed_event_probability");
    if (max_events == 0 || max_events > 2) {
        throw PreconditionError("windowed_event_probability: only 1 or 2 events are supported");
    }
    const double t0 = edges.front();
    const double t_end = edges.back();
    const std::size_t n_bins = edges.size() - 1;

    WindowedTable table;
    table.edges = edges;
    table.max_events = max_events;
    table.quiet = no_event_probability(m, alpha0, psi0, t0, t_end, step);

    const auto out0 = m.outgoing(alpha0);
    // Outcome slots: single events indexed (channel, bin), pairs appended lazily.
    std::vector<double> single(out0.size() * n_bins, 0.0);
    std::vector<WindowedOutcome> pairs;
    auto pair_slot = [&](ChannelId c1, std::size_t b1, ChannelId c2, std::size_t b2) -> double& {
        for (auto& o : pairs) {
            if (o.channels[0] == c1 && o.bins[0] == b1 && o.channels[1] == c2 && o.bins[1] == b2) return o.probability;
        }
        pairs.push_back({{c1, c2}, {m.channel(c1).to, m.channel(c2).to}, {b1, b2}, 0.0});
        return pairs.back().probability;
    };

    Vector carry = psi0;
    double carry_t = t0;
    for (std::size_t i = 0; i < n_bins; ++i) {
        detail::simpson_nodes(m, alpha0, carry, carry_t, edges[i], edges[i + 1], step, {},
                              [&](double t1, double w1, const Vector& phi) {
            if (t1 == edges[i + 1]) {
                carry = phi;
                carry_t = t1;
            }
            for (std::size_t ci = 0; ci < out0.size(); ++ci) {
                const ChannelId c1 = out0[ci];
                const Vector v = m.channel(c1).op.at(t1, {}) * phi;
                const double d1 = v.squaredNorm();
                if (d1 == 0.0) continue;
                const SectorId beta = m.channel(c1).to;
                const Vector unit = v / std::sqrt(d1);
                const Event e1{t1, alpha0, beta, m.event_label(c1), c1};
                const History h1(&e1, 1);
                if (max_events == 1) {
                    const double s = detail::trailing_survival(m, beta, unit, t1, t_end, step, h1);
                    single[ci * n_bins + i] += w1 * d1 * s;
                    table.overflow += w1 * d1 * (1.0 - s);
                    continue;
                }
                const double s1 = detail::trailing_survival(m, beta, unit, t1, t_end, step, h1);
                single[ci * n_bins + i] += w1 * d1 * s1;
                const auto out1 = m.outgoing(beta);
                if (out1.empty()) continue;
                Vector inner_carry = unit;
                double inner_t = t1;
                for (std::size_t j = i; j < n_bins; ++j) {
                    const double a = std::max(edges[j], t1);
                    const double b = edges[j + 1];
                    if (!(b > a)) continue;
                    detail::simpson_nodes(m, beta, inner_carry, inner_t, a, b, step, h1,
                                          [&](double t2, double w2, const Vector& phi2) {
                        if (t2 == b) {
                            inner_carry = phi2;
                            inner_t = t2;
                        }
                        std::vector<Event> hist2{e1};
                        for (ChannelId c2 : out1) {
                            const Vector v2 = m.channel(c2).op.at(t2, h1) * phi2;
                            const double d2 = v2.squaredNorm();
                            if (d2 == 0.0) continue;
                            const SectorId gamma = m.channel(c2).to;
                            hist2.resize(1);
                            hist2.push_back({t2, beta, gamma, m.event_label(c2), c2});
                            const double s2 = detail::trailing_survival(m, gamma, v2 / std::sqrt(d2), t2, t_end,
                                                                        step, hist2);
                            const double mass = w1 * d1 * w2 * d2;
                            pair_slot(c1, i, c2, j) += mass * s2;
                            table.overflow += mass * (1.0 - s2);
                        }
                    });
                }
            }
        });
    }

    for (std::size_t ci = 0; ci < out0.size(); ++ci) {
        for (std::size_t i = 0; i < n_bins; ++i) {
            const ChannelId c = out0[ci];
            table.outcomes.push_back({{c}, {m.channel(c).to}, {i}, single[ci * n_bins + i]});
        }
    }
    for (auto& p : pairs) table.outcomes.push_back(std::move(p));
    return table;
}

/// Marginal law of the first event: probability of (channel, bin) for the first
/// event in [t0, T], plus the quiet outcome. Later events are unconstrained.
inline WindowedTable first_event_table(const EventModel& m, SectorId alpha0, const Vector& psi0,
                                       const std::vector<double>& edges, double step = kDefaultStep) {
    detail::check_state(m, alpha0, psi0, "first_event_table");
    detail::check_normalized(psi0, "first_event_table");
    detail::check_edges(edges, "first_event_table");
    const std::size_t n_bins = edges.size() - 1;
    const auto out0 = m.outgoing(alpha0);

    WindowedTable table;
    table.edges = edges;
    table.max_events = 1;
    std::vector<double> mass(out0.size() * n_bins, 0.0);
    Vector carry = psi0;
    double carry_t = edges.front();
    for (std::size_t i = 0; i < n_bins; ++i) {
        detail::simpson_nodes(m, alpha0, carry, carry_t, edges[i], edges[i + 1], step, {},
                              [&](double t, double w, const Vector& phi) {
            if (t == edges[i + 1]) {
                carry = phi;
                carry_t = t;
            }
            for (std::size_t ci = 0; ci < out0.size(); ++ci) {
                mass[ci * n_bins + i] += w * (m.channel(out0[ci]).op.at(t, {}) * phi).squaredNorm();
            }
        });
    }
    table.quiet = carry.squaredNorm();
    for (std::size_t ci = 0; ci < out0.size(); ++ci) {
        for (std::size_t i = 0; i < n_bins; ++i) {
            const ChannelId c = out0[ci];
            table.outcomes.push_back({{c}, {m.channel(c).to}, {i}, mass[ci * n_bins + i]});
        }
    }
    return table;
}

} // namespace emodel
