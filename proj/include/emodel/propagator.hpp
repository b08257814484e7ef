#pragma once

// No-event evolution psi' = (-iH - Lambda/2) psi with fixed-step classical RK4,
// and location of the time where the squared norm drops to a threshold.

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emodel/model.hpp"

namespace emodel {

inline constexpr double kDefaultStep = 1e-3;
/// Absolute tolerance on a located jump time.
inline constexpr double kJumpTimeTolerance = 1e-10;
/// Below this total jump weight <psi, Lambda psi> a located jump is a numerical pathology.
inline constexpr double kDegenerateWeight = 1e-14;

struct PropagationResult {
    Vector state;  // unnormalized W(t_end, t0) psi0
    double t_end = 0.0;
    double survival = 1.0;  // squared norm of `state`
};

struct JumpSearch {
    bool jumped = false;
    double time = 0.0;  // jump time, or the horizon when no jump happened
    Vector state;       // unnormalized state at `time`
    double survival = 1.0;
};

/// Receives (t, unnormalized state) at requested probe times.
using ProbeCallback = std::function<void(double t, const Vector& state)>;

namespace detail {

// One RK4 step of size h for a constant generator, written in stage form.
inline Vector rk4_constant(const Matrix& a, const Vector& psi, double h) {
    const Vector k1 = a * psi;
    const Vector k2 = a * (psi + (0.5 * h) * k1);
    const Vector k3 = a * (psi + (0.5 * h) * k2);
    const Vector k4 = a * (psi + h * k3);
    return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// The same step folded into one matrix: I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24.
inline Matrix rk4_step_matrix(const Matrix& a, double h) {
    const Eigen::Index d = a.rows();
    const Matrix ha = a * Complex(h, 0.0);
    const Matrix id = Matrix::Identity(d, d);
    Matrix p = id + ha * Complex(0.25, 0.0);
    p = id + (ha * p) * Complex(1.0 / 3.0, 0.0);
    p = id + (ha * p) * Complex(0.5, 0.0);
    return id + ha * p;
}

// No-event flow of one sector under a fixed event history. Steps are laid on
// the grid t0 + n*step and shortened so that none straddles a breakpoint.
class SectorFlow {
public:
    SectorFlow(const EventModel& m, SectorId alpha, History history, double step)
        : model_(m), alpha_(alpha), history_(history), step_(step),
          breakpoints_(m.flow_breakpoints(alpha)), piecewise_(m.flow_piecewise_constant(alpha)) {
        if (!(step > 0.0) || !std::isfinite(step)) {
            throw PreconditionError("propagator: step must be positive and finite, got " + std::to_string(step));
        }
    }

    double step() const { return step_; }

    // Can any jump leave this sector at all?
    bool can_jump() const { return !model_.outgoing(alpha_).empty(); }

    // H vanishes identically and nothing can jump: the flow is the identity.
    bool is_trivial() const {
        if (can_jump()) return false;
        const auto& h = model_.hamiltonian(alpha_);
        if (h.kind() == OperatorProvider::Kind::history_dependent) return false;
        for (const auto& p : h.pieces()) {
            if (max_abs_entry(p) != 0.0) return false;
        }
        return true;
    }

    // End of the step starting at t, never beyond `limit` or the next breakpoint.
    double next_time(double t, double grid_origin, double limit) const {
        double end = limit;
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        if (it != breakpoints_.end() && *it < end) end = *it;
        const double origin = std::max(grid_origin, segment_start(t));
        const double n = std::floor((t - origin) / step_ + 1e-9);
        double candidate = origin + (n + 1.0) * step_;
        if (candidate <= t) candidate = t + step_;
        if (candidate >= end - 1e-9 * step_) return end;
        return candidate;
    }

    // Advance psi from t by h (t + h must not cross a breakpoint).
    Vector advance(const Vector& psi, double t, double h) {
        if (h == 0.0) return psi;
        if (piecewise_) {
            refresh_segment(t);
            if (std::abs(h - step_) <= 1e-12 * step_) {
                if (!full_step_ready_) {
                    full_step_ = rk4_step_matrix(generator_, step_);
                    full_step_ready_ = true;
                }
                return full_step_ * psi;
            }
            return rk4_constant(generator_, psi, h);
        }
        const Matrix a1 = effective_generator(model_, alpha_, t, history_, Limit::right);
        const Matrix a2 = effective_generator(model_, alpha_, t + 0.5 * h, history_, Limit::right);
        const Matrix a4 = effective_generator(model_, alpha_, t + h, history_, Limit::left);
        const Vector k1 = a1 * psi;
        const Vector k2 = a2 * (psi + (0.5 * h) * k1);
        const Vector k3 = a2 * (psi + (0.5 * h) * k2);
        const Vector k4 = a4 * (psi + h * k3);
        return psi + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }

    double jump_weight(const Vector& psi, double t) const {
        return total_rate(model_, alpha_, psi, t, history_);
    }

private:
    double segment_start(double t) const {
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        if (it == breakpoints_.begin()) return -std::numeric_limits<double>::infinity();
        return *(it - 1);
    }

    void refresh_segment(double t) {
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        const auto seg = static_cast<std::ptrdiff_t>(it - breakpoints_.begin());
        if (seg == segment_) return;
        segment_ = seg;
        generator_ = effective_generator(model_, alpha_, t, history_, Limit::right);
        full_step_ready_ = false;
    }

    const EventModel& model_;
    SectorId alpha_;
    History history_;
    double step_;
    std::vector<double> breakpoints_;
    bool piecewise_;
    std::ptrdiff_t segment_ = -1;
    Matrix generator_;
    Matrix full_step_;
    bool full_step_ready_ = false;
};

inline void check_state(const EventModel& m, SectorId alpha, const Vector& psi, const char* where) {
    if (alpha >= m.sector_count()) {
        throw PreconditionError(std::string(where) + ": sector " + std::to_string(alpha) + " out of range");
    }
    if (psi.size() != static_cast<Eigen::Index>(m.dim(alpha))) {
        throw DimensionError(std::string(where) + ": state length " + std::to_string(psi.size()) +
                             " does not match dimension " + std::to_string(m.dim(alpha)) + " of sector " +
                             std::to_string(alpha));
    }
    if (!psi.allFinite()) throw PreconditionError(std::string(where) + ": non-finite state");
}

} // namespace detail

/// W_alpha(t1, t0) psi0 by fixed-step RK4. `on_step`, if given, sees every grid
/// point (t, state) after t0.
inline PropagationResult evolve(const EventModel& m, SectorId alpha, const Vector& psi0, double t0, double t1,
                                double step = kDefaultStep, History history = {},
                                const std::function<void(double, const Vector&)>& on_step = {}) {
    detail::check_state(m, alpha, psi0, "evolve");
    if (!(t1 >= t0)) throw PreconditionError("evolve: t1 must not precede t0");
    detail::SectorFlow flow(m, alpha, history, step);
    PropagationResult out{psi0, t0, psi0.squaredNorm()};
    if (flow.is_trivial()) {
        out.t_end = t1;
        if (on_step) on_step(t1, out.state);
        return out;
    }
    double t = t0;
    while (t < t1) {
        const double next = flow.next_time(t, t0, t1);
        out.state = flow.advance(out.state, t, next - t);
        t = next;
        if (on_step) on_step(t, out.state);
    }
    out.t_end = t1;
    out.survival = out.state.squaredNorm();
    return out;
}

/// First time at which ||W(t, t0) psi0||^2 reaches r, searched up to t_max.
///
/// The crossing is bracketed on the step grid and refined by bisection, each
/// trial re-integrating a single step from the bracketing step's start. When
/// `probes` is non-empty, `on_probe` receives the state at every probe time in
/// [t0, jump time), or [t0, t_max] when no jump happens.
inline JumpSearch find_jump_time(const EventModel& m, SectorId alpha, const Vector& psi0, double t0, double r,
                                 double t_max, double step = kDefaultStep, History history = {},
                                 std::span<const double> probes = {}, const ProbeCallback& on_probe = {}) {
    detail::check_state(m, alpha, psi0, "find_jump_time");
    if (!(r > 0.0 && r <= 1.0)) throw PreconditionError("find_jump_time: threshold r must lie in (0, 1]");
    if (std::abs(psi0.squaredNorm() - 1.0) > 1e-10) {
        throw PreconditionError("find_jump_time: initial state must be normalized");
    }
    if (!(t_max >= t0)) throw PreconditionError("find_jump_time: t_max must not precede t0");

    detail::SectorFlow flow(m, alpha, history, step);
    auto probe_it = std::lower_bound(probes.begin(), probes.end(), t0);
    auto emit_probes_before = [&](double t_start, const Vector& start, double limit, bool inclusive) {
        while (probe_it != probes.end() && (*probe_it < limit || (inclusive && *probe_it == limit))) {
            const double tau = *probe_it - t_start;
            on_probe(*probe_it, tau == 0.0 ? start : flow.advance(start, t_start, tau));
            ++probe_it;
        }
    };

    JumpSearch out{false, t_max, psi0, 1.0};
    if (flow.is_trivial()) {
        if (on_probe) emit_probes_before(t0, psi0, t_max, true);
        return out;
    }

    double t = t0;
    Vector psi = psi0;
    double survival = 1.0;
    while (t < t_max) {
        const double next = flow.next_time(t, t0, t_max);
        const double h = next - t;
        Vector end = flow.advance(psi, t, h);
        const double s_end = end.squaredNorm();
        if (flow.can_jump() && s_end <= r && s_end < survival) {
            double lo = 0.0;
            double hi = h;
            Vector at_hi = end;
            while (hi - lo > 0.1 * kJumpTimeTolerance) {
                const double mid = 0.5 * (lo + hi);
                if (mid <= lo || mid >= hi) break;
                Vector trial = flow.advance(psi, t, mid);
                if (trial.squaredNorm() <= r) {
                    hi = mid;
                    at_hi = std::move(trial);
                } else {
                    lo = mid;
                }
            }
            const double t_jump = t + hi;
            if (on_probe) emit_probes_before(t, psi, t_jump, false);
            const double weight = flow.jump_weight(at_hi, t_jump);
            if (!(weight >= kDegenerateWeight)) {
                throw NumericalError("find_jump_time: total jump weight " + std::to_string(weight) +
                                     " at t=" + std::to_string(t_jump) + " in sector " + std::to_string(alpha) +
                                     " is degenerate");
            }
            out.jumped = true;
            out.time = t_jump;
            out.survival = at_hi.squaredNorm();
            out.state = std::move(at_hi);
            return out;
        }
        if (on_probe) emit_probes_before(t, psi, next, false);
        psi = std::move(end);
        survival = s_end;
        t = next;
    }
    if (on_probe) emit_probes_before(t_max, psi, t_max, true);
    out.state = std::move(psi);
    out.survival = survival;
    return out;
}

} // namespace emodel
