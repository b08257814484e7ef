#pragma once

// Master equation for the direct-sum density:
//   d rho_a/dt = -i[H_a, rho_a] + sum_b G_ab rho_b G_ab^dagger - {Lambda_a, rho_a}/2

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "emodel/density.hpp"
#include "emodel/propagator.hpp"

namespace emodel {

/// Drift and positivity limits for integrated densities.
inline constexpr double kTraceTolerance = 1e-8;
inline constexpr double kPositivityTolerance = 1e-8;

namespace detail {

// Operators of the whole model frozen at one instant.
struct FrozenOperators {
    std::vector<Matrix> hamiltonians;
    std::vector<Matrix> lambdas;
    std::vector<Matrix> jumps;  // indexed by channel id

    static FrozenOperators at(const EventModel& m, double t, History history, Limit limit) {
        FrozenOperators f;
        f.hamiltonians.reserve(m.sector_count());
        for (SectorId a = 0; a < m.sector_count(); ++a) f.hamiltonians.push_back(m.hamiltonian(a).at(t, history, limit));
        f.jumps.reserve(m.channels().size());
        for (const auto& ch : m.channels()) f.jumps.push_back(ch.op.at(t, history, limit));
        for (SectorId a = 0; a < m.sector_count(); ++a) {
            const auto d = static_cast<Eigen::Index>(m.dim(a));
            Matrix lambda = Matrix::Zero(d, d);
            for (ChannelId c : m.outgoing(a)) lambda += gram(f.jumps[c]);
            f.lambdas.push_back(std::move(lambda));
        }
        return f;
    }

    DirectSumDensity rhs(const EventModel& m, const DirectSumDensity& rho) const {
        DirectSumDensity out;
        out.blocks.resize(rho.blocks.size());
        for (SectorId a = 0; a < rho.blocks.size(); ++a) {
            const Matrix& r = rho.blocks[a];
            const Matrix& h = hamiltonians[a];
            const Matrix& l = lambdas[a];
            out.blocks[a] = -kI * (h * r - r * h) - 0.5 * (l * r + r * l);
        }
        for (ChannelId c = 0; c < jumps.size(); ++c) {
            const auto& ch = m.channel(c);
            const Matrix& g = jumps[c];
            out.blocks[ch.to].noalias() += g * rho.blocks[ch.from] * g.adjoint();
        }
        return out;
    }
};

inline std::vector<double> all_breakpoints(const EventModel& m) {
    std::vector<double> out;
    for (SectorId a = 0; a < m.sector_count(); ++a) {
        const auto& b = m.hamiltonian(a).breakpoints();
        out.insert(out.end(), b.begin(), b.end());
    }
    for (const auto& ch : m.channels()) {
        const auto& b = ch.op.breakpoints();
        out.insert(out.end(), b.begin(), b.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

inline bool all_piecewise_constant(const EventModel& m) {
    for (SectorId a = 0; a < m.sector_count(); ++a) {
        if (!m.hamiltonian(a).constant_between_breakpoints()) return false;
    }
    for (const auto& ch : m.channels()) {
        if (!ch.op.constant_between_breakpoints()) return false;
    }
    return true;
}

inline void check_density_shape(const EventModel& m, const DirectSumDensity& rho, const char* where) {
    if (rho.blocks.size() != m.sector_count()) {
        throw DimensionError(std::string(where) + ": density has " + std::to_string(rho.blocks.size()) +
                             " blocks, model has " + std::to_string(m.sector_count()) + " sectors");
    }
    for (SectorId a = 0; a < m.sector_count(); ++a) {
        const auto d = static_cast<Eigen::Index>(m.dim(a));
        if (rho.blocks[a].rows() != d || rho.blocks[a].cols() != d) {
            throw DimensionError(std::string(where) + ": block " + std::to_string(a) + " is " +
                                 shape_string(rho.blocks[a]) + ", sector dimension " + std::to_string(d));
        }
    }
}

inline DirectSumDensity axpy(const DirectSumDensity& x, double a, const DirectSumDensity& y) {
    DirectSumDensity out = x;
    for (std::size_t i = 0; i < out.blocks.size(); ++i) out.blocks[i] += a * y.blocks[i];
    return out;
}

} // namespace detail

/// Time derivative of the direct-sum density. Providers see `history` (empty by default).
inline DirectSumDensity lindblad_rhs(const EventModel& m, const DirectSumDensity& rho, double t,
                                     History history = {}) {
    detail::check_density_shape(m, rho, "lindblad_rhs");
    return detail::FrozenOperators::at(m, t, history, Limit::right).rhs(m, rho);
}

struct DensityDiagnostics {
    double trace = 0.0;
    double hermiticity_defect = 0.0;
    double min_eigenvalue = 0.0;
};

inline DensityDiagnostics diagnose(const DirectSumDensity& rho) {
    return {rho.trace(), rho.hermiticity_defect(), rho.min_eigenvalue()};
}

/// RK4 integration of the master equation from t0 to t1. No renormalization is
/// applied; the result is checked against the trace, Hermiticity and
/// positivity tolerances and a NumericalError carries the diagnostics if any fails.
inline DirectSumDensity integrate_master(const EventModel& m, const DirectSumDensity& rho0, double t0, double t1,
                                         double step = kDefaultStep, bool check_invariants = true) {
    detail::check_density_shape(m, rho0, "integrate_master");
    if (!(step > 0.0) || !std::isfinite(step)) throw PreconditionError("integrate_master: step must be positive");
    if (!(t1 >= t0)) throw PreconditionError("integrate_master: t1 must not precede t0");

    const auto breakpoints = detail::all_breakpoints(m);
    const bool piecewise = detail::all_piecewise_constant(m);
    DirectSumDensity rho = rho0;
    double t = t0;
    double seg_origin = t0;
    std::ptrdiff_t cached_segment = -1;
    detail::FrozenOperators frozen;
    while (t < t1) {
        auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
        const auto segment = static_cast<std::ptrdiff_t>(it - breakpoints.begin());
        double seg_end = t1;
        if (it != breakpoints.end() && *it < seg_end) seg_end = *it;
        if (it != breakpoints.begin()) seg_origin = std::max(t0, *(it - 1));
        const double n = std::floor((t - seg_origin) / step + 1e-9);
        double next = seg_origin + (n + 1.0) * step;
        if (next <= t) next = t + step;
        if (next >= seg_end - 1e-9 * step) next = seg_end;
        const double h = next - t;

        DirectSumDensity k1, k2, k3, k4;
        if (piecewise) {
            if (segment != cached_segment) {
                frozen = detail::FrozenOperators::at(m, t, {}, Limit::right);
                cached_segment = segment;
            }
            k1 = frozen.rhs(m, rho);
            k2 = frozen.rhs(m, detail::axpy(rho, 0.5 * h, k1));
            k3 = frozen.rhs(m, detail::axpy(rho, 0.5 * h, k2));
            k4 = frozen.rhs(m, detail::axpy(rho, h, k3));
        } else {
            const auto f1 = detail::FrozenOperators::at(m, t, {}, Limit::right);
            const auto f2 = detail::FrozenOperators::at(m, t + 0.5 * h, {}, Limit::right);
            const auto f4 = detail::FrozenOperators::at(m, t + h, {}, Limit::left);
            k1 = f1.rhs(m, rho);
            k2 = f2.rhs(m, detail::axpy(rho, 0.5 * h, k1));
            k3 = f2.rhs(m, detail::axpy(rho, 0.5 * h, k2));
            k4 = f4.rhs(m, detail::axpy(rho, h, k3));
        }
        for (std::size_t i = 0; i < rho.blocks.size(); ++i) {
            rho.blocks[i] += (h / 6.0) * (k1.blocks[i] + 2.0 * k2.blocks[i] + 2.0 * k3.blocks[i] + k4.blocks[i]);
        }
        t = next;
    }

    if (check_invariants) {
        const double trace0 = rho0.trace();
        const auto diag = diagnose(rho);
        const double drift = std::abs(diag.trace - trace0);
        const double scale = std::max(1.0, trace0);
        // Written so that NaN diagnostics count as violations.
        if (!(drift <= kTraceTolerance * scale) || !(diag.hermiticity_defect <= kHermitianTolerance * scale) ||
            !(diag.min_eigenvalue >= -kPositivityTolerance * scale)) {
            std::ostringstream msg;
            msg << "integrate_master: invariant violation at t=" << t1 << " (trace drift " << drift
                << ", hermiticity defect " << diag.hermiticity_defect << ", min eigenvalue " << diag.min_eigenvalue
                << ")";
            throw NumericalError(msg.str());
        }
    }
    return rho;
}

/// Densities at each (ascending) probe time, integrating probe to probe.
inline std::vector<DirectSumDensity> integrate_master_probes(const EventModel& m, const DirectSumDensity& rho0,
                                                             double t0, const std::vector<double>& probes,
                                                             double step = kDefaultStep) {
    std::vector<DirectSumDensity> out;
    DirectSumDensity rho = rho0;
    double t = t0;
    for (double p : probes) {
        if (p < t) throw PreconditionError("integrate_master_probes: probe times must be ascending and >= t0");
        rho = integrate_master(m, rho, t, p, step);
        t = p;
        out.push_back(rho);
    }
    return out;
}

/// sum_alpha rho_alpha; all sectors must share one dimension.
inline Matrix sum_sectors(const DirectSumDensity& rho) {
    if (rho.blocks.empty()) throw DimensionError("sum_sectors: empty density");
    Matrix out = rho.blocks.front();
    for (std::size_t i = 1; i < rho.blocks.size(); ++i) {
        if (rho.blocks[i].rows() != out.rows() || rho.blocks[i].cols() != out.cols()) {
            throw DimensionError("sum_sectors: sector dimensions differ");
        }
        out += rho.blocks[i];
    }
    return out;
}

} // namespace emodel
