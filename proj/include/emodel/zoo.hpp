#pragma once

// Prebuilt models: scalar absorbing chains, a driven decaying qubit, flash
// (GRW-type) models on a periodic lattice, non-commuting spin projectors and a
// momentum-weighted lattice variant whose event rate depends on the state.

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "emodel/lindblad.hpp"
#include "emodel/trajectory.hpp"

namespace emodel {

struct LabelledOperator {
    std::string label;
    OperatorProvider op;
};

/// One Hilbert space shared by all sectors, one Hamiltonian, and jump
/// operators that depend only on the label of the newest event.
struct ReducedModel {
    std::string name;
    std::size_t dim = 1;
    OperatorProvider hamiltonian;
    std::vector<LabelledOperator> jumps;

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (dim == 0) out.emplace_back("reduced model dimension must be positive");
        if (jumps.empty()) out.emplace_back("reduced model needs at least one labelled jump operator");
        const auto d = static_cast<Eigen::Index>(dim);
        if (hamiltonian.rows() != d || hamiltonian.cols() != d) out.emplace_back("Hamiltonian shape mismatch");
        for (std::size_t i = 0; i < jumps.size(); ++i) {
            const auto& j = jumps[i];
            if (j.op.rows() != d || j.op.cols() != d) out.push_back("jump '" + j.label + "' is not square of the model dimension");
            if (j.label.empty()) out.push_back("jump " + std::to_string(i) + " has an empty label");
            for (std::size_t k = 0; k < i; ++k) {
                if (jumps[k].label == j.label) out.push_back("duplicate label '" + j.label + "'");
            }
        }
        return out;
    }
};

/// A ready-to-run model together with its default initial state.
struct ZooModel {
    EventModel model;
    InitialState initial;
    std::optional<ReducedModel> reduced;
};

/// Single effective sector; every event appends its label to the record.
/// Lambda = sum_e G_e^dagger G_e.
inline EventModel as_event_model(const ReducedModel& r) {
    const auto problems = r.problems();
    if (!problems.empty()) throw PreconditionError("as_event_model: " + problems.front());
    EventModel m({{0, r.dim, r.name.empty() ? "record" : r.name}}, EventModel::Mode::label_record);
    m.set_hamiltonian(0, r.hamiltonian);
    for (const auto& j : r.jumps) m.add_jump(0, 0, j.op, j.label);
    return m;
}

/// Explicit sectors for every label record of length <= depth; the record
/// (e_1, ..., e_k) moves to (e_1, ..., e_k, e) through G_e. Records of maximal
/// length have no outgoing jumps, so histories up to `depth` events are exact.
class UnfoldedRecords {
public:
    UnfoldedRecords(const ReducedModel& r, std::size_t depth) : labels_(), depth_(depth) {
        const auto problems = r.problems();
        if (!problems.empty()) throw PreconditionError("unfold_label_records: " + problems.front());
        for (const auto& j : r.jumps) labels_.push_back(j.label);

        std::vector<std::vector<std::size_t>> records{{}};
        std::vector<SectorSpec> sectors;
        for (std::size_t level = 0, begin = 0; level <= depth; ++level) {
            const std::size_t end = records.size();
            for (std::size_t i = begin; i < end; ++i) {
                sectors.push_back({i, r.dim, key(records[i])});
                index_[key(records[i])] = i;
                if (level < depth) {
                    for (std::size_t e = 0; e < labels_.size(); ++e) {
                        auto next = records[i];
                        next.push_back(e);
                        records.push_back(std::move(next));
                    }
                }
            }
            begin = end;
        }
        model_ = EventModel(std::move(sectors));
        for (SectorId s = 0; s < records.size(); ++s) {
            model_.set_hamiltonian(s, r.hamiltonian);
            if (records[s].size() == depth) continue;
            for (std::size_t e = 0; e < labels_.size(); ++e) {
                auto next = records[s];
                next.push_back(e);
                model_.add_jump(s, index_.at(key(next)), r.jumps[e].op, labels_[e]);
            }
        }
    }

    const EventModel& model() const { return model_; }
    std::size_t depth() const { return depth_; }

    SectorId sector_of(const std::vector<std::string>& record) const {
        std::vector<std::size_t> idx;
        for (const auto& l : record) {
            auto it = std::find(labels_.begin(), labels_.end(), l);
            if (it == labels_.end()) throw PreconditionError("unknown label '" + l + "'");
            idx.push_back(static_cast<std::size_t>(it - labels_.begin()));
        }
        auto it = index_.find(key(idx));
        if (it == index_.end()) throw PreconditionError("record longer than the unfolded depth");
        return it->second;
    }

private:
    std::string key(const std::vector<std::size_t>& rec) const {
        std::string k = "(";
        for (std::size_t i = 0; i < rec.size(); ++i) {
            if (i) k += ",";
            k += labels_[rec[i]];
        }
        return k + ")";
    }

    std::vector<std::string> labels_;
    std::size_t depth_;
    std::map<std::string, SectorId> index_;
    EventModel model_;
};

/// Two explicit sectors (even / odd number of events so far) with identical
/// Hilbert spaces; every label jumps to the other parity through the same
/// G_e. The sector-summed master equation of this model is exactly the reduced one.
inline EventModel unfold_parity(const ReducedModel& r) {
    const auto problems = r.problems();
    if (!problems.empty()) throw PreconditionError("unfold_parity: " + problems.front());
    EventModel m({{0, r.dim, "even"}, {1, r.dim, "odd"}});
    for (SectorId s = 0; s < 2; ++s) {
        m.set_hamiltonian(s, r.hamiltonian);
        for (const auto& j : r.jumps) m.add_jump(s, 1 - s, j.op, j.label);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Scalar chains

/// Sector 0 decays into sectors 1..k with amplitudes g_1..g_k; 1..k are absorbing.
inline ZooModel build_scalar_chain(const std::vector<double>& couplings) {
    if (couplings.empty()) throw PreconditionError("scalar chain needs at least one coupling");
    std::vector<SectorSpec> sectors{{0, 1, "ready"}};
    for (std::size_t i = 0; i < couplings.size(); ++i) {
        sectors.push_back({i + 1, 1, couplings.size() == 1 ? "fired" : "fired" + std::to_string(i + 1)});
    }
    ZooModel z{EventModel(std::move(sectors)), {0, Vector::Ones(1)}, std::nullopt};
    for (std::size_t i = 0; i < couplings.size(); ++i) {
        z.model.add_jump(0, i + 1, OperatorProvider::constant(Matrix::Constant(1, 1, Complex(couplings[i], 0.0))));
    }
    return z;
}

inline ZooModel build_two_sector_scalar(double g = 1.0) { return build_scalar_chain({g}); }

// ---------------------------------------------------------------------------
// Driven qubit with one decay channel

/// H = omega * sigma_x / 2, G = sqrt(gamma) |1><0| (basis index 0 is the decaying level).
inline ReducedModel build_driven_qubit(double omega = 1.0, double gamma = 1.0) {
    if (!(gamma > 0.0)) throw PreconditionError("driven qubit: gamma must be positive");
    Matrix h(2, 2);
    h << 0.0, 0.5 * omega, 0.5 * omega, 0.0;
    Matrix g = Matrix::Zero(2, 2);
    g(1, 0) = std::sqrt(gamma);
    return {"driven_qubit", 2, OperatorProvider::constant(h), {{"decay", OperatorProvider::constant(g)}}};
}

// ---------------------------------------------------------------------------
// Flash model on a periodic lattice

struct GrwLatticeConfig {
    std::size_t sites = 8;    // M, ring length
    double spacing = 1.0;     // a
    double sigma = 1.0;       // collapse width
    double rate = 1.0;        // total flash rate lambda
    double hopping = 1.0;     // J
    std::string initial = "uniform";  // uniform | site | gaussian
    std::size_t initial_site = 0;
    double initial_width = 1.0;       // gaussian packet width, length units
    double initial_momentum = 0.0;    // gaussian packet wavenumber, radians per site

    std::vector<std::string> problems() const {
        std::vector<std::string> out;
        if (sites < 4) out.emplace_back("lattice needs at least 4 sites");
        if (!(spacing > 0.0)) out.emplace_back("lattice spacing must be positive");
        if (!(sigma > 0.0)) out.emplace_back("collapse width sigma must be positive");
        if (!(rate > 0.0)) out.emplace_back("flash rate lambda must be positive");
        if (!std::isfinite(hopping)) out.emplace_back("hopping must be finite");
        if (initial != "uniform" && initial != "site" && initial != "gaussian") {
            out.push_back("unknown initial state '" + initial + "'");
        }
        if (initial == "site" && initial_site >= sites) out.emplace_back("initial site out of range");
        if (initial == "gaussian" && !(initial_width > 0.0)) out.emplace_back("initial width must be positive");
        return out;
    }
};

namespace detail {

inline void check_lattice(const GrwLatticeConfig& c) {
    const auto p = c.problems();
    if (!p.empty()) throw PreconditionError("lattice config: " + p.front());
}

inline double ring_distance(std::size_t x, std::size_t y, const GrwLatticeConfig& c) {
    const std::size_t diff = x > y ? x - y : y - x;
    return static_cast<double>(std::min(diff, c.sites - diff)) * c.spacing;
}

// Unnormalized collapse profile g_a(x) = exp(-dist(x, a)^2 / (4 sigma^2)).
inline Eigen::VectorXd collapse_profile(std::size_t a, const GrwLatticeConfig& c) {
    Eigen::VectorXd g(static_cast<Eigen::Index>(c.sites));
    for (std::size_t x = 0; x < c.sites; ++x) {
        const double d = ring_distance(x, a, c);
        g(static_cast<Eigen::Index>(x)) = std::exp(-d * d / (4.0 * c.sigma * c.sigma));
    }
    return g;
}

// sum_a g_a(x)^2, the same for every x on the ring.
inline double collapse_normalizer(const GrwLatticeConfig& c) { return collapse_profile(0, c).squaredNorm(); }

inline Matrix shift_matrix(std::size_t sites) {
    const auto n = static_cast<Eigen::Index>(sites);
    Matrix s = Matrix::Zero(n, n);
    for (Eigen::Index x = 0; x < n; ++x) s((x + 1) % n, x) = 1.0;
    return s;
}

} // namespace detail

/// H = -J (S + S^dagger) with S the periodic shift |x+1><x|.
inline Matrix lattice_hamiltonian(const GrwLatticeConfig& c) {
    const Matrix s = detail::shift_matrix(c.sites);
    return -c.hopping * (s + s.adjoint());
}

inline Vector lattice_initial_state(const GrwLatticeConfig& c) {
    detail::check_lattice(c);
    const auto n = static_cast<Eigen::Index>(c.sites);
    Vector psi = Vector::Zero(n);
    if (c.initial == "uniform") {
        psi.setOnes();
    } else if (c.initial == "site") {
        psi(static_cast<Eigen::Index>(c.initial_site)) = 1.0;
    } else {
        for (std::size_t x = 0; x < c.sites; ++x) {
            const double d = detail::ring_distance(x, c.initial_site, c);
            // Signed offset for the momentum phase, wrapped to the nearest image.
            double offset = static_cast<double>(x) - static_cast<double>(c.initial_site);
            if (offset > 0.5 * static_cast<double>(c.sites)) offset -= static_cast<double>(c.sites);
            if (offset < -0.5 * static_cast<double>(c.sites)) offset += static_cast<double>(c.sites);
            psi(static_cast<Eigen::Index>(x)) = std::exp(-d * d / (4.0 * c.initial_width * c.initial_width)) *
                                                std::exp(kI * (c.initial_momentum * offset));
        }
    }
    psi.normalize();
    return psi;
}

/// Flash operators G_a = sqrt(lambda / Z) diag(g_a), so that sum_a G_a^2 = lambda * I.
inline ReducedModel build_grw_lattice(const GrwLatticeConfig& c) {
    detail::check_lattice(c);
    const double z = detail::collapse_normalizer(c);
    ReducedModel r{"grw_lattice", c.sites, OperatorProvider::constant(lattice_hamiltonian(c)), {}};
    for (std::size_t a = 0; a < c.sites; ++a) {
        const Eigen::VectorXd g = detail::collapse_profile(a, c) * std::sqrt(c.rate / z);
        r.jumps.push_back({std::to_string(a), OperatorProvider::constant(g.cast<Complex>().asDiagonal())});
    }
    return r;
}

/// Lambda(a) of the flash model on the lattice: lambda/Z * diag(g_a^2).
inline Matrix grw_flash_rate_density(const GrwLatticeConfig& c, std::size_t a) {
    const double z = detail::collapse_normalizer(c);
    const Eigen::VectorXd g = detail::collapse_profile(a, c);
    return Matrix((g.array().square() * (c.rate / z)).matrix().cast<Complex>().asDiagonal());
}

inline ZooModel build_grw_zoo(const GrwLatticeConfig& c) {
    auto r = build_grw_lattice(c);
    return {as_event_model(r), {0, lattice_initial_state(c)}, r};
}

// ---------------------------------------------------------------------------
// Non-commuting spin projectors

/// Largest commutator norm among pairs of jump operators at t = 0.
inline double max_commutator_norm(const ReducedModel& r) {
    double widest = 0.0;
    for (std::size_t i = 0; i < r.jumps.size(); ++i) {
        for (std::size_t j = i + 1; j < r.jumps.size(); ++j) {
            const Matrix gi = r.jumps[i].op.at(0.0);
            const Matrix gj = r.jumps[j].op.at(0.0);
            widest = std::max(widest, spectral_norm(gi * gj - gj * gi));
        }
    }
    return widest;
}

/// d = 2 model with G_k = sqrt(rate_k) (I + s n_k . sigma) / 2. With the default
/// sharpness s = 1 these are the spin-up projectors along n_k.
inline ReducedModel build_noncommuting_spin(const std::vector<double>& rates,
                                            const std::vector<std::array<double, 3>>& axes,
                                            double sharpness = 1.0, double omega = 0.0) {
    if (axes.size() < 2) throw PreconditionError("noncommuting spin: need at least two axes");
    if (rates.size() != axes.size()) throw PreconditionError("noncommuting spin: one rate per axis");
    if (!(sharpness > 0.0 && sharpness <= 1.0)) throw PreconditionError("noncommuting spin: sharpness in (0, 1]");
    std::vector<std::array<double, 3>> unit;
    for (const auto& a : axes) {
        const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
        if (!(n > 0.0)) throw PreconditionError("noncommuting spin: zero axis");
        unit.push_back({a[0] / n, a[1] / n, a[2] / n});
    }
    bool independent = false;
    for (std::size_t i = 0; i < unit.size() && !independent; ++i) {
        for (std::size_t j = i + 1; j < unit.size(); ++j) {
            const auto& u = unit[i];
            const auto& v = unit[j];
            const double cx = u[1] * v[2] - u[2] * v[1];
            const double cy = u[2] * v[0] - u[0] * v[2];
            const double cz = u[0] * v[1] - u[1] * v[0];
            if (std::sqrt(cx * cx + cy * cy + cz * cz) > 1e-9) {
                independent = true;
                break;
            }
        }
    }
    if (!independent) throw PreconditionError("noncommuting spin: degenerate axes (all parallel)");

    Matrix sx(2, 2), sy(2, 2), sz(2, 2);
    sx << 0.0, 1.0, 1.0, 0.0;
    sy << 0.0, -kI, kI, 0.0;
    sz << 1.0, 0.0, 0.0, -1.0;
    ReducedModel r{"noncommuting_spin", 2, OperatorProvider::constant(0.5 * omega * sz), {}};
    for (std::size_t k = 0; k < unit.size(); ++k) {
        if (!(rates[k] > 0.0)) throw PreconditionError("noncommuting spin: rates must be positive");
        const auto& n = unit[k];
        const Matrix p = 0.5 * (Matrix::Identity(2, 2) + sharpness * (n[0] * sx + n[1] * sy + n[2] * sz));
        r.jumps.push_back({"axis" + std::to_string(k), OperatorProvider::constant(std::sqrt(rates[k]) * p)});
    }

    if (!(max_commutator_norm(r) > 0.0)) throw PreconditionError("noncommuting spin: jump operators commute");
    return r;
}

/// Bloch vector (<sigma_x>, <sigma_y>, <sigma_z>) of a normalized qubit state.
inline std::array<double, 3> bloch_vector(const Vector& psi) {
    if (psi.size() != 2) throw DimensionError("bloch_vector: state must be a qubit");
    const Complex a = psi(0);
    const Complex b = psi(1);
    const Complex ab = std::conj(a) * b;
    return {2.0 * ab.real(), 2.0 * ab.imag(), std::norm(a) - std::norm(b)};
}

// ---------------------------------------------------------------------------
// Momentum-weighted lattice variant

/// sqrt(2 - S - S^dagger): |2 sin(k/2)| in momentum space.
inline Matrix lattice_speed_operator(std::size_t sites) {
    const Matrix s = detail::shift_matrix(sites);
    const auto n = static_cast<Eigen::Index>(sites);
    const Matrix laplacian = 2.0 * Matrix::Identity(n, n) - s - s.adjoint();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(laplacian);
    const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.cast<Complex>().asDiagonal() * eig.eigenvectors().adjoint();
}

/// The flash model plus momentum-weighted operators
///   F_a = sqrt(kick_rate / Z) (g_a K + K g_a) / 2,   K = sqrt(2 - S - S^dagger),
/// which are Hermitian but not positive and do not commute with the flashes.
/// Their contribution to Lambda grows with the kinetic energy, so the event
/// rate rises as localization heats the state.
inline ReducedModel build_momentum_weighted(const GrwLatticeConfig& c, double kick_rate) {
    detail::check_lattice(c);
    if (!(kick_rate > 0.0)) throw PreconditionError("momentum-weighted: kick rate must be positive");
    ReducedModel r = build_grw_lattice(c);
    r.name = "momentum_weighted";
    for (auto& j : r.jumps) j.label = "x" + j.label;
    const double z = detail::collapse_normalizer(c);
    const Matrix k = lattice_speed_operator(c.sites);
    for (std::size_t a = 0; a < c.sites; ++a) {
        const Matrix g = detail::collapse_profile(a, c).cast<Complex>().asDiagonal();
        const Matrix f = std::sqrt(kick_rate / z) * 0.5 * (g * k + k * g);
        r.jumps.push_back({"p" + std::to_string(a), OperatorProvider::constant(f)});
    }
    return r;
}

// ---------------------------------------------------------------------------
// Energy observables

/// <H> along trajectories and the master-equation growth rate tr(H L(rho)).
class EnergyProbe {
public:
    explicit EnergyProbe(Matrix hamiltonian) : h_(std::move(hamiltonian)) {}

    const Matrix& hamiltonian() const { return h_; }

    double energy(const Vector& psi) const { return expectation(h_, psi) / psi.squaredNorm(); }

    /// d<H>/dt predicted by the master equation in state rho. Every sector of
    /// the model must have the probe's dimension.
    double lindblad_growth_rate(const EventModel& m, const DirectSumDensity& rho, double t = 0.0) const {
        const DirectSumDensity drho = lindblad_rhs(m, rho, t);
        return expectation(std::vector<Matrix>(drho.size(), h_), drho);
    }

    double ensemble_energy(const DirectSumDensity& rho) const {
        return expectation(std::vector<Matrix>(rho.size(), h_), rho);
    }

    /// Observable for RunOptions::event_observables: energy right after each event.
    StateObservable observable() const {
        return [h = h_](SectorId, const Vector& psi) { return expectation(h, psi) / psi.squaredNorm(); };
    }

    /// Energies after each event, from recorded observables at `slot` or from snapshots.
    std::vector<double> per_event_energy(const Trajectory& tr, std::optional<std::size_t> slot = std::nullopt) const {
        std::vector<double> out;
        for (const auto& e : tr.events) {
            if (slot && *slot < e.observables.size()) {
                out.push_back(e.observables[*slot]);
            } else if (e.state) {
                out.push_back(energy(*e.state));
            } else {
                throw PreconditionError("per_event_energy: event carries neither observables nor a state snapshot");
            }
        }
        return out;
    }

private:
    Matrix h_;
};

inline EnergyProbe build_energy_probe(const GrwLatticeConfig& c) {
    detail::check_lattice(c);
    return EnergyProbe(lattice_hamiltonian(c));
}

/// Observable giving the instantaneous total event rate of the post-event state
/// (operators sampled at t = 0, so meant for time-independent models).
inline StateObservable rate_observable(const EventModel& m) {
    return [&m](SectorId alpha, const Vector& psi) { return total_rate(m, alpha, psi, 0.0); };
}

} // namespace emodel
