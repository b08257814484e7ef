#pragma once

// Sectors, Hamiltonians and jump channels of an event model, plus the derived
// total-rate operator and the no-event generator.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "emodel/linalg.hpp"

namespace emodel {

using SectorId = std::size_t;
using ChannelId = std::size_t;

/// One recorded transition. Providers that depend on the past receive the
/// ordered list of these.
struct Event {
    double time = 0.0;
    SectorId from = 0;
    SectorId to = 0;
    std::string label;
    ChannelId channel = 0;
};

using History = std::span<const Event>;

/// Which one-sided value to take exactly at a breakpoint of a piecewise provider.
enum class Limit { right, left };

struct SectorSpec {
    SectorId id = 0;
    std::size_t dim = 1;
    std::string label;
};

/// Produces the matrix of a Hamiltonian or jump operator at time t.
///
/// Three flavours: a constant matrix, a piecewise-constant family switching at
/// strictly increasing breakpoints (piece i covers [b_{i-1}, b_i)), or a user
/// callback that also sees the event history. Callbacks must be pure and
/// reentrant; they are assumed continuous in t between their declared
/// breakpoints.
class OperatorProvider {
public:
    enum class Kind { constant, piecewise_constant, history_dependent };
    using Callback = std::function<Matrix(double t, History history)>;

    OperatorProvider() = default;

    static OperatorProvider constant(Matrix m) {
        OperatorProvider p;
        p.kind_ = Kind::constant;
        p.rows_ = m.rows();
        p.cols_ = m.cols();
        p.pieces_.push_back(std::move(m));
        return p;
    }

    static OperatorProvider zero(Eigen::Index rows, Eigen::Index cols) {
        return constant(Matrix::Zero(rows, cols));
    }

    static OperatorProvider piecewise(std::vector<double> breakpoints, std::vector<Matrix> pieces) {
        OperatorProvider p;
        p.kind_ = Kind::piecewise_constant;
        if (!pieces.empty()) {
            p.rows_ = pieces.front().rows();
            p.cols_ = pieces.front().cols();
        }
        p.breakpoints_ = std::move(breakpoints);
        p.pieces_ = std::move(pieces);
        return p;
    }

    /// `time_varying = false` promises the output is constant in t for a fixed
    /// history between breakpoints, which lets the propagator reuse one generator.
    static OperatorProvider history_dependent(Eigen::Index rows, Eigen::Index cols, Callback cb,
                                              std::vector<double> breakpoints = {},
                                              bool time_varying = true) {
        OperatorProvider p;
        p.kind_ = Kind::history_dependent;
        p.rows_ = rows;
        p.cols_ = cols;
        p.callback_ = std::move(cb);
        p.breakpoints_ = std::move(breakpoints);
        p.time_varying_ = time_varying;
        return p;
    }

    Kind kind() const { return kind_; }
    Eigen::Index rows() const { return rows_; }
    Eigen::Index cols() const { return cols_; }
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    const std::vector<Matrix>& pieces() const { return pieces_; }

    bool constant_between_breakpoints() const {
        return kind_ != Kind::history_dependent || !time_varying_;
    }

    Matrix at(double t, History history = {}, Limit limit = Limit::right) const {
        switch (kind_) {
        case Kind::constant:
            return pieces_.front();
        case Kind::piecewise_constant:
            return pieces_[piece_index(t, limit)];
        case Kind::history_dependent: {
            Matrix m = callback_(t, history);
            if (m.rows() != rows_ || m.cols() != cols_) {
                throw DimensionError("operator provider returned " + shape_string(m) + ", declared " +
                                     std::to_string(rows_) + "x" + std::to_string(cols_));
            }
            return m;
        }
        }
        return {};
    }

    /// Structural problems independent of any sector context.
    std::vector<std::string> structural_problems() const {
        std::vector<std::string> out;
        if (kind_ == Kind::history_dependent && !callback_) out.emplace_back("history-dependent provider without callback");
        if (kind_ != Kind::history_dependent && pieces_.empty()) out.emplace_back("provider has no matrix");
        if (kind_ == Kind::piecewise_constant && pieces_.size() != breakpoints_.size() + 1) {
            out.emplace_back("piecewise provider needs one more piece than breakpoints (" +
                             std::to_string(pieces_.size()) + " pieces, " +
                             std::to_string(breakpoints_.size()) + " breakpoints)");
        }
        for (std::size_t i = 1; i < breakpoints_.size(); ++i) {
            if (!(breakpoints_[i] > breakpoints_[i - 1])) {
                out.emplace_back("breakpoints are not strictly increasing");
                break;
            }
        }
        for (const auto& m : pieces_) {
            if (m.rows() != rows_ || m.cols() != cols_) {
                out.emplace_back("pieces have inconsistent shapes");
                break;
            }
            if (!all_finite(m)) {
                out.emplace_back("matrix has non-finite entries");
                break;
            }
        }
        return out;
    }

private:
    std::size_t piece_index(double t, Limit limit) const {
        auto it = limit == Limit::right
                      ? std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t)
                      : std::lower_bound(breakpoints_.begin(), breakpoints_.end(), t);
        return static_cast<std::size_t>(it - breakpoints_.begin());
    }

    Kind kind_ = Kind::constant;
    Eigen::Index rows_ = 0;
    Eigen::Index cols_ = 0;
    std::vector<double> breakpoints_;
    std::vector<Matrix> pieces_;
    Callback callback_;
    bool time_varying_ = true;
};

/// Jump operator G_{to,from} with an optional event label.
struct JumpChannel {
    SectorId from = 0;
    SectorId to = 0;
    OperatorProvider op;
    std::string label;
};

/// The event model: a finite set of sectors, one Hamiltonian per sector and a
/// list of jump channels.
///
/// In `label_record` mode there is a single effective sector and every channel
/// is a labelled self-transition: the true sector is the growing record of
/// labels, so each event still changes it. This is how history-tail models
/// (flash models) stay finite.
class EventModel {
public:
    enum class Mode { sectored, label_record };

    EventModel() = default;

    explicit EventModel(std::vector<SectorSpec> sectors, Mode mode = Mode::sectored)
        : sectors_(std::move(sectors)), mode_(mode), outgoing_(sectors_.size()) {
        hamiltonians_.reserve(sectors_.size());
        for (const auto& s : sectors_) {
            const auto d = static_cast<Eigen::Index>(s.dim);
            hamiltonians_.push_back(OperatorProvider::zero(d, d));
        }
    }

    void set_hamiltonian(SectorId alpha, OperatorProvider h) {
        check_sector(alpha, "set_hamiltonian");
        hamiltonians_[alpha] = std::move(h);
    }

    ChannelId add_jump(SectorId from, SectorId to, OperatorProvider op, std::string label = {}) {
        check_sector(from, "add_jump");
        check_sector(to, "add_jump");
        const ChannelId id = channels_.size();
        channels_.push_back({from, to, std::move(op), std::move(label)});
        // Outgoing lists are kept in ascending target order, insertion order among equals.
        auto& out = outgoing_[from];
        auto pos = std::upper_bound(out.begin(), out.end(), to,
                                    [&](SectorId t, ChannelId c) { return t < channels_[c].to; });
        out.insert(pos, id);
        return id;
    }

    Mode mode() const { return mode_; }
    bool is_label_record() const { return mode_ == Mode::label_record; }
    std::size_t sector_count() const { return sectors_.size(); }
    const std::vector<SectorSpec>& sectors() const { return sectors_; }
    const SectorSpec& sector(SectorId alpha) const { return sectors_.at(alpha); }
    std::size_t dim(SectorId alpha) const { return sectors_.at(alpha).dim; }
    const OperatorProvider& hamiltonian(SectorId alpha) const { return hamiltonians_.at(alpha); }
    const std::vector<JumpChannel>& channels() const { return channels_; }
    const JumpChannel& channel(ChannelId c) const { return channels_.at(c); }

    /// Channels leaving `alpha`, ascending by target sector.
    std::span<const ChannelId> outgoing(SectorId alpha) const { return outgoing_.at(alpha); }

    std::optional<ChannelId> find_channel(SectorId from, SectorId to, const std::string& label) const {
        std::optional<ChannelId> unlabelled_match;
        std::size_t matches = 0;
        for (ChannelId c : outgoing_.at(from)) {
            const auto& ch = channels_[c];
            if (ch.to != to) continue;
            if (!label.empty() && ch.label == label) return c;
            ++matches;
            unlabelled_match = c;
        }
        if (label.empty() && matches == 1) return unlabelled_match;
        return std::nullopt;
    }

    /// Label written into event records: the channel label, else the target sector label.
    const std::string& event_label(ChannelId c) const {
        const auto& ch = channels_.at(c);
        return ch.label.empty() ? sectors_.at(ch.to).label : ch.label;
    }

    /// Union of the breakpoints that affect the no-event flow in `alpha`.
    std::vector<double> flow_breakpoints(SectorId alpha) const {
        std::vector<double> out = hamiltonians_.at(alpha).breakpoints();
        for (ChannelId c : outgoing_.at(alpha)) {
            const auto& b = channels_[c].op.breakpoints();
            out.insert(out.end(), b.begin(), b.end());
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    /// True when H and every outgoing G are constant between breakpoints.
    bool flow_piecewise_constant(SectorId alpha) const {
        if (!hamiltonians_.at(alpha).constant_between_breakpoints()) return false;
        for (ChannelId c : outgoing_.at(alpha)) {
            if (!channels_[c].op.constant_between_breakpoints()) return false;
        }
        return true;
    }

private:
    void check_sector(SectorId alpha, const char* where) const {
        if (alpha >= sectors_.size()) {
            throw PreconditionError(std::string(where) + ": sector " + std::to_string(alpha) +
                                    " out of range (" + std::to_string(sectors_.size()) + " sectors)");
        }
    }

    std::vector<SectorSpec> sectors_;
    Mode mode_ = Mode::sectored;
    std::vector<OperatorProvider> hamiltonians_;
    std::vector<JumpChannel> channels_;
    std::vector<std::vector<ChannelId>> outgoing_;
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool valid() const { return violations.empty(); }
};

namespace detail {

// Matrices a provider can be checked on without running a simulation.
inline std::vector<Matrix> provider_samples(const OperatorProvider& p) {
    if (p.kind() != OperatorProvider::Kind::history_dependent) return p.pieces();
    std::vector<Matrix> out;
    out.push_back(p.at(0.0));
    for (double b : p.breakpoints()) out.push_back(p.at(b));
    return out;
}

} // namespace detail

/// Lists every structural violation. History-dependent providers are sampled at
/// t = 0 and at their breakpoints with an empty history.
inline ValidationReport validate_model(const EventModel& m) {
    ValidationReport report;
    auto& v = report.violations;
    if (m.sector_count() == 0) {
        v.emplace_back("empty sector set");
        return report;
    }
    for (std::size_t i = 0; i < m.sector_count(); ++i) {
        const auto& s = m.sector(i);
        if (s.id != i) {
            v.push_back("sector ids must be 0..n-1: position " + std::to_string(i) + " has id " +
                        std::to_string(s.id));
        }
        if (s.dim == 0) v.push_back("sector " + std::to_string(i) + " has dimension 0");
    }
    if (m.is_label_record() && m.sector_count() != 1) {
        v.emplace_back("label-record model must have exactly one effective sector");
    }

    for (SectorId a = 0; a < m.sector_count(); ++a) {
        const auto& h = m.hamiltonian(a);
        const auto d = static_cast<Eigen::Index>(m.dim(a));
        const std::string where = "Hamiltonian of sector " + std::to_string(a);
        for (const auto& p : h.structural_problems()) v.push_back(where + ": " + p);
        if (h.rows() != d || h.cols() != d) {
            v.push_back(where + ": shape " + std::to_string(h.rows()) + "x" + std::to_string(h.cols()) +
                        ", expected " + std::to_string(d) + "x" + std::to_string(d));
            continue;
        }
        try {
            for (const auto& sample : detail::provider_samples(h)) {
                if (!is_hermitian(sample)) {
                    v.push_back(where + ": non-Hermitian Hamiltonian");
                    break;
                }
            }
        } catch (const std::exception& e) {
            v.push_back(where + ": provider failure: " + e.what());
        }
    }

    for (ChannelId c = 0; c < m.channels().size(); ++c) {
        const auto& ch = m.channel(c);
        const std::string where = "jump " + std::to_string(ch.from) + "->" + std::to_string(ch.to) +
                                  (ch.label.empty() ? "" : " [" + ch.label + "]");
        if (ch.from == ch.to && !m.is_label_record()) {
            v.push_back(where + ": diagonal jump (from == to) is not allowed; a transition that "
                                "keeps the sector is a non-event");
        }
        if (m.is_label_record() && ch.label.empty()) {
            v.push_back(where + ": label-record model requires a label on every jump");
        }
        for (const auto& p : ch.op.structural_problems()) v.push_back(where + ": " + p);
        const auto rows = static_cast<Eigen::Index>(m.dim(ch.to));
        const auto cols = static_cast<Eigen::Index>(m.dim(ch.from));
        if (ch.op.rows() != rows || ch.op.cols() != cols) {
            v.push_back(where + ": shape " + std::to_string(ch.op.rows()) + "x" +
                        std::to_string(ch.op.cols()) + ", expected " + std::to_string(rows) + "x" +
                        std::to_string(cols));
        }
        for (ChannelId o = 0; o < c; ++o) {
            const auto& other = m.channel(o);
            if (other.from == ch.from && other.to == ch.to && other.label == ch.label) {
                v.push_back(where + ": duplicate channel");
                break;
            }
        }
    }
    return report;
}

/// Lambda_alpha(t) = sum over outgoing channels of G^dagger G.
inline Matrix lambda_of(const EventModel& m, SectorId alpha, double t, History history = {},
                        Limit limit = Limit::right) {
    const auto d = static_cast<Eigen::Index>(m.dim(alpha));
    Matrix lambda = Matrix::Zero(d, d);
    for (ChannelId c : m.outgoing(alpha)) {
        lambda += gram(m.channel(c).op.at(t, history, limit));
    }
    return lambda;
}

/// -i H_alpha(t) - Lambda_alpha(t) / 2.
inline Matrix effective_generator(const EventModel& m, SectorId alpha, double t, History history = {},
                                  Limit limit = Limit::right) {
    return -kI * m.hamiltonian(alpha).at(t, history, limit) - 0.5 * lambda_of(m, alpha, t, history, limit);
}

/// Instantaneous event rate <psi, Lambda psi> / <psi, psi>.
inline double total_rate(const EventModel& m, SectorId alpha, const Vector& psi, double t,
                         History history = {}) {
    const double norm2 = psi.squaredNorm();
    if (!(norm2 > 0.0)) throw PreconditionError("total_rate: zero state vector");
    if (psi.size() != static_cast<Eigen::Index>(m.dim(alpha))) {
        throw DimensionError("total_rate: state length " + std::to_string(psi.size()) +
                             " does not match sector dimension " + std::to_string(m.dim(alpha)));
    }
    double weight = 0.0;
    for (ChannelId c : m.outgoing(alpha)) weight += (m.channel(c).op.at(t, history) * psi).squaredNorm();
    return weight / norm2;
}

} // namespace emodel
