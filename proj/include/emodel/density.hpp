#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "emodel/model.hpp"

namespace emodel {

/// Family {rho_alpha} of per-sector density blocks; the total trace is the
/// probability mass.
struct DirectSumDensity {
    std::vector<Matrix> blocks;

    static DirectSumDensity zero(const EventModel& m) {
        DirectSumDensity out;
        out.blocks.reserve(m.sector_count());
        for (const auto& s : m.sectors()) {
            const auto d = static_cast<Eigen::Index>(s.dim);
            out.blocks.push_back(Matrix::Zero(d, d));
        }
        return out;
    }

    /// |psi><psi| / <psi|psi> placed in sector `alpha`.
    static DirectSumDensity pure(const EventModel& m, SectorId alpha, const Vector& psi) {
        DirectSumDensity out = zero(m);
        out.add_projector(alpha, psi);
        return out;
    }

    void add_projector(SectorId alpha, const Vector& psi, double weight = 1.0) {
        const double n2 = psi.squaredNorm();
        if (!(n2 > 0.0)) throw PreconditionError("add_projector: zero state");
        blocks.at(alpha).noalias() += (weight / n2) * (psi * psi.adjoint());
    }

    std::size_t size() const { return blocks.size(); }

    double trace() const {
        double t = 0.0;
        for (const auto& b : blocks) t += b.trace().real();
        return t;
    }

    double hermiticity_defect() const {
        double worst = 0.0;
        for (const auto& b : blocks) worst = std::max(worst, emodel::hermiticity_defect(b));
        return worst;
    }

    /// Smallest eigenvalue over all blocks of their Hermitian parts.
    double min_eigenvalue() const {
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& b : blocks) {
            const Matrix sym = 0.5 * (b + b.adjoint());
            Eigen::SelfAdjointEigenSolver<Matrix> solver(sym, Eigen::EigenvaluesOnly);
            lo = std::min(lo, solver.eigenvalues().minCoeff());
        }
        return lo;
    }

    DirectSumDensity& operator+=(const DirectSumDensity& other) {
        check_conforming(other);
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] += other.blocks[i];
        return *this;
    }

    DirectSumDensity& operator*=(double s) {
        for (auto& b : blocks) b *= s;
        return *this;
    }

    void check_conforming(const DirectSumDensity& other) const {
        if (other.blocks.size() != blocks.size()) throw DimensionError("density: sector count mismatch");
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            if (other.blocks[i].rows() != blocks[i].rows() || other.blocks[i].cols() != blocks[i].cols()) {
                throw DimensionError("density: block " + std::to_string(i) + " shape mismatch");
            }
        }
    }
};

inline DirectSumDensity operator+(DirectSumDensity a, const DirectSumDensity& b) { return a += b; }
inline DirectSumDensity operator*(double s, DirectSumDensity a) { return a *= s; }

/// sqrt(sum over blocks of the squared Frobenius norm of the difference).
inline double frobenius_distance(const DirectSumDensity& a, const DirectSumDensity& b) {
    a.check_conforming(b);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.blocks.size(); ++i) sum += (a.blocks[i] - b.blocks[i]).squaredNorm();
    return std::sqrt(sum);
}

/// Re tr(O rho_alpha) summed over sectors, with O given per sector.
inline double expectation(const std::vector<Matrix>& observable, const DirectSumDensity& rho) {
    if (observable.size() != rho.blocks.size()) throw DimensionError("expectation: sector count mismatch");
    double out = 0.0;
    for (std::size_t i = 0; i < rho.blocks.size(); ++i) out += (observable[i] * rho.blocks[i]).trace().real();
    return out;
}

} // namespace emodel
