#include <gtest/gtest.h>

#include <cmath>

#include "emodel/likelihood.hpp"
#include "emodel/zoo.hpp"

using namespace emodel;

namespace {

Matrix scalar(double g) { return Matrix::Constant(1, 1, Complex(g, 0.0)); }

EventModel scalar_model(double g = 1.0) {
    EventModel m({{0, 1, "ready"}, {1, 1, "fired"}});
    m.add_jump(0, 1, OperatorProvider::constant(scalar(g)));
    return m;
}

EventModel driven_qubit(double gamma = 1.0) {
    EventModel m({{0, 2, "bright"}, {1, 2, "emitted"}});
    Matrix h(2, 2);
    h << 0.0, 0.5, 0.5, 0.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    m.set_hamiltonian(1, OperatorProvider::constant(h));
    Matrix g = Matrix::Zero(2, 2);
    g(1, 0) = std::sqrt(gamma);
    m.add_jump(0, 1, OperatorProvider::constant(g));
    return m;
}

EventModel ring_model() {
    EventModel m({{0, 2, "a"}, {1, 2, "b"}, {2, 2, "c"}});
    Matrix h(2, 2);
    h << 0.0, 1.0, 1.0, 0.0;
    Matrix g(2, 2);
    g << 1.0, 0.5, 0.0, Complex(0.0, 0.7);
    for (SectorId s = 0; s < 3; ++s) {
        m.set_hamiltonian(s, OperatorProvider::constant(0.5 * (s + 1.0) * h));
        m.add_jump(s, (s + 1) % 3, OperatorProvider::constant(g));
        m.add_jump(s, (s + 2) % 3, OperatorProvider::constant(0.5 * g.adjoint()));
    }
    return m;
}

Vector e0(Eigen::Index d) { return Vector::Unit(d, 0); }

EventHistory history(SectorId start, std::vector<HistoryStep> steps) {
    EventHistory h;
    h.start_sector = start;
    h.steps = std::move(steps);
    return h;
}

// Composite Simpson on [a, b].
template <class F>
double simpson(F f, double a, double b, int panels) {
    const double h = (b - a) / panels;
    double s = f(a) + f(b);
    for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

} // namespace

TEST(KnApply, NoEventsIsIdentity) {
    const Vector k = kn_apply(scalar_model(), history(0, {}), Vector::Ones(1));
    EXPECT_EQ(k(0), Complex(1.0, 0.0));
}

TEST(KnApply, OneEventScalar) {
    const Vector k = kn_apply(scalar_model(), history(0, {{1, 1.0, ""}}), Vector::Ones(1));
    EXPECT_NEAR(k(0).real(), std::exp(-0.5), 1e-12);
    EXPECT_NEAR(joint_density(scalar_model(), history(0, {{1, 1.0, ""}}), Vector::Ones(1)), std::exp(-1.0), 1e-12);
}

TEST(KnApply, MissingJumpGivesZeroVector) {
    // 0 -> 1 -> 0 in an absorbing model: there is no way back.
    const Vector k = kn_apply(scalar_model(), history(0, {{1, 1.0, ""}, {0, 2.0, ""}}), Vector::Ones(1));
    ASSERT_EQ(k.size(), 1);
    EXPECT_EQ(k(0), Complex(0.0, 0.0));
    EXPECT_EQ(joint_density_chained(scalar_model(), history(0, {{1, 1.0, ""}, {0, 2.0, ""}}), Vector::Ones(1)), 0.0);
}

TEST(KnApply, RepeatedSectorIsRejected) {
    try {
        kn_apply(scalar_model(), history(0, {{0, 1.0, ""}}), Vector::Ones(1));
        FAIL() << "expected a precondition error";
    } catch (const PreconditionError& e) {
        EXPECT_NE(std::string(e.what()).find("non-event"), std::string::npos);
    }
}

TEST(KnApply, TimesMustIncrease) {
    EXPECT_THROW(kn_apply(ring_model(), history(0, {{1, 1.0, ""}, {2, 1.0, ""}}), e0(2)), PreconditionError);
    auto h = history(0, {{1, 0.0, ""}});
    EXPECT_THROW(kn_apply(ring_model(), h, e0(2)), PreconditionError);
}

TEST(KnApply, UnnormalizedStartIsRejected) {
    EXPECT_THROW(kn_apply(scalar_model(), history(0, {}), 2.0 * Vector::Ones(1)), PreconditionError);
}

TEST(KnApply, EventFreeHistoryWithHorizon) {
    auto h = history(0, {});
    h.t_end = 2.0;
    EXPECT_NEAR(joint_density(scalar_model(), h, Vector::Ones(1)), std::exp(-2.0), 1e-12);
    EXPECT_NEAR(joint_density_chained(scalar_model(), h, Vector::Ones(1)), std::exp(-2.0), 1e-12);
}

TEST(JointDensity, ChainedProductAgrees) {
    const auto m = ring_model();
    Vector psi(2);
    psi << Complex(0.6, 0.0), Complex(0.0, 0.8);
    const auto h = history(0, {{1, 0.3, ""}, {0, 0.9, ""}, {2, 1.4, ""}, {1, 2.8, ""}});
    const double direct = joint_density(m, h, psi);
    const double chained = joint_density_chained(m, h, psi);
    ASSERT_GT(direct, 0.0);
    EXPECT_NEAR(chained, direct, 1e-10 * direct);
}

TEST(JointDensity, ChainedAgreesWithTimeDependence) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}, {2, 1, "c"}});
    m.add_jump(0, 1, OperatorProvider::history_dependent(1, 1, [](double t, History) { return scalar(1.0 + t); }));
    m.add_jump(1, 2, OperatorProvider::history_dependent(1, 1, [](double, History h) {
        return scalar(h.empty() ? 0.0 : 1.0 + h.back().time);
    }));
    const auto h = history(0, {{1, 0.5, ""}, {2, 1.5, ""}});
    // Rate (1+t)^2 then (1.5)^2: closed form of the joint density.
    const double s1 = std::exp(-(std::pow(1.5, 3) - 1.0) / 3.0);
    const double want = s1 * 2.25 * std::exp(-2.25 * 1.0) * 2.25;
    EXPECT_NEAR(joint_density(m, h, Vector::Ones(1)), want, 1e-9 * want);
    EXPECT_NEAR(joint_density_chained(m, h, Vector::Ones(1)), want, 1e-9 * want);
}

TEST(JointDensity, IntegratesToOneWithSurvival) {
    // Absorbing target: P(event before T) + P(no event by T) = 1.
    const auto m = driven_qubit(0.8);
    const double T = 40.0;
    const double event_mass = simpson(
        [&](double t) { return joint_density(m, history(0, {{1, std::max(t, 1e-12), ""}}), e0(2)); }, 0.0, T, 2000);
    const double quiet = no_event_probability(m, 0, e0(2), 0.0, T);
    EXPECT_NEAR(event_mass + quiet, 1.0, 1e-6);
}

TEST(JointDensity, LabelsSelectParallelChannels) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}});
    m.add_jump(0, 1, OperatorProvider::constant(scalar(1.0)), "slow");
    m.add_jump(0, 1, OperatorProvider::constant(scalar(2.0)), "fast");
    const double slow = joint_density(m, history(0, {{1, 1.0, "slow"}}), Vector::Ones(1));
    const double fast = joint_density(m, history(0, {{1, 1.0, "fast"}}), Vector::Ones(1));
    EXPECT_NEAR(slow, std::exp(-5.0), 1e-12);
    EXPECT_NEAR(fast, 4.0 * std::exp(-5.0), 1e-12);
    EXPECT_THROW(joint_density(m, history(0, {{1, 1.0, ""}}), Vector::Ones(1)), PreconditionError);
    EXPECT_THROW(joint_density(m, history(0, {{1, 1.0, "other"}}), Vector::Ones(1)), PreconditionError);
}

TEST(NoEventProbability, Examples) {
    EXPECT_NEAR(no_event_probability(scalar_model(), 0, Vector::Ones(1), 0.0, 3.0), std::exp(-3.0), 1e-12);
    EXPECT_EQ(no_event_probability(scalar_model(), 1, Vector::Ones(1), 0.0, 3.0), 1.0);
    EXPECT_EQ(no_event_probability(scalar_model(), 0, Vector::Ones(1), 2.0, 2.0), 1.0);
    EXPECT_THROW(no_event_probability(scalar_model(), 0, Vector::Ones(1), 2.0, 1.0), PreconditionError);
}

TEST(NoEventProbability, NonIncreasingInHorizon) {
    const auto m = driven_qubit(1.0);
    double last = 1.0;
    for (double t = 0.25; t <= 10.0; t += 0.25) {
        const double p = no_event_probability(m, 0, e0(2), 0.0, t);
        EXPECT_LE(p, last + 1e-14);
        last = p;
    }
}

TEST(WindowedEventProbability, SumsToOne) {
    const auto m = ring_model();
    for (std::size_t n : {1u, 2u}) {
        const auto table = windowed_event_probability(m, 0, e0(2), {0.0, 0.3, 0.7, 1.2}, n);
        EXPECT_NEAR(table.total(), 1.0, 1e-4) << n;
        EXPECT_GT(table.overflow, 0.0);
        for (const auto& o : table.outcomes) {
            EXPECT_EQ(o.channels.size(), o.bins.size());
            EXPECT_LE(o.channels.size(), n);
            EXPECT_GE(o.probability, -1e-12);
        }
    }
}

TEST(WindowedEventProbability, NoDecayIsQuiet) {
    EventModel m({{0, 2, "closed"}});
    Matrix h(2, 2);
    h << 0.0, 1.0, 1.0, 0.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    const auto table = windowed_event_probability(m, 0, e0(2), {0.0, 20.0}, 1);
    EXPECT_NEAR(table.quiet, 1.0, 1e-10);
    EXPECT_TRUE(table.outcomes.empty());
}

TEST(WindowedEventProbability, CompetingChannelsSplitInEveryBin) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}, {2, 1, "c"}});
    m.add_jump(0, 1, OperatorProvider::constant(scalar(1.0)));
    m.add_jump(0, 2, OperatorProvider::constant(scalar(2.0)));
    const auto table = windowed_event_probability(m, 0, Vector::Ones(1), {0.0, 0.2, 0.5, 1.0, 2.5}, 1);
    std::vector<double> p1(4, 0.0), p2(4, 0.0);
    for (const auto& o : table.outcomes) (o.sectors.at(0) == 1 ? p1 : p2).at(o.bins.at(0)) += o.probability;
    for (std::size_t b = 0; b < 4; ++b) {
        EXPECT_NEAR(p1[b] / (p1[b] + p2[b]), 0.2, 1e-12) << b;
    }
    EXPECT_NEAR(table.total(), 1.0, 1e-4);
}

TEST(WindowedEventProbability, AbsorbingScalarOverLongBin) {
    const auto table = windowed_event_probability(scalar_model(), 0, Vector::Ones(1), {0.0, 20.0}, 1);
    ASSERT_EQ(table.outcomes.size(), 1u);
    EXPECT_NEAR(table.outcomes[0].probability, 1.0, 1e-4);
    EXPECT_NEAR(table.quiet, 0.0, 1e-8);
}

TEST(WindowedEventProbability, ScalarBinsMatchExponential) {
    const std::vector<double> edges{0.0, 0.5, 1.0, 3.0};
    const auto table = windowed_event_probability(scalar_model(), 0, Vector::Ones(1), edges, 2);
    ASSERT_EQ(table.outcomes.size(), 3u);
    for (const auto& o : table.outcomes) {
        const std::size_t b = o.bins.at(0);
        EXPECT_NEAR(o.probability, std::exp(-edges[b]) - std::exp(-edges[b + 1]), 1e-6);
    }
    EXPECT_NEAR(table.quiet, std::exp(-3.0), 1e-10);
}

TEST(WindowedEventProbability, RejectsUnsupportedRequests) {
    EXPECT_THROW(windowed_event_probability(scalar_model(), 0, Vector::Ones(1), {0.0, 1.0}, 3), PreconditionError);
    EXPECT_THROW(windowed_event_probability(scalar_model(), 0, Vector::Ones(1), {0.0, 1.0}, 0), PreconditionError);
    EXPECT_THROW(windowed_event_probability(scalar_model(), 0, Vector::Ones(1), {1.0, 1.0}, 1), PreconditionError);
    EXPECT_THROW(windowed_event_probability(scalar_model(), 0, Vector::Ones(1), {0.0}, 1), PreconditionError);
}

TEST(FirstEventTable, MarginalMatchesSurvivalDifferences) {
    const auto m = ring_model();
    const std::vector<double> edges{0.0, 0.5, 1.0, 2.0};
    const auto table = first_event_table(m, 0, e0(2), edges);
    EXPECT_NEAR(table.total(), 1.0, 1e-6);
    double first_bin = 0.0;
    for (const auto& o : table.outcomes) {
        if (o.bins.at(0) == 0) first_bin += o.probability;
    }
    EXPECT_NEAR(first_bin, 1.0 - no_event_probability(m, 0, e0(2), 0.0, 0.5), 1e-6);
    EXPECT_NEAR(table.quiet, no_event_probability(m, 0, e0(2), 0.0, 2.0), 1e-10);
}
