#include <gtest/gtest.h>

#include <random>

#include "emodel/model.hpp"

using namespace emodel;

namespace {

Matrix scalar(double g) { return Matrix::Constant(1, 1, Complex(g, 0.0)); }

EventModel scalar_model(double g = 1.0) {
    EventModel m({{0, 1, "ready"}, {1, 1, "fired"}});
    m.add_jump(0, 1, OperatorProvider::constant(scalar(g)));
    return m;
}

bool mentions(const ValidationReport& r, const std::string& text) {
    for (const auto& v : r.violations) {
        if (v.find(text) != std::string::npos) return true;
    }
    return false;
}

Matrix diag2(double a, double b) {
    Matrix m = Matrix::Zero(2, 2);
    m(0, 0) = a;
    m(1, 1) = b;
    return m;
}

} // namespace

TEST(ValidateModel, MinimalScalarModelIsValid) {
    EXPECT_TRUE(validate_model(scalar_model()).valid());
}

TEST(ValidateModel, DiagonalJumpIsRejected) {
    auto m = scalar_model();
    m.add_jump(0, 0, OperatorProvider::constant(scalar(1.0)));
    const auto r = validate_model(m);
    EXPECT_FALSE(r.valid());
    EXPECT_TRUE(mentions(r, "diagonal jump"));
}

TEST(ValidateModel, NonHermitianHamiltonian) {
    EventModel m({{0, 2, "a"}});
    Matrix h(2, 2);
    h << 0.0, 1.0, 0.0, 0.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    const auto r = validate_model(m);
    EXPECT_TRUE(mentions(r, "non-Hermitian Hamiltonian"));
}

TEST(ValidateModel, EmptySectorSet) {
    EXPECT_TRUE(mentions(validate_model(EventModel{}), "empty sector set"));
}

TEST(ValidateModel, ReportsEveryViolation) {
    EventModel m({{0, 2, "a"}, {1, 1, "b"}});
    Matrix h(2, 2);
    h << 0.0, 1.0, 0.0, 0.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    m.add_jump(0, 0, OperatorProvider::constant(Matrix::Identity(2, 2)));
    m.add_jump(0, 1, OperatorProvider::constant(Matrix::Identity(2, 2)));  // should be 1x2
    const auto r = validate_model(m);
    EXPECT_TRUE(mentions(r, "non-Hermitian"));
    EXPECT_TRUE(mentions(r, "diagonal jump"));
    EXPECT_TRUE(mentions(r, "expected 1x2"));
    EXPECT_EQ(r.violations.size(), 3u);
}

TEST(ValidateModel, PiecewiseBreakpointsMustIncrease) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}});
    m.add_jump(0, 1, OperatorProvider::piecewise({2.0, 1.0}, {scalar(1), scalar(2), scalar(3)}));
    EXPECT_TRUE(mentions(validate_model(m), "strictly increasing"));
}

TEST(ValidateModel, LabelRecordAllowsLabelledSelfJumps) {
    EventModel m({{0, 1, "record"}}, EventModel::Mode::label_record);
    m.add_jump(0, 0, OperatorProvider::constant(scalar(1.0)), "x");
    EXPECT_TRUE(validate_model(m).valid());
    m.add_jump(0, 0, OperatorProvider::constant(scalar(1.0)));
    EXPECT_TRUE(mentions(validate_model(m), "requires a label"));
}

TEST(ValidateModel, RectangularJumpsBetweenDimensions) {
    EventModel m({{0, 2, "a"}, {1, 3, "b"}});
    m.add_jump(0, 1, OperatorProvider::constant(Matrix::Ones(3, 2)));
    EXPECT_TRUE(validate_model(m).valid());
}

TEST(EventModel, OutOfRangeSectorThrows) {
    auto m = scalar_model();
    EXPECT_THROW(m.add_jump(0, 5, OperatorProvider::constant(scalar(1))), std::exception);
}

TEST(OperatorProvider, PiecewiseSelectsByTimeAndLimit) {
    const auto p = OperatorProvider::piecewise({1.0, 2.0}, {scalar(10), scalar(20), scalar(30)});
    EXPECT_EQ(p.at(0.5)(0, 0).real(), 10.0);
    EXPECT_EQ(p.at(1.0)(0, 0).real(), 20.0);
    EXPECT_EQ(p.at(1.0, {}, Limit::left)(0, 0).real(), 10.0);
    EXPECT_EQ(p.at(2.5)(0, 0).real(), 30.0);
}

TEST(OperatorProvider, HistoryDependentSeesEvents) {
    const auto p = OperatorProvider::history_dependent(1, 1, [](double, History h) {
        return scalar(static_cast<double>(h.size()));
    });
    std::vector<Event> events(3);
    EXPECT_EQ(p.at(0.0, events)(0, 0).real(), 3.0);
}

TEST(OperatorProvider, WrongShapeFromCallbackThrows) {
    const auto p = OperatorProvider::history_dependent(2, 2, [](double, History) { return scalar(1.0); });
    EXPECT_THROW(p.at(0.0), DimensionError);
}

TEST(LambdaOf, ScalarModel) {
    const auto m = scalar_model();
    EXPECT_EQ(lambda_of(m, 0, 0.0)(0, 0), Complex(1.0, 0.0));
    EXPECT_EQ(lambda_of(m, 1, 0.0)(0, 0), Complex(0.0, 0.0));
}

TEST(LambdaOf, SumsOverTargets) {
    EventModel m({{0, 1, "a"}, {1, 1, "b"}, {2, 1, "c"}});
    m.add_jump(0, 1, OperatorProvider::constant(scalar(1.0)));
    m.add_jump(0, 2, OperatorProvider::constant(scalar(2.0)));
    EXPECT_NEAR(lambda_of(m, 0, 0.0)(0, 0).real(), 5.0, 1e-15);
}

TEST(LambdaOf, RandomOperatorsArePsd) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    EventModel m({{0, 3, "a"}, {1, 2, "b"}, {2, 4, "c"}});
    auto rnd = [&](int r, int c) {
        Matrix g(r, c);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) g(i, j) = Complex(n(rng), n(rng));
        return g;
    };
    m.add_jump(0, 1, OperatorProvider::constant(rnd(2, 3)));
    m.add_jump(0, 2, OperatorProvider::constant(rnd(4, 3)));
    const Matrix l = lambda_of(m, 0, 0.0);
    EXPECT_GE(min_eigenvalue_hermitian(l), -1e-12 * spectral_norm(l));
}

TEST(EffectiveGenerator, ScalarPlugIn) {
    EXPECT_NEAR(std::abs(effective_generator(scalar_model(), 0, 0.0)(0, 0) - Complex(-0.5, 0.0)), 0.0, 1e-15);
}

TEST(EffectiveGenerator, DiagonalLambda) {
    EventModel m({{0, 2, "a"}, {1, 2, "b"}});
    m.add_jump(0, 1, OperatorProvider::constant(diag2(1.0, std::sqrt(2.0))));
    EXPECT_LE(max_abs_entry(effective_generator(m, 0, 0.0) - diag2(-0.5, -1.0)), 1e-15);
}

TEST(EffectiveGenerator, SkewHermitianWithoutDecay) {
    EventModel m({{0, 2, "a"}});
    Matrix h(2, 2);
    h << 1.0, Complex(0.0, 2.0), Complex(0.0, -2.0), -1.0;
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    const Matrix a = effective_generator(m, 0, 0.0);
    EXPECT_LE(max_abs_entry(a + a.adjoint()), 1e-15);
}

TEST(EffectiveGenerator, HermitianPartIsMinusLambda) {
    EventModel m({{0, 2, "a"}, {1, 2, "b"}});
    Matrix h(2, 2), g(2, 2);
    h << 0.3, Complex(0.1, 0.4), Complex(0.1, -0.4), -0.7;
    g << 0.2, Complex(1.0, 0.5), -0.3, Complex(0.0, 0.9);
    m.set_hamiltonian(0, OperatorProvider::constant(h));
    m.add_jump(0, 1, OperatorProvider::constant(g));
    const Matrix a = effective_generator(m, 0, 0.0);
    EXPECT_LE(max_abs_entry(a + a.adjoint() + lambda_of(m, 0, 0.0)), 1e-12);
}

TEST(TotalRate, Examples) {
    EventModel m({{0, 2, "a"}, {1, 2, "b"}});
    m.add_jump(0, 1, OperatorProvider::constant(diag2(1.0, 0.0)));
    Vector e0(2), mix(2);
    e0 << 1.0, 0.0;
    mix << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(total_rate(m, 0, e0, 0.0), 1.0, 1e-15);
    EXPECT_NEAR(total_rate(m, 0, mix, 0.0), 0.5, 1e-15);
    EXPECT_EQ(total_rate(m, 1, mix, 0.0), 0.0);
}

TEST(TotalRate, ScaleInvariant) {
    EventModel m({{0, 2, "a"}, {1, 2, "b"}});
    Matrix g(2, 2);
    g << 0.5, 1.0, Complex(0.0, 1.0), 0.2;
    m.add_jump(0, 1, OperatorProvider::constant(g));
    Vector psi(2);
    psi << Complex(0.3, 0.1), Complex(-0.8, 0.4);
    const double base = total_rate(m, 0, psi, 0.0);
    for (Complex c : {Complex(2.0, 0.0), Complex(0.0, -3.5), Complex(1e-3, 1e-3)}) {
        EXPECT_NEAR(total_rate(m, 0, c * psi, 0.0), base, 1e-12 * base);
    }
}

TEST(TotalRate, ZeroVectorThrows) {
    EXPECT_THROW(total_rate(scalar_model(), 0, Vector::Zero(1), 0.0), PreconditionError);
}
