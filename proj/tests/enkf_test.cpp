#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mlmc/enkf.hpp"
#include "mlmc/kalman.hpp"
#include "mlmc/stats.hpp"

using namespace mlmc;

namespace {

constexpr double kTheta = 0.5, kSigma = 0.8, kX0 = 1.0, kObsVar = 0.25;

std::vector<double> synthetic_observations(int n, std::uint64_t seed) {
    RngStream s(seed, 3);
    const auto tr = ou_exact_transition(kTheta, kSigma);
    std::vector<double> ys;
    double x = kX0;
    for (int k = 0; k < n; ++k) {
        x = tr.a * x + std::sqrt(tr.q) * s.normal();
        ys.push_back(x + std::sqrt(kObsVar) * s.normal());
    }
    return ys;
}

LinearObsModel scalar_obs(const std::vector<double>& ys, double gamma = kObsVar, double h = 1.0) {
    LinearObsModel o;
    o.H = Matrix::Constant(1, 1, h);
    o.Gamma = Matrix::Constant(1, 1, gamma);
    for (double y : ys) o.observations.push_back(Vector::Constant(1, y));
    return o;
}

KalmanResult level_oracle(const std::vector<double>& ys, int level) {
    auto m = ou_euler_transition(kTheta, kSigma, level);
    m.c = 1.0;
    m.r = kObsVar;
    m.m0 = kX0;
    m.p0 = 0.0;
    return kalman_filter(m, ys);
}

std::vector<Vector> random_members(std::size_t n, int d, RngStream& s) {
    std::vector<Vector> xs;
    for (std::size_t i = 0; i < n; ++i) xs.push_back(s.gaussian_vector(d));
    return xs;
}

}  // namespace

TEST(LinearObsModel, RejectsBadShapes) {
    LinearObsModel o = scalar_obs({0.0});
    EXPECT_NO_THROW(o.validate(1));
    EXPECT_THROW(o.validate(2), std::invalid_argument);
    o.Gamma(0, 0) = -1.0;
    EXPECT_THROW(o.validate(1), std::invalid_argument);
    o = scalar_obs({0.0});
    o.observations.push_back(Vector::Zero(2));
    EXPECT_THROW(o.validate(1), std::invalid_argument);
}

TEST(EnsembleState, StatisticsAreUnbiased) {
    const auto e = EnsembleState::from_members({Vector::Constant(1, 1.0), Vector::Constant(1, 3.0)});
    EXPECT_DOUBLE_EQ(e.mean(0), 2.0);
    EXPECT_DOUBLE_EQ(e.covariance(0, 0), 2.0);
    EXPECT_THROW(EnsembleState::from_members({Vector::Zero(1)}), std::invalid_argument);
}

TEST(EnkfAnalysis, ZeroObservationOperatorLeavesEnsemble) {
    RngStream s(1, 0);
    const auto e = EnsembleState::from_members(random_members(50, 2, s));
    LinearObsModel o;
    o.H = Matrix::Zero(1, 2);
    o.Gamma = Matrix::Identity(1, 1);
    const auto a = enkf_analysis(e, o, Vector::Constant(1, 5.0), s);
    for (std::size_t i = 0; i < e.members.size(); ++i) EXPECT_EQ(a.members[i], e.members[i]);
}

TEST(EnkfAnalysis, HugeNoiseGivesNearIdentity) {
    RngStream s(2, 0);
    const auto e = EnsembleState::from_members(random_members(200, 1, s));
    const auto o = scalar_obs({0.0}, 1e8);
    const auto a = enkf_analysis(e, o, Vector::Constant(1, 3.0), s);
    for (std::size_t i = 0; i < e.members.size(); ++i)
        EXPECT_NEAR(a.members[i](0), e.members[i](0), 1e-3 * std::max(1.0, std::abs(e.members[i](0))));
}

TEST(Enkf, LargeEnsembleMatchesKalmanEachStep) {
    const auto ys = synthetic_observations(10, 1);
    const int level = 3;
    const auto oracle = level_oracle(ys, level);
    const auto r = enkf_run(make_ou(kTheta, kSigma, kX0), scalar_obs(ys), 10000, LevelIndex(level), RngStream(3, 0));
    ASSERT_EQ(r.analyses.size(), ys.size());
    const double n = 10000.0;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        const double v = oracle.filtered_var[k];
        EXPECT_NEAR(r.analyses[k].mean(0), oracle.filtered_mean[k], 3.0 * std::sqrt(v / n)) << "step " << k;
        EXPECT_NEAR(r.analyses[k].covariance(0, 0), v, 3.0 * v * std::sqrt(2.0 / (n - 1.0))) << "step " << k;
    }
    EXPECT_DOUBLE_EQ(r.total_cost, 10000.0 * 8.0);
}

TEST(MlCovariance, SingleLevelIsPlainSecondMomentFormula) {
    RngStream s(4, 0);
    const auto xs = random_members(30, 3, s);
    Matrix expected = Matrix::Zero(3, 3);
    Vector m = Vector::Zero(3);
    for (const auto& x : xs) {
        expected += x * x.transpose();
        m += x;
    }
    expected /= 30.0;
    m /= 30.0;
    expected -= m * m.transpose();
    EXPECT_LT((ml_covariance(xs, {}) - expected).norm(), 1e-14);
}

TEST(MlCovariance, IdenticalPairsCancel) {
    RngStream s(5, 0);
    const auto xs = random_members(30, 2, s);
    std::vector<CoupledEnsemble> pairs;
    for (int l = 2; l <= 4; ++l) {
        auto f = random_members(10, 2, s);
        pairs.push_back({f, f});
    }
    EXPECT_EQ(ml_covariance(xs, pairs), ml_covariance(xs, {}));
    EXPECT_EQ(ml_mean(xs, pairs), ml_mean(xs, {}));
}

TEST(MlCovariance, LevelOrderDoesNotMatter) {
    RngStream s(6, 0);
    const auto xs = random_members(20, 2, s);
    std::vector<CoupledEnsemble> pairs;
    for (int l = 2; l <= 5; ++l) pairs.push_back({random_members(8, 2, s), random_members(8, 2, s)});
    const Matrix forward = ml_covariance(xs, pairs);
    std::reverse(pairs.begin(), pairs.end());
    EXPECT_LT((ml_covariance(xs, pairs) - forward).norm(), 1e-12);
}

TEST(MlCovariance, RejectsUnpairedEnsembles) {
    RngStream s(7, 0);
    const auto xs = random_members(5, 1, s);
    std::vector<CoupledEnsemble> pairs{{random_members(3, 1, s), random_members(4, 1, s)}};
    EXPECT_THROW(ml_covariance(xs, pairs), std::invalid_argument);
}

TEST(PsdModification, ClipsNegativeEigenvalues) {
    EXPECT_EQ(psd_modification(Matrix::Identity(3, 3)), Matrix::Identity(3, 3));
    Matrix c = Matrix::Zero(2, 2);
    c(0, 0) = 1.0;
    c(1, 1) = -0.5;
    Matrix expected = Matrix::Zero(2, 2);
    expected(0, 0) = 1.0;
    EXPECT_LT((psd_modification(c) - expected).norm(), 1e-15);
    Matrix asym = Matrix::Identity(2, 2);
    asym(0, 1) = 0.1;
    EXPECT_THROW(psd_modification(asym), std::invalid_argument);
    EXPECT_THROW(psd_modification(Matrix::Zero(2, 3)), std::invalid_argument);
}

TEST(PsdModification, MatchesFactoredGradientOracle) {
    // Nearest PSD matrix by gradient descent on X = B B^T, independent of any
    // eigendecomposition.
    RngStream s(8, 0);
    for (int rep = 0; rep < 10; ++rep) {
        Matrix a(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) a(i, j) = s.normal();
        const Matrix c = 0.5 * (a + a.transpose());
        Matrix b(3, 3);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) b(i, j) = 0.5 * s.normal();
        for (int it = 0; it < 40000; ++it) b -= 0.01 * 4.0 * (b * b.transpose() - c) * b;
        const Matrix oracle = b * b.transpose();
        const Matrix cp = psd_modification(c);
        EXPECT_LT((cp - oracle).norm(), 1e-4) << "rep " << rep;
        EXPECT_LE((cp - c).norm(), (oracle - c).norm() + 1e-9);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(cp);
        EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-12);
    }
}

TEST(Mlenkf, CoincidentLanesReduceToLevelOne) {
    const auto ys = synthetic_observations(6, 2);
    MlenkfOptions o;
    o.coincident_lanes = true;
    const auto sched = LevelSchedule::from_samples({200, 50, 20});
    const auto r = mlenkf_run(make_ou(kTheta, kSigma, kX0), scalar_obs(ys), sched, RngStream(9, 0), o);
    EXPECT_EQ(r.report.per_level_means[1], 0.0);
    EXPECT_EQ(r.report.per_level_means[2], 0.0);
    EXPECT_EQ(r.report.value, r.report.per_level_means[0]);
    EXPECT_LE(r.max_gap_identity_error, 1e-10);
}

TEST(Mlenkf, GapPropagationIdentityHolds) {
    const auto ys = synthetic_observations(8, 3);
    const auto sched = LevelSchedule::from_samples({300, 80, 30, 10});
    const auto r = mlenkf_run(make_ou(kTheta, kSigma, kX0), scalar_obs(ys), sched, RngStream(10, 0));
    EXPECT_LE(r.max_gap_identity_error, 1e-10);
    EXPECT_EQ(r.means.size(), ys.size());
    EXPECT_EQ(r.gains.size(), ys.size());
    EXPECT_DOUBLE_EQ(r.report.total_cost, 300 * 2 + 80 * 4 + 30 * 8 + 10 * 16);
}

TEST(Mlenkf, MatchesKalmanOracleAtFinalStep) {
    const auto ys = synthetic_observations(5, 4);
    const int L = 4;
    const auto fine = level_oracle(ys, L);
    const auto reference = level_oracle(ys, 12);
    const auto sched = LevelSchedule::from_samples({2000, 600, 250, 100});
    const int reps = 30;
    RunningStats mm, vv;
    for (int r = 0; r < reps; ++r) {
        const auto res = mlenkf_run(make_ou(kTheta, kSigma, kX0), scalar_obs(ys), sched,
                                    RngStream(11, static_cast<std::uint64_t>(r)));
        mm.push(res.means.back()(0));
        vv.push(res.covariances.back()(0, 0));
    }
    const double mean_bias = std::abs(fine.filtered_mean.back() - reference.filtered_mean.back());
    const double var_bias = std::abs(fine.filtered_var.back() - reference.filtered_var.back());
    // Finite-ensemble bias of the gain is O(1/N_1); budget a few percent of the variance.
    const double ens_bias = 4.0 * reference.filtered_var.back() / 2000.0;
    EXPECT_NEAR(mm.mean(), reference.filtered_mean.back(), 3.0 * mm.standard_error() + mean_bias + ens_bias);
    EXPECT_NEAR(vv.mean(), reference.filtered_var.back(), 3.0 * vv.standard_error() + var_bias + ens_bias);
}

TEST(Mlenkf, RejectsSingleLevelSchedule) {
    EXPECT_THROW(mlenkf_run(make_ou(kTheta, kSigma, kX0), scalar_obs({0.0}), LevelSchedule::from_samples({10}),
                            RngStream(1, 0)),
                 std::invalid_argument);
}
