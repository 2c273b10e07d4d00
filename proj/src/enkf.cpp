#include "mlmc/enkf.hpp"

#include <cmath>
#include <stdexcept>

#include "detail.hpp"
#include "mlmc/parallel.hpp"

namespace mlmc {

namespace {

constexpr std::uint64_t kLanePropagate = 1;
constexpr std::uint64_t kLanePerturb = 2;

Vector sample_mean(std::span<const Vector> xs) {
    Vector m = Vector::Zero(xs.front().size());
    for (const auto& x : xs) m += x;
    return m / static_cast<double>(xs.size());
}

// (1/N) sum x x^T - mean mean^T.
Matrix second_moment_minus_outer(std::span<const Vector> xs) {
    const auto d = xs.front().size();
    Matrix s = Matrix::Zero(d, d);
    for (const auto& x : xs) s.noalias() += x * x.transpose();
    s /= static_cast<double>(xs.size());
    const Vector m = sample_mean(xs);
    return s - m * m.transpose();
}

Matrix gamma_cholesky(const LinearObsModel& obs) {
    Eigen::LLT<Matrix> llt(obs.Gamma);
    return llt.matrixL();
}

}  // namespace

void LinearObsModel::validate(int dim) const {
    if (H.cols() != dim) throw std::invalid_argument("LinearObsModel: H must have dim columns");
    if (Gamma.rows() != H.rows() || Gamma.cols() != H.rows())
        throw std::invalid_argument("LinearObsModel: Gamma must be m x m");
    if ((Gamma - Gamma.transpose()).norm() > 1e-12 * std::max(1.0, Gamma.norm()))
        throw std::invalid_argument("LinearObsModel: Gamma must be symmetric");
    if (Eigen::LLT<Matrix>(Gamma).info() != Eigen::Success)
        throw std::invalid_argument("LinearObsModel: Gamma must be positive definite");
    for (const auto& y : observations)
        if (y.size() != H.rows()) throw std::invalid_argument("LinearObsModel: observation has wrong size");
}

EnsembleState EnsembleState::from_members(std::vector<Vector> members) {
    if (members.size() < 2) throw std::invalid_argument("EnsembleState: need at least 2 members");
    EnsembleState e;
    const auto n = static_cast<double>(members.size());
    e.mean = sample_mean(members);
    const auto d = e.mean.size();
    e.covariance = Matrix::Zero(d, d);
    for (const auto& x : members) e.covariance.noalias() += (x - e.mean) * (x - e.mean).transpose();
    e.covariance /= n - 1.0;
    e.members = std::move(members);
    return e;
}

EnsembleState enkf_analysis(const EnsembleState& predicted, const LinearObsModel& obs, const Vector& y,
                            RngStream& stream) {
    const Matrix& C = predicted.covariance;
    const Matrix S = obs.H * C * obs.H.transpose() + obs.Gamma;
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw std::runtime_error("enkf_analysis: innovation covariance is singular");
    const Matrix K = llt.solve(obs.H * C.transpose()).transpose();
    const Matrix L = gamma_cholesky(obs);
    std::vector<Vector> out(predicted.members.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Vector& u = predicted.members[i];
        const Vector yp = y + L * stream.gaussian_vector(static_cast<int>(y.size()));
        out[i] = u + K * (yp - obs.H * u);
    }
    return EnsembleState::from_members(std::move(out));
}

EnsembleState enkf_step(const SdeModel& model, const LinearObsModel& obs, const EnsembleState& ensemble,
                        LevelIndex level, const Vector& y, const RngStream& stream) {
    std::vector<Vector> members = ensemble.members;
    detail::for_each_particle(members.size(), model.dim, stream.split(kLanePropagate),
                              [&](std::size_t i, RngStream& s, EulerWorkspace& ws) {
                                  simulate_unit_interval_inplace(model, level, members[i], s, ws);
                              });
    RngStream ps = stream.split(kLanePerturb);
    return enkf_analysis(EnsembleState::from_members(std::move(members)), obs, y, ps);
}

EnkfResult enkf_run(const SdeModel& model, const LinearObsModel& obs, std::size_t n_members, LevelIndex level,
                    const RngStream& stream, double zeta) {
    obs.validate(model.dim);
    if (obs.observations.empty()) throw std::invalid_argument("enkf_run: no observations");
    EnkfResult r;
    auto state = EnsembleState::from_members(std::vector<Vector>(n_members, model.initial_state));
    for (std::size_t k = 0; k < obs.observations.size(); ++k) {
        state = enkf_step(model, obs, state, level, obs.observations[k], stream.split(k));
        r.analyses.push_back(state);
    }
    r.total_cost = static_cast<double>(n_members) * std::exp2(level.l() * zeta);
    return r;
}

Matrix ml_covariance(std::span<const Vector> level_one, std::span<const CoupledEnsemble> pairs) {
    if (level_one.empty()) throw std::invalid_argument("ml_covariance: empty level-1 ensemble");
    Matrix c = second_moment_minus_outer(level_one);
    for (const auto& p : pairs) {
        if (p.fine.empty() || p.fine.size() != p.coarse.size())
            throw std::invalid_argument("ml_covariance: pair ensembles must be non-empty and equal in size");
        const auto n = static_cast<double>(p.fine.size());
        const auto d = c.rows();
        Matrix diff = Matrix::Zero(d, d);
        for (std::size_t i = 0; i < p.fine.size(); ++i)
            diff.noalias() += p.fine[i] * p.fine[i].transpose() - p.coarse[i] * p.coarse[i].transpose();
        diff /= n;
        const Vector mf = sample_mean(p.fine), mc = sample_mean(p.coarse);
        c += diff - mf * mf.transpose() + mc * mc.transpose();
    }
    return c;
}

Vector ml_mean(std::span<const Vector> level_one, std::span<const CoupledEnsemble> pairs) {
    Vector m = sample_mean(level_one);
    for (const auto& p : pairs) m += sample_mean(p.fine) - sample_mean(p.coarse);
    return m;
}

Matrix psd_modification(const Matrix& c, double tolerance) {
    if (c.rows() != c.cols()) throw std::invalid_argument("psd_modification: matrix must be square");
    if ((c - c.transpose()).norm() > tolerance * std::max(1.0, c.norm()))
        throw std::invalid_argument("psd_modification: matrix is not symmetric");
    const Matrix sym = 0.5 * (c + c.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
    if (clipped == eig.eigenvalues()) return sym;
    return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

MlenkfResult mlenkf_run(const SdeModel& model, const LinearObsModel& obs, const LevelSchedule& schedule,
                        const RngStream& stream, const MlenkfOptions& options) {
    schedule.validate();
    obs.validate(model.dim);
    if (schedule.max_level < 2) throw std::invalid_argument("mlenkf_run: need max_level >= 2");
    if (obs.observations.empty()) throw std::invalid_argument("mlenkf_run: no observations");
    const int L = schedule.max_level;
    const auto n1 = static_cast<std::size_t>(schedule.samples_at(1));
    if (n1 < 2) throw std::invalid_argument("mlenkf_run: level 1 needs at least 2 members");

    std::vector<Vector> level_one(n1, model.initial_state);
    std::vector<CoupledEnsemble> pairs(static_cast<std::size_t>(L - 1));
    for (int l = 2; l <= L; ++l) {
        const auto n = static_cast<std::size_t>(schedule.samples_at(l));
        pairs[static_cast<std::size_t>(l - 2)] = {std::vector<Vector>(n, model.initial_state),
                                                  std::vector<Vector>(n, model.initial_state)};
    }
    const Matrix gamma_l = gamma_cholesky(obs);
    const auto m = static_cast<int>(obs.H.rows());
    const Matrix I = Matrix::Identity(model.dim, model.dim);

    MlenkfResult out;
    for (std::size_t k = 0; k < obs.observations.size(); ++k) {
        // Prediction; levels are independent until the covariance reduction.
        parallel_for(static_cast<std::size_t>(L), [&](std::size_t idx) {
            const int l = static_cast<int>(idx) + 1;
            const RngStream s = stream.derive(k, static_cast<std::uint64_t>(l), kLanePropagate);
            if (l == 1) {
                detail::for_each_particle(n1, model.dim, s, [&](std::size_t i, RngStream& r, EulerWorkspace& ws) {
                    simulate_unit_interval_inplace(model, LevelIndex(1), level_one[i], r, ws);
                });
                return;
            }
            auto& p = pairs[idx - 1];
            const LevelIndex level(l);
            detail::for_each_particle(p.fine.size(), model.dim, s, [&](std::size_t i, RngStream& r, EulerWorkspace& ws) {
                if (options.coincident_lanes) {
                    RngStream replay = r;
                    simulate_unit_interval_inplace(model, level, p.fine[i], r, ws);
                    simulate_unit_interval_inplace(model, level, p.coarse[i], replay, ws);
                } else {
                    coupled_transition_inplace(model, p.fine[i], p.coarse[i], level, r, ws);
                }
            });
        });

        const Matrix c_ml = ml_covariance(level_one, pairs);
        const Matrix c_plus = psd_modification(c_ml, 1e-8);
        const Matrix S = obs.H * c_plus * obs.H.transpose() + obs.Gamma;
        Eigen::LLT<Matrix> llt(S);
        if (llt.info() != Eigen::Success) throw std::runtime_error("mlenkf_run: innovation covariance is singular");
        const Matrix K = llt.solve(obs.H * c_ml.transpose()).transpose();
        const Matrix A = I - K * obs.H;
        const Vector& y = obs.observations[k];

        std::vector<double> gap_err(static_cast<std::size_t>(L), 0.0);
        parallel_for(static_cast<std::size_t>(L), [&](std::size_t idx) {
            const int l = static_cast<int>(idx) + 1;
            RngStream ps = stream.derive(k, static_cast<std::uint64_t>(l), kLanePerturb);
            if (l == 1) {
                for (auto& u : level_one) u = A * u + K * (y + gamma_l * ps.gaussian_vector(m));
                return;
            }
            auto& p = pairs[idx - 1];
            double worst = 0.0;
            for (std::size_t i = 0; i < p.fine.size(); ++i) {
                const Vector gap_before = p.fine[i] - p.coarse[i];
                const Vector yp = y + gamma_l * ps.gaussian_vector(m);
                p.fine[i] = A * p.fine[i] + K * yp;
                p.coarse[i] = A * p.coarse[i] + K * yp;
                const Vector expected = A * gap_before;
                const double scale = std::max(1.0, expected.norm());
                worst = std::max(worst, (p.fine[i] - p.coarse[i] - expected).norm() / scale);
            }
            gap_err[idx] = worst;
        });
        for (double e : gap_err) out.max_gap_identity_error = std::max(out.max_gap_identity_error, e);

        out.forecast_covariances.push_back(c_ml);
        out.gains.push_back(K);
        out.means.push_back(ml_mean(level_one, pairs));
        out.covariances.push_back(ml_covariance(level_one, pairs));
    }

    EstimatorReport& rep = out.report;
    rep.seed = stream.seed();
    rep.per_level_samples = schedule.samples;
    rep.per_level_means.push_back(sample_mean(level_one)(0));
    rep.per_level_variances.push_back(second_moment_minus_outer(level_one)(0, 0));
    for (const auto& p : pairs) {
        std::vector<double> diffs(p.fine.size());
        for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = p.fine[i](0) - p.coarse[i](0);
        double mu = 0.0;
        for (double d : diffs) mu += d;
        mu /= static_cast<double>(diffs.size());
        double v = 0.0;
        for (double d : diffs) v += (d - mu) * (d - mu);
        rep.per_level_means.push_back(mu);
        rep.per_level_variances.push_back(diffs.size() > 1 ? v / static_cast<double>(diffs.size() - 1) : 0.0);
    }
    rep.value = out.means.back()(0);
    rep.total_cost = schedule.cost(options.zeta);
    return out;
}

}  // namespace mlmc
