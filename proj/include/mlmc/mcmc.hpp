#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mlmc/rng.hpp"

namespace mlmc {

/// Unnormalized log-density; -inf outside the support.
struct LogTarget {
    std::function<double(const Vector&)> log_density;
    int dim = 1;
};

struct MhState {
    Vector current;
    double log_density_current = 0.0;
    std::int64_t accepted_count = 0;
    std::int64_t proposed_count = 0;

    static MhState start(const LogTarget& target, Vector init);
};

/// Centered Gaussian increment: scale * L z with L the Cholesky factor of a
/// base covariance (identity unless given).
class RandomWalkProposal {
public:
    static RandomWalkProposal isotropic(int dim, double scale);
    static RandomWalkProposal with_covariance(const Matrix& covariance, double scale = 1.0);

    [[nodiscard]] Vector draw(RngStream& stream) const;
    [[nodiscard]] double scale() const { return scale_; }
    void set_scale(double scale);
    [[nodiscard]] int dim() const { return static_cast<int>(chol_.rows()); }

private:
    RandomWalkProposal(Matrix chol, double scale) : chol_(std::move(chol)), scale_(scale) {}

    Matrix chol_;
    double scale_;
};

/// One random-walk Metropolis-Hastings transition, accepting with
/// probability min{1, exp(log pi(u') - log pi(u))}. A non-finite proposal
/// density counts as a rejection.
MhState rwmh_step(const LogTarget& target, MhState state, const RandomWalkProposal& proposal, RngStream& stream);

struct ChainOptions {
    std::int64_t n_steps = 1;
    /// Robbins-Monro tuning of the log-scale during burn-in, then frozen.
    bool adapt = false;
    /// Kernel applications discarded before recording; defaults to n_steps/2
    /// when adapting and 0 otherwise.
    std::int64_t burn_in = -1;
    double target_acceptance = 0.234;
};

struct ChainResult {
    std::vector<Vector> samples;  // one per recorded kernel application
    double acceptance_rate = 0.0; // over recorded steps only
    double final_scale = 0.0;
    MhState final_state;
};

ChainResult rwmh_chain(const LogTarget& target, Vector init, RandomWalkProposal proposal,
                       const ChainOptions& options, RngStream& stream);

}  // namespace mlmc
