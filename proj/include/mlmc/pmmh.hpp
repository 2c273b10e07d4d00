#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/engine.hpp"
#include "mlmc/particle_filter.hpp"
#include "mlmc/rng.hpp"

namespace mlmc {

/// Static-parameter model: theta -> partially observed diffusion, with a
/// prior on theta (log_prior is -inf outside the support).
struct ParamModel {
    std::function<HmmModel(const Vector& theta)> build;
    std::function<double(const Vector& theta)> log_prior;
    std::function<Vector(RngStream&)> prior_sampler;
    int dim = 1;
};

enum class OuParameter { Drift, ObservationScale };

/**
 * Scalar OU dynamics dU = -theta1 U dt + sigma dW observed with Gaussian
 * noise. The unknown is either theta1 (observation sd fixed) or the
 * observation standard deviation (theta1 fixed), with a uniform prior on
 * [prior_lo, prior_hi].
 */
ParamModel make_ou_param_model(OuParameter unknown, double fixed_drift, double sigma, double x0, double fixed_obs_sd,
                               std::vector<double> observations, double prior_lo, double prior_hi);

/// log Gcheck = max(log G(fine), log G(coarse)).
double coupled_potential(const HmmModel& model, const Vector& fine, const Vector& coarse, const Vector& y);

struct CorrectionWeights {
    double fine = 1.0;    // H-bar = prod G(fine_i) / Gcheck_i
    double coarse = 1.0;  // H-underbar = prod G(coarse_i) / Gcheck_i
};

/// Products over a trajectory pair; both lie in (0, 1] whenever G > 0.
CorrectionWeights correction_weights(const HmmModel& model, std::span<const Vector> fine_path,
                                     std::span<const Vector> coarse_path);

/// phi(theta, u_{1:k}).
using PathFunctional = std::function<double(const Vector& theta, std::span<const Vector> path)>;

struct PmmhOptions {
    std::size_t n_particles = 100;
    std::int64_t n_iters = 1000;
    /// Discarded prefix; -1 means n_iters / 10.
    std::int64_t burn_in = -1;
    double proposal_scale = 0.1;
    /// Robbins-Monro tuning of the proposal scale during burn-in.
    bool adapt = false;
    double target_acceptance = 0.234;
    std::optional<Vector> init;
    /// Average the H-weighted functionals over all final particles (weighted)
    /// instead of one traced trajectory pair per filter run.
    bool all_particles = false;
    /// Testing hooks: run both lanes at the fine level with shared noise, or
    /// weight pairs by G(fine) instead of Gcheck.
    bool coincident_lanes = false;
    bool fine_potential_only = false;
};

struct PmmhResult {
    std::vector<Vector> thetas;        // recorded iterations (after burn-in)
    std::vector<double> log_likelihoods;
    std::vector<double> phi_values;    // phi(theta, traced path) per recorded iteration
    double acceptance_rate = 0.0;      // over recorded iterations
    double final_scale = 0.0;
    std::int64_t filter_runs = 0;
    std::int64_t failed_filter_runs = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] double estimate() const;
    /// Batch-means standard error of estimate().
    [[nodiscard]] double standard_error() const;
};

/**
 * Particle marginal Metropolis-Hastings at one discretization level with a
 * Gaussian random-walk proposal on theta. Each iteration runs a fresh
 * bootstrap filter; a degenerate filter counts as a rejection.
 */
PmmhResult pmmh_chain(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                      const PmmhOptions& options, const RngStream& stream);

struct MlPmmhDifference {
    double value = 0.0;          // fine_ratio - coarse_ratio
    double standard_error = 0.0;  // delta method with batch means
    double fine_ratio = 0.0;     // sum phi(fine) H-bar / sum H-bar
    double coarse_ratio = 0.0;   // sum phi(coarse) H-underbar / sum H-underbar
    std::vector<double> h_fine;  // per recorded iteration
    std::vector<double> h_coarse;
    std::vector<double> phi_fine;
    std::vector<double> phi_coarse;
    double acceptance_rate = 0.0;
    std::int64_t filter_runs = 0;
    std::int64_t failed_filter_runs = 0;
};

/**
 * PMMH on the approximately coupled target at level l >= 2: the internal
 * filter moves pairs with the coupled kernel and weights them by Gcheck, and
 * the H weights of the sampled trajectory pairs correct both lanes back to
 * their own level.
 */
MlPmmhDifference ml_pmmh_difference(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                                    const PmmhOptions& options, const RngStream& stream);

/// Level-1 PMMH plus independent differences for l = 2..L; samples_at(l) is
/// the iteration count at level l. total_cost is n_particles * sum N_l 2^(l zeta).
EstimatorReport ml_pmmh_estimate(const ParamModel& model, const LevelSchedule& schedule, const PathFunctional& phi,
                                 const PmmhOptions& options, const RngStream& stream, double zeta = 1.0);

/// Single-level PMMH with n_iters iterations as an EstimatorReport;
/// total_cost is n_particles * n_iters * 2^(l zeta).
EstimatorReport pmmh_estimate(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                              const PmmhOptions& options, const RngStream& stream, double zeta = 1.0);

/// Posterior of a scalar OU parameter at a level on a midpoint grid over the
/// prior interval, with the exact Kalman likelihood of the Euler-discretized
/// model. Returns the posterior mean.
double ou_grid_posterior_mean(OuParameter unknown, double fixed_drift, double sigma, double x0, double fixed_obs_sd,
                              std::span<const double> observations, double prior_lo, double prior_hi, int level,
                              int points);

}  // namespace mlmc
