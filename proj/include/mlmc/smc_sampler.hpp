#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mlmc/engine.hpp"
#include "mlmc/mcmc.hpp"
#include "mlmc/rng.hpp"

namespace mlmc {

/**
 * Targets pi_1..pi_L on a common space, known through unnormalized
 * log-densities log kappa_l. Level l >= 2 mutates with random-walk
 * Metropolis-Hastings targeting kappa_l; level 1 is drawn by
 * initial_sampler (exact, or an MCMC surrogate).
 */
struct TargetSequence {
    std::vector<std::function<double(const Vector&)>> log_kappas;  // [l-1] = log kappa_l
    std::function<Vector(RngStream&)> initial_sampler;
    int dim = 1;
    int mutation_steps = 5;

    [[nodiscard]] int levels() const { return static_cast<int>(log_kappas.size()); }
    void validate() const;
};

/// kappa_l(u) = exp(-u^2 / (2 variances[l-1])) on R, with exact sampling at level 1.
TargetSequence make_gaussian_bridge(std::vector<double> variances);

struct SmcLevel {
    std::vector<Vector> particles;  // equally weighted, after mutation
    double log_z_ratio = 0.0;       // estimate of log(Z_l / Z_1)
    double acceptance_rate = 0.0;   // of the mutation kernel (0 at level 1)
};

struct SmcRun {
    std::vector<SmcLevel> levels;
};

/**
 * Runs levels 1..n_schedule.size(): reweight the level-(l-1) particles by
 * kappa_l / kappa_{l-1}, resample N_l of them (multinomial), then apply
 * mutation_steps RWMH moves targeting kappa_l with a proposal covariance of
 * 2.38^2/d times the population covariance.
 */
SmcRun smc_sampler_run(const TargetSequence& seq, std::span<const std::int64_t> n_schedule, const RngStream& stream);

/// Self-normalized estimate of E_{pi_l}[phi] from the level-(l-1) ensemble,
/// weights r_l = kappa_l / kappa_{l-1}.
double snis_estimate(const TargetSequence& seq, const std::vector<Vector>& previous, int level,
                     const std::function<double(const Vector&)>& phi);

/**
 * Multilevel estimate of E_{pi_L}[phi], L = schedule.max_level:
 * SNIS_{1->2} + sum_{l=3..L} (SNIS_{l-1->l} - mean_{l-1}), from one sampler
 * run up to level L-1 (N_L is unused). total_cost counts
 * sum_{l<L} N_l 2^(l zeta) plus the N_{L-1} evaluations at level L.
 */
EstimatorReport mlsmc_estimate(const TargetSequence& seq, const std::function<double(const Vector&)>& phi,
                               const LevelSchedule& schedule, const RngStream& stream, double zeta = 1.0);

/// Plain SMC sampler with N particles at every level up to max_level; the
/// estimate is the final ensemble mean. Cost sum_l N 2^(l zeta).
EstimatorReport smc_estimate(const TargetSequence& seq, const std::function<double(const Vector&)>& phi,
                             std::int64_t n, int max_level, const RngStream& stream, double zeta = 1.0);

struct WeightDeviation {
    int level = 0;
    double sup = 0.0;  // empirical sup over the ensemble
    double l2 = 0.0;   // root mean square over the ensemble
};

/**
 * Plug-in estimates of |r_l(u) Z_{l-1} / Z_l - 1| over the level-(l-1)
 * particles, with the normalizer ratio estimated by the ensemble mean of r_l.
 * Reported for every level l >= 2 whose predecessor ensemble is in the run.
 */
std::vector<WeightDeviation> weight_deviation_profile(const TargetSequence& seq, const SmcRun& run);

}  // namespace mlmc
