#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/rng.hpp"

namespace mlmc {

/// Weak rate alpha, coupled-variance rate beta and cost rate zeta.
struct RateParams {
    double alpha = 1.0;
    double beta = 1.0;
    double zeta = 1.0;

    void validate() const;
};

enum class AllocationRule {
    /// N_l = eps^-2 h_l^((beta+zeta)/2) K_L, K_L = sum_l h_l^((beta-zeta)/2).
    Standard,
    /// Same profile with K_L replaced by sqrt(K~_L) = sum_l h_l^((beta-zeta)/3)
    /// (the multilevel EnKF variant).
    EnsembleKalman,
};

/// Per-level sample counts for levels 1..L with h_l = 2^-l.
struct LevelSchedule {
    int max_level = 0;
    std::vector<std::int64_t> samples;  // samples[l-1] = N_l
    std::vector<double> step_sizes;     // step_sizes[l-1] = h_l
    double lagrange_constant = 0.0;     // K_L

    [[nodiscard]] std::int64_t samples_at(int l) const { return samples.at(static_cast<std::size_t>(l - 1)); }

    /// sum_l N_l 2^(l zeta), the planned cost in cost-units.
    [[nodiscard]] double cost(double zeta) const;

    /// Throws if sizes disagree, any N_l < 1, or h_l != 2^-l.
    void validate() const;

    /// Schedule with explicit counts (h_l filled in, K_L left at 0).
    static LevelSchedule from_samples(std::vector<std::int64_t> samples);
};

/// Output of an estimator run; also one unit of CSV output.
struct EstimatorReport {
    double value = 0.0;
    std::vector<double> per_level_means;
    std::vector<double> per_level_variances;
    std::vector<std::int64_t> per_level_samples;
    double total_cost = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

/// L = ceil(-log(eps) / (alpha log 2)), at least 1.
int choose_max_level(double epsilon, double alpha);

/// N_l = ceil(scale eps^-2 h_l^((beta+zeta)/2) K_L), with a floor of two
/// samples per level so every level variance is estimable.
LevelSchedule allocate_samples(double epsilon, const RateParams& rates, int max_level, double scale,
                               AllocationRule rule = AllocationRule::Standard);

using Sampler = std::function<double(RngStream&)>;
/// Returns (phi(fine), phi(coarse)) for one coupled draw at fine level l >= 2.
using CoupledSampler = std::function<std::pair<double, double>(int level, RngStream&)>;

/// Plain Monte Carlo with N >= 2 samples; cost = N * per_sample_cost.
EstimatorReport mc_estimate(const Sampler& sampler, std::int64_t n, const RngStream& stream,
                            double per_sample_cost = 1.0);

/**
 * Telescoping estimator: level-1 mean of phi_level1 plus, for l = 2..L, the
 * mean of coupled differences. Level l draws from stream.split(l) in fixed
 * chunks, so the result does not depend on the worker count. total_cost is
 * sum_l N_l 2^(l zeta).
 */
EstimatorReport mlmc_estimate(const CoupledSampler& coupled_sampler, const Sampler& phi_level1,
                              const LevelSchedule& schedule, const RngStream& stream, double zeta = 1.0);

struct LevelStat {
    int level = 0;
    double abs_mean_diff = 0.0;
    double var_diff = 0.0;
};

struct RateFit {
    double alpha = 0.0;
    double beta = 0.0;
    std::vector<std::string> warnings;
};

/// Negated least-squares slopes of log2|mean diff| and log2 var diff against
/// l. Non-positive entries are dropped with a warning; needs >= 3 levels.
RateFit fit_rates(std::span<const LevelStat> stats);

/// Pilot statistics per level: level 1 uses phi_level1 alone, l >= 2 the
/// coupled differences. n samples per level.
std::vector<LevelStat> pilot_level_stats(const CoupledSampler& coupled_sampler, const Sampler& phi_level1,
                                         int first_level, int last_level, std::int64_t n,
                                         const RngStream& stream);

/**
 * Scale such that allocate_samples meets a variance budget of
 * variance_fraction * eps^2 given pilot per-sample variances V_1..V_L:
 * scale = sum_l V_l h_l^-((beta+zeta)/2) / (K_L * variance_fraction).
 */
double calibrate_scale(std::span<const double> level_variances, const RateParams& rates,
                       double variance_fraction = 0.5, AllocationRule rule = AllocationRule::Standard);

}  // namespace mlmc
