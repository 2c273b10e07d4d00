#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mlmc/engine.hpp"
#include "mlmc/rng.hpp"
#include "mlmc/sde.hpp"

namespace mlmc {

/**
 * Partially observed diffusion: Euler-discretized dynamics between unit-time
 * observations and an observation log-density log G(u, y).
 *
 * A custom proposal moves `state` in place and returns the log of the
 * weight correction Q^l / q; without one the filter is the bootstrap filter
 * (proposal = dynamics, correction = 0).
 */
struct HmmModel {
    using ObsLogDensity = std::function<double(const Vector& state, const Vector& y)>;
    using Proposal = std::function<double(Vector& state, RngStream& stream, LevelIndex level)>;

    SdeModel sde;
    ObsLogDensity obs_log_density;
    std::vector<Vector> observations;
    Proposal proposal;
};

/// Scalar OU dynamics observed as y_k = u_k + N(0, obs_var).
HmmModel make_linear_gaussian_hmm(double theta, double sigma, double x0, double obs_var,
                                  std::vector<double> observations);

/// Gaussian log-density of y given mean, summed over coordinates.
double gaussian_log_density(double y, double mean, double var);

/// Raised when every particle has zero weight at some observation step.
class DegeneracyError : public std::runtime_error {
public:
    DegeneracyError(int step, int level, const std::string& where);
    [[nodiscard]] int step() const { return step_; }
    [[nodiscard]] int level() const { return level_; }

private:
    int step_;
    int level_;
};

struct WeightedEnsemble {
    std::vector<Vector> particles;
    std::vector<double> log_weights;
    ProbabilityVector weights;

    WeightedEnsemble(std::vector<Vector> particles, std::vector<double> log_weights);

    [[nodiscard]] double expectation(const std::function<double(const Vector&)>& phi) const;
};

std::vector<std::size_t> multinomial_resample(const ProbabilityVector& weights, std::size_t n, RngStream& stream);
std::vector<std::size_t> systematic_resample(const ProbabilityVector& weights, std::size_t n, RngStream& stream);
/// Systematic resampling with the single uniform offset u in [0, 1) given.
std::vector<std::size_t> systematic_resample_at(const ProbabilityVector& weights, std::size_t n, double u);

enum class ResamplingScheme { Multinomial, Systematic };

struct FilterOptions {
    ResamplingScheme scheme = ResamplingScheme::Multinomial;
    /// Resample only when ESS < ess_threshold * N. Off by default: the
    /// analyzed estimator resamples at every step.
    bool adaptive_resampling = false;
    double ess_threshold = 0.5;
    bool store_ensembles = true;
    /// Test function for the per-step filter estimates (default: first coordinate).
    std::function<double(const Vector&)> phi;
};

struct ParticleFilterResult {
    std::vector<WeightedEnsemble> ensembles;  // per observation step, before resampling
    std::vector<double> estimates;            // sum_i w_k^i phi(u_k^i)
    std::vector<double> log_normalizer_increments;
    double log_normalizer = 0.0;              // log Z-hat
};

ParticleFilterResult particle_filter_run(const HmmModel& model, LevelIndex level, std::size_t n_particles,
                                         const RngStream& stream, const FilterOptions& options = {});

/// alpha = sum_j min(wf_j, wc_j).
double coupling_probability(const ProbabilityVector& fine, const ProbabilityVector& coarse);

/**
 * Maximal-coupling resampling of two weight vectors: with probability alpha
 * both indices equal a draw from min(wf, wc) / alpha, otherwise they are
 * drawn independently from the normalized residuals. Each marginal is
 * exactly categorical(wf) resp. categorical(wc).
 */
std::vector<std::pair<std::size_t, std::size_t>> maximal_coupling_resample(const ProbabilityVector& fine,
                                                                           const ProbabilityVector& coarse,
                                                                           std::size_t n, RngStream& stream);

struct CoupledFilterResult {
    /// sum_i { phi(fine_i) wf_i - phi(coarse_i) wc_i } per observation step.
    std::vector<double> differences;
    std::vector<double> fine_estimates;
    std::vector<double> coarse_estimates;
    std::vector<double> coupling_probabilities;
};

/**
 * One level l >= 2 of the multilevel particle filter: pairs start from
 * the coupled kernel at (u_0, u_0), then alternate maximal-coupling
 * resampling and coupled moves. With coincident_lanes the coarse lane is
 * simulated at level l with the fine lane's noise (a testing hook whose
 * differences vanish identically).
 */
CoupledFilterResult coupled_particle_filter(const HmmModel& model, LevelIndex fine_level, std::size_t n_pairs,
                                            const std::function<double(const Vector&)>& phi, const RngStream& stream,
                                            bool coincident_lanes = false);

struct MlpfOptions {
    bool coincident_lanes = false;
    double zeta = 1.0;
};

struct MlpfResult {
    /// One report per observation step; per_level_means are the level-1
    /// filter estimate followed by the level differences. Per-level variances
    /// are not estimable from one run and are left NaN.
    std::vector<EstimatorReport> per_step;
};

/// Level-1 particle filter plus independent coupled filters for l = 2..L on
/// disjoint streams.
MlpfResult mlpf_run(const HmmModel& model, const LevelSchedule& schedule,
                    const std::function<double(const Vector&)>& phi, const RngStream& stream,
                    const MlpfOptions& options = {});

}  // namespace mlmc
