#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mlmc/engine.hpp"
#include "mlmc/rng.hpp"
#include "mlmc/sde.hpp"

namespace mlmc {

/// y_k = H u_k + N(0, Gamma).
struct LinearObsModel {
    Matrix H;
    Matrix Gamma;
    std::vector<Vector> observations;

    /// Throws unless H is m x dim, Gamma is m x m symmetric positive definite
    /// and every observation has m entries.
    void validate(int dim) const;
};

/// Members with their unbiased sample mean and covariance.
struct EnsembleState {
    std::vector<Vector> members;
    Vector mean;
    Matrix covariance;

    static EnsembleState from_members(std::vector<Vector> members);
};

/// Perturbed-observation analysis: K = C H^T (H C H^T + Gamma)^-1 from the
/// ensemble's own covariance, member n moved to u + K (y + xi_n - H u).
EnsembleState enkf_analysis(const EnsembleState& predicted, const LinearObsModel& obs, const Vector& y,
                            RngStream& stream);

/// Predict every member through the level-l Euler kernel, then analyse.
EnsembleState enkf_step(const SdeModel& model, const LinearObsModel& obs, const EnsembleState& ensemble,
                        LevelIndex level, const Vector& y, const RngStream& stream);

struct EnkfResult {
    std::vector<EnsembleState> analyses;  // one per observation
    double total_cost = 0.0;              // N 2^(l zeta)
};

/// EnKF from N copies of the initial state at a fixed level.
EnkfResult enkf_run(const SdeModel& model, const LinearObsModel& obs, std::size_t n_members, LevelIndex level,
                    const RngStream& stream, double zeta = 1.0);

/// Pair ensembles for levels l >= 2 (equal lengths).
struct CoupledEnsemble {
    std::vector<Vector> fine;
    std::vector<Vector> coarse;
};

/**
 * Multilevel covariance: the level-1 second moment minus the outer product
 * of its mean, plus for each l >= 2 the difference of fine and coarse second
 * moments minus the difference of the outer products of their means. All
 * averages are 1/N_l. Levels are summed in index order.
 */
Matrix ml_covariance(std::span<const Vector> level_one, std::span<const CoupledEnsemble> pairs);

/// Multilevel mean: level-1 mean plus sum of fine-minus-coarse means.
Vector ml_mean(std::span<const Vector> level_one, std::span<const CoupledEnsemble> pairs);

/// Symmetric eigenvalue clipping at zero. Inputs are symmetrized first;
/// asymmetry beyond tolerance * max(1, |C|_F) throws.
Matrix psd_modification(const Matrix& c, double tolerance = 1e-10);

struct MlenkfOptions {
    /// Run both lanes of each pair at the fine level with shared noise.
    bool coincident_lanes = false;
    double zeta = 1.0;
};

struct MlenkfResult {
    std::vector<Vector> means;                  // multilevel analysis mean per step
    std::vector<Matrix> covariances;            // multilevel analysis covariance per step
    std::vector<Matrix> forecast_covariances;   // C^ML used for the gain
    std::vector<Matrix> gains;
    /// max over steps, levels and pairs of |gap_after - (I - K H) gap_before|.
    double max_gap_identity_error = 0.0;
    /// Final-step per-level mean contributions (level 1, then differences).
    EstimatorReport report;
};

/**
 * Multilevel EnKF. Each step: coupled prediction (level 1 alone, pairs via
 * the coupled kernel), multilevel forecast covariance C^ML, gain
 * K = C^ML H^T (H C_+ H^T + Gamma)^-1 with C_+ = psd_modification(C^ML), and
 * the shared-gain perturbed-observation update. Both members of a pair see
 * the same perturbed observation; level-1 members draw their own.
 */
MlenkfResult mlenkf_run(const SdeModel& model, const LinearObsModel& obs, const LevelSchedule& schedule,
                        const RngStream& stream, const MlenkfOptions& options = {});

}  // namespace mlmc
