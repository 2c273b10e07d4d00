#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mlmc/rng.hpp"

namespace mlmc {

/**
 * dU = a(U) dt + b(U) dW on R^d with a deterministic initial state.
 *
 * Coefficients write into caller-owned buffers so the time-stepping loops
 * do not allocate. The supported class is Lipschitz coefficients; this is
 * documented, not enforced.
 */
struct SdeModel {
    using Drift = std::function<void(const Vector& u, Vector& out)>;
    using Diffusion = std::function<void(const Vector& u, Matrix& out)>;

    int dim = 1;
    Drift drift;
    Diffusion diffusion;
    Vector initial_state;
    Vector parameter;
    std::string name;

    /// Probes drift/diffusion at the initial state and a few perturbations and
    /// throws std::invalid_argument on dimension mismatches.
    void validate() const;
};

/// a(u) = theta1 u, b(u) = theta2 u (scalar).
SdeModel make_gbm(double theta1, double theta2, double x0);
/// a(u) = -theta1 u, b = theta2 (scalar, additive noise).
SdeModel make_ou(double theta1, double theta2, double x0);
/// a(u) = theta1 (u - u^3), b = theta2 (scalar, additive noise, double well).
SdeModel make_langevin_like(double theta1, double theta2, double x0);

/// Discretization level l >= 1 with h = 2^-l and 2^l steps per unit time.
class LevelIndex {
public:
    explicit LevelIndex(int l);

    [[nodiscard]] int l() const { return l_; }
    [[nodiscard]] double h() const;
    [[nodiscard]] std::int64_t steps_per_unit() const { return std::int64_t{1} << l_; }

private:
    int l_;
};

/// Fine and coarse components of a coupled pair.
struct CoupledState {
    Vector fine;
    Vector coarse;
};

/// Reusable buffers for allocation-free stepping.
struct EulerWorkspace {
    Vector drift;
    Matrix diffusion;
    Vector product;
    Vector noise;
    Vector noise_next;
    Vector noise_coarse;

    explicit EulerWorkspace(int dim = 1);
};

/// state + h a(state) + sqrt(h) b(state) noise.
Vector euler_step(const SdeModel& model, const Vector& state, double h, const Vector& noise);

/// In-place variant of euler_step used inside the simulation loops.
void euler_step_inplace(const SdeModel& model, Vector& state, double h, const Vector& noise,
                        EulerWorkspace& ws);

/// Terminal state after 2^l Euler steps of size 2^-l with fresh noise.
Vector simulate_unit_interval(const SdeModel& model, LevelIndex level, const Vector& start,
                              RngStream& stream);

/// Same, driven by a recorded increment sequence (size must be 2^l, each of
/// dimension d).
Vector simulate_unit_interval(const SdeModel& model, LevelIndex level, const Vector& start,
                              std::span<const Vector> increments);

/// Captured standard-normal increments of the fine lane of a coupled move.
struct NoiseTape {
    std::vector<Vector> increments;
};

/// Coarse increment built from two consecutive fine increments.
inline Vector coarse_increment(const Vector& first, const Vector& second) {
    return (first + second) / std::sqrt(2.0);
}

/**
 * One unit-time move of the coupled kernel: the fine lane takes 2^l steps of
 * size h_l with increments xi_0..xi_{2^l-1}; the coarse lane takes 2^(l-1)
 * steps of size h_{l-1} with increments (xi_{2m} + xi_{2m+1}) / sqrt(2).
 * Requires fine_level.l() >= 2. If tape is non-null the fine increments are
 * recorded into it.
 */
CoupledState coupled_transition(const SdeModel& model, const CoupledState& state,
                                LevelIndex fine_level, RngStream& stream, NoiseTape* tape = nullptr);

/// Coupled move replaying recorded fine increments.
CoupledState coupled_transition(const SdeModel& model, const CoupledState& state,
                                LevelIndex fine_level, std::span<const Vector> fine_increments);

/// In-place coupled move used by the filters; draws exactly the same
/// increments as coupled_transition for the same stream.
void coupled_transition_inplace(const SdeModel& model, Vector& fine, Vector& coarse,
                                LevelIndex fine_level, RngStream& stream, EulerWorkspace& ws);

/// In-place single-level move.
void simulate_unit_interval_inplace(const SdeModel& model, LevelIndex level, Vector& state,
                                    RngStream& stream, EulerWorkspace& ws);

}  // namespace mlmc
