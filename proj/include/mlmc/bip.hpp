#pragma once

#include <functional>
#include <vector>

#include "mlmc/rng.hpp"
#include "mlmc/smc_sampler.hpp"

namespace mlmc {

/**
 * One-dimensional elliptic inverse problem
 *   -(a(x; u) p'(x))' = f(x) on (0, 1),  p(0) = p(1) = 0,
 *   a(x; u) = mean_field(x) + sum_k u_k sigma_k phi_k(x),  u in [-1, 1]^K,
 * observed through M local averages of p over equal subintervals with
 * Gaussian noise of covariance noise_covariance.
 */
struct EllipticModel {
    int n_modes = 2;
    std::function<double(double)> mean_field = [](double) { return 1.0; };
    std::function<double(int, double)> mode;  // phi_k(x), k = 1..K, sup norm 1
    std::vector<double> amplitudes;           // sigma_k
    std::function<double(double)> forcing = [](double) { return 1.0; };
    int n_observations = 10;
    Matrix noise_covariance;
    Vector data;
    double ellipticity_floor = 0.0;
    /// Elements at level l are base_elements * 2^l.
    int base_elements = 4;

    /// Coefficient a(x; u).
    [[nodiscard]] double coefficient(double x, const Vector& u) const;
    /// Checks sizes and inf_x mean_field - sum sigma_k >= ellipticity_floor > 0 on a fine grid.
    void validate() const;
};

/// cos(k pi x) modes, sigma_k = 0.2 * 2^-k, unit mean field and forcing,
/// M = 10 local averages, noise standard deviation noise_sd.
EllipticModel make_default_elliptic_model(int n_modes = 2, double noise_sd = 0.01);

/// Piecewise-linear nodal solution on the uniform mesh of a level.
struct FemSolution {
    std::vector<double> nodes;   // including both boundary nodes
    std::vector<double> values;  // p at the nodes (boundary values 0)

    /// Piecewise-linear interpolant at x in [0, 1].
    [[nodiscard]] double operator()(double x) const;
    /// Exact integral of the interpolant over [a, b].
    [[nodiscard]] double integral(double a, double b) const;
};

[[nodiscard]] int fem_elements(const EllipticModel& model, int level);

/// Hat-function Galerkin solve: element coefficients at midpoints, load by
/// two-point Gauss quadrature, tridiagonal system by the Thomas algorithm.
FemSolution fem_solve(const EllipticModel& model, const Vector& u, int level);

/// Observation functionals applied to a solution.
Vector observe(const EllipticModel& model, const FemSolution& p);

/// -1/2 |G_l(u) - y|^2_Gamma, -inf outside the prior box.
double log_kappa(const EllipticModel& model, const Vector& u, int level);

/// y = G_{data_level}(true_u) + xi, xi ~ N(0, Gamma); noiseless drops xi.
Vector generate_synthetic_data(const EllipticModel& model, const Vector& true_u, int data_level, RngStream& stream,
                               bool noiseless = false);

/// kappa_1..kappa_L at levels first_level..first_level+L-1. Level 1 is drawn
/// by prior sampling followed by burn_in RWMH steps targeting kappa_1.
TargetSequence make_bip_sequence(const EllipticModel& model, int n_levels, int first_level = 1, int burn_in = 50);

/// L2(0,1) distance between a solution and a reference function, by
/// 3-point Gauss quadrature per element.
double l2_error(const FemSolution& p, const std::function<double(double)>& exact);

struct GridPosterior {
    std::vector<double> mean;  // posterior mean of u
    Vector mode;
    double log_normalizer = 0.0;  // log of the integral of kappa over the box
};

/// Brute-force posterior for K = 2 on a points x points midpoint grid over the box.
GridPosterior grid_posterior(const EllipticModel& model, int level, int points);

}  // namespace mlmc
