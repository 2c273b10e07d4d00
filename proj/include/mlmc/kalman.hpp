#pragma once

#include <span>
#include <vector>

namespace mlmc {

/// Scalar linear-Gaussian state-space model
///   x_k = a x_{k-1} + N(0, q),  y_k = c x_k + N(0, r),  x_0 ~ N(m0, p0).
struct ScalarLinearGaussian {
    double a = 1.0;
    double q = 1.0;
    double c = 1.0;
    double r = 1.0;
    double m0 = 0.0;
    double p0 = 0.0;
};

struct KalmanResult {
    std::vector<double> predicted_mean;
    std::vector<double> predicted_var;
    std::vector<double> filtered_mean;
    std::vector<double> filtered_var;
    /// log p(y_k | y_{1:k-1}) per step (prediction-error decomposition).
    std::vector<double> log_likelihood_increments;
    double log_likelihood = 0.0;
};

KalmanResult kalman_filter(const ScalarLinearGaussian& model, std::span<const double> observations);

/// Exact unit-time transition of dU = -theta U dt + sigma dW.
ScalarLinearGaussian ou_exact_transition(double theta, double sigma);

/// Unit-time transition of the level-l Euler scheme for the same OU process:
/// a = (1 - theta h)^(2^l), q = sigma^2 h sum_j (1 - theta h)^(2j).
ScalarLinearGaussian ou_euler_transition(double theta, double sigma, int level);

}  // namespace mlmc
