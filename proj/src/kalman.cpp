#include "mlmc/kalman.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mlmc {

KalmanResult kalman_filter(const ScalarLinearGaussian& model, std::span<const double> observations) {
    if (!(model.r > 0.0)) throw std::invalid_argument("kalman_filter: observation variance must be positive");
    KalmanResult out;
    double m = model.m0;
    double p = model.p0;
    for (double y : observations) {
        const double mp = model.a * m;
        const double pp = model.a * model.a * p + model.q;
        const double s = model.c * model.c * pp + model.r;
        const double innovation = y - model.c * mp;
        const double gain = pp * model.c / s;
        m = mp + gain * innovation;
        p = (1.0 - gain * model.c) * pp;
        const double ll = -0.5 * (std::log(2.0 * std::numbers::pi * s) + innovation * innovation / s);
        out.predicted_mean.push_back(mp);
        out.predicted_var.push_back(pp);
        out.filtered_mean.push_back(m);
        out.filtered_var.push_back(p);
        out.log_likelihood_increments.push_back(ll);
        out.log_likelihood += ll;
    }
    return out;
}

ScalarLinearGaussian ou_exact_transition(double theta, double sigma) {
    ScalarLinearGaussian m;
    m.a = std::exp(-theta);
    m.q = theta == 0.0 ? sigma * sigma : sigma * sigma * (1.0 - std::exp(-2.0 * theta)) / (2.0 * theta);
    return m;
}

ScalarLinearGaussian ou_euler_transition(double theta, double sigma, int level) {
    if (level < 1) throw std::invalid_argument("ou_euler_transition: level must be >= 1");
    const double h = std::ldexp(1.0, -level);
    const double rho = 1.0 - theta * h;
    const long steps = 1L << level;
    ScalarLinearGaussian m;
    m.a = 1.0;
    m.q = 0.0;
    for (long j = 0; j < steps; ++j) {
        m.q += m.a * m.a;
        m.a *= rho;
    }
    m.q *= sigma * sigma * h;
    return m;
}

}  // namespace mlmc
