#include "mlmc/stats.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmc {

void RunningStats::push(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void RunningStats::merge(const RunningStats& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    const double n = na + nb;
    mean_ += delta * nb / n;
    m2_ += other.m2_ + delta * delta * na * nb / n;
    n_ += other.n_;
}

double RunningStats::variance() const {
    return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
}

double RunningStats::standard_error() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
}

double mean(std::span<const double> xs) {
    RunningStats s;
    for (double x : xs) s.push(x);
    return s.mean();
}

double sample_variance(std::span<const double> xs) {
    RunningStats s;
    for (double x : xs) s.push(x);
    return s.variance();
}

double batch_means_se(std::span<const double> xs, int n_batches) {
    const auto n = static_cast<std::int64_t>(xs.size());
    if (n < 4) throw std::invalid_argument("batch_means_se: need at least 4 values");
    if (n_batches <= 0) n_batches = static_cast<int>(std::sqrt(static_cast<double>(n)));
    n_batches = std::max(2, n_batches);
    const std::int64_t batch = n / n_batches;
    RunningStats batch_stats;
    for (int b = 0; b < n_batches; ++b) {
        double sum = 0.0;
        for (std::int64_t i = b * batch; i < (b + 1) * batch; ++i) sum += xs[static_cast<std::size_t>(i)];
        batch_stats.push(sum / static_cast<double>(batch));
    }
    return std::sqrt(batch_stats.variance() / n_batches);
}

LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::invalid_argument("least_squares: need two or more paired points");
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("least_squares: degenerate abscissae");
    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

}  // namespace mlmc
