#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace mlmc {

/// Streaming mean/variance (Welford). merge() uses Chan's pairwise update so
/// chunked accumulation can be combined in a fixed order.
class RunningStats {
public:
    void push(double x);
    void merge(const RunningStats& other);

    [[nodiscard]] std::int64_t count() const { return n_; }
    [[nodiscard]] double mean() const { return mean_; }
    /// Unbiased sample variance; 0 for fewer than two samples.
    [[nodiscard]] double variance() const;
    [[nodiscard]] double standard_error() const;

private:
    std::int64_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

double mean(std::span<const double> xs);
double sample_variance(std::span<const double> xs);

/// Standard error of the mean of a correlated series by non-overlapping batch
/// means (default: floor(sqrt(n)) batches).
double batch_means_se(std::span<const double> xs, int n_batches = 0);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
};

/// Ordinary least squares y ~ intercept + slope * x.
LinearFit least_squares(std::span<const double> x, std::span<const double> y);

}  // namespace mlmc
