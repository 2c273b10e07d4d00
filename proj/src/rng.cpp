#include "mlmc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mlmc {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(product >> 32);
    lo = static_cast<std::uint32_t>(product);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kPhiloxW0;
            key[1] += kPhiloxW1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed),
      stream_id_(stream_id),
      key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

RngStream RngStream::split(std::uint64_t lane) const {
    return RngStream(seed_, splitmix64(stream_id_ ^ splitmix64(lane ^ 0xA0761D6478BD642Full)));
}

std::uint64_t RngStream::next_u64() {
    if (block_pos_ >= 4) {
        block_ = philox4x32_10({static_cast<std::uint32_t>(counter_),
                                static_cast<std::uint32_t>(counter_ >> 32),
                                static_cast<std::uint32_t>(stream_id_),
                                static_cast<std::uint32_t>(stream_id_ >> 32)},
                               key_);
        ++counter_;
        block_pos_ = 0;
    }
    const std::uint64_t lo = block_[block_pos_];
    const std::uint64_t hi = block_[block_pos_ + 1];
    block_pos_ += 2;
    return (hi << 32) | lo;
}

double RngStream::uniform() {
    constexpr double kScale = 0x1.0p-53;
    return (static_cast<double>(next_u64() >> 11) + 0.5) * kScale;
}

double RngStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

void RngStream::fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
}

Vector RngStream::gaussian_vector(int dim) {
    if (dim < 1) throw std::invalid_argument("gaussian_vector: dim must be >= 1");
    Vector v(dim);
    fill_normal(std::span<double>(v.data(), static_cast<std::size_t>(dim)));
    return v;
}

ProbabilityVector::ProbabilityVector(std::vector<double> probabilities) : p_(std::move(probabilities)) {
    if (p_.empty()) throw std::invalid_argument("ProbabilityVector: empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < p_.size(); ++i) {
        if (!std::isfinite(p_[i]) || p_[i] < 0.0) {
            throw std::invalid_argument("ProbabilityVector: entry " + std::to_string(i) +
                                        " is negative or non-finite");
        }
        sum += p_[i];
    }
    if (std::abs(sum - 1.0) > kSumTolerance) {
        throw std::invalid_argument("ProbabilityVector: entries sum to " + std::to_string(sum) +
                                    ", not 1");
    }
}

ProbabilityVector ProbabilityVector::normalize(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("ProbabilityVector::normalize: empty");
    double sum = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0)
            throw std::invalid_argument("ProbabilityVector::normalize: negative or non-finite weight");
        sum += w;
    }
    if (sum <= 0.0) throw std::invalid_argument("ProbabilityVector::normalize: zero total weight");
    std::vector<double> p(weights.begin(), weights.end());
    for (double& x : p) x /= sum;
    return ProbabilityVector(std::move(p), Trusted{});
}

ProbabilityVector ProbabilityVector::from_log_weights(std::span<const double> log_weights) {
    if (log_weights.empty()) throw std::invalid_argument("from_log_weights: empty");
    double max_log = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) {
        if (std::isnan(lw)) throw std::invalid_argument("from_log_weights: NaN log-weight");
        if (lw == std::numeric_limits<double>::infinity())
            throw std::invalid_argument("from_log_weights: +inf log-weight");
        max_log = std::max(max_log, lw);
    }
    if (!std::isfinite(max_log)) throw std::invalid_argument("from_log_weights: all weights are zero");
    std::vector<double> p(log_weights.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(log_weights[i] - max_log);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return ProbabilityVector(std::move(p), Trusted{});
}

ProbabilityVector ProbabilityVector::uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("ProbabilityVector::uniform: n must be positive");
    return ProbabilityVector(std::vector<double>(n, 1.0 / static_cast<double>(n)), Trusted{});
}

double ProbabilityVector::ess() const {
    double sq = 0.0;
    for (double x : p_) sq += x * x;
    return 1.0 / sq;
}

std::size_t categorical_sample(const ProbabilityVector& p, RngStream& stream) {
    const double u = stream.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        if (p[j] <= 0.0) continue;
        acc += p[j];
        last_positive = j;
        if (u < acc) return j;
    }
    // u landed in the rounding slack above the final partial sum.
    return last_positive;
}

CategoricalTable::CategoricalTable(const ProbabilityVector& p)
    : CategoricalTable(std::span<const double>(p.values())) {}

CategoricalTable::CategoricalTable(std::span<const double> w) : cdf_(w.size()) {
    if (w.empty()) throw std::invalid_argument("CategoricalTable: empty weights");
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (!std::isfinite(w[i]) || w[i] < 0.0)
            throw std::invalid_argument("CategoricalTable: negative or non-finite weight");
        acc += w[i];
        cdf_[i] = acc;
    }
    if (acc <= 0.0) throw std::invalid_argument("CategoricalTable: zero total weight");
}

std::size_t CategoricalTable::sample(RngStream& stream) const { return sample_at(stream.uniform()); }

std::size_t CategoricalTable::sample_at(double u) const {
    const double target = u * cdf_.back();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), target);
    if (it == cdf_.end()) --it;
    // Skip zero-mass entries that share the cumulative value of their predecessor.
    auto idx = static_cast<std::size_t>(it - cdf_.begin());
    while (idx > 0 && cdf_[idx] == cdf_[idx - 1]) --idx;
    return idx;
}

}  // namespace mlmc
