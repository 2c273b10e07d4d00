#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace mlmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11). Pure function of
/// (counter, key); the building block of RngStream.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// 64-bit finalizer used to derive child stream ids.
std::uint64_t splitmix64(std::uint64_t x);

/**
 * A counter-based random stream identified by (seed, stream_id).
 *
 * The draw sequence is a pure function of the pair: the seed keys the Philox
 * bijection and the stream id occupies the high half of the counter. Streams
 * are value types; copying a stream copies its position, so two copies
 * replay the same draws. A worker should own its stream outright.
 *
 * Child streams for levels, replicates or particle lanes are obtained with
 * split(), which never touches the parent's position.
 */
class RngStream {
public:
    using result_type = std::uint64_t;

    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t stream_id() const { return stream_id_; }

    /// Independent child stream; a pure function of (seed, stream_id, lane).
    [[nodiscard]] RngStream split(std::uint64_t lane) const;

    template <class... Lanes>
    [[nodiscard]] RngStream derive(std::uint64_t first, Lanes... rest) const {
        RngStream child = split(first);
        ((child = child.split(static_cast<std::uint64_t>(rest))), ...);
        return child;
    }

    std::uint64_t next_u64();
    result_type operator()() { return next_u64(); }
    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    /// Uniform on the open interval (0, 1), 53 bits of resolution.
    double uniform();

    /// Standard normal via the Box-Muller transform (pairs, second one cached).
    double normal();

    void fill_normal(std::span<double> out);

    /// dim independent N(0, 1) draws.
    Vector gaussian_vector(int dim);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::array<std::uint32_t, 2> key_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int block_pos_ = 4;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

/**
 * Non-negative weights summing to one (within 1e-12 after normalization).
 *
 * The plain constructor validates and rejects unnormalized input; use
 * normalize() or from_log_weights() to build one from raw weights.
 */
class ProbabilityVector {
public:
    static constexpr double kSumTolerance = 1e-9;

    explicit ProbabilityVector(std::vector<double> probabilities);

    static ProbabilityVector normalize(std::span<const double> weights);

    /// Softmax with max subtraction; throws if every entry is -inf or NaN.
    static ProbabilityVector from_log_weights(std::span<const double> log_weights);

    static ProbabilityVector uniform(std::size_t n);

    [[nodiscard]] std::size_t size() const { return p_.size(); }
    [[nodiscard]] double operator[](std::size_t i) const { return p_[i]; }
    [[nodiscard]] const std::vector<double>& values() const { return p_; }

    /// Effective sample size 1 / sum p_i^2.
    [[nodiscard]] double ess() const;

private:
    struct Trusted {};
    ProbabilityVector(std::vector<double> p, Trusted) : p_(std::move(p)) {}

    std::vector<double> p_;
};

/// One categorical draw by linear inverse-CDF scan.
std::size_t categorical_sample(const ProbabilityVector& p, RngStream& stream);

/// Precomputed cumulative table for repeated categorical draws (O(log N) each).
class CategoricalTable {
public:
    explicit CategoricalTable(const ProbabilityVector& p);
    explicit CategoricalTable(std::span<const double> unnormalized_weights);

    std::size_t sample(RngStream& stream) const;
    std::size_t sample_at(double u) const;

private:
    std::vector<double> cdf_;
};

}  // namespace mlmc
