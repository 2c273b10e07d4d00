#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "mlmc/parallel.hpp"
#include "mlmc/rng.hpp"
#include "mlmc/sde.hpp"

namespace mlmc::detail {

inline constexpr std::size_t kParticleChunk = 64;

inline double log_sum_exp(std::span<const double> xs) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline bool all_negative_infinite(std::span<const double> xs) {
    return std::none_of(xs.begin(), xs.end(), [](double x) { return x > -std::numeric_limits<double>::infinity(); });
}

// Runs body(i, stream, ws) over [0, n) in fixed chunks; chunk c draws from
// step_stream.split(c), so results do not depend on the worker count.
template <class Body>
void for_each_particle(std::size_t n, int dim, const RngStream& step_stream, Body&& body) {
    const std::size_t n_chunks = (n + kParticleChunk - 1) / kParticleChunk;
    parallel_for(n_chunks, [&](std::size_t c) {
        RngStream s = step_stream.split(c);
        EulerWorkspace ws(dim);
        const std::size_t end = std::min(n, (c + 1) * kParticleChunk);
        for (std::size_t i = c * kParticleChunk; i < end; ++i) body(i, s, ws);
    });
}

}  // namespace mlmc::detail
