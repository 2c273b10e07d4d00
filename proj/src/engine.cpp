#include "mlmc/engine.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mlmc/parallel.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

namespace {

constexpr std::int64_t kChunkSize = 4096;

double lagrange_factor(const RateParams& rates, int max_level, AllocationRule rule) {
    double k = 0.0;
    const double exponent =
        rule == AllocationRule::Standard ? (rates.beta - rates.zeta) / 2.0 : (rates.beta - rates.zeta) / 3.0;
    for (int l = 1; l <= max_level; ++l) k += std::pow(std::ldexp(1.0, -l), exponent);
    return k;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// Accumulates one statistic per level over fixed-size chunks with their own streams.
std::vector<RunningStats> chunked_level_stats(const std::vector<std::int64_t>& counts, int first_level,
                                              const RngStream& stream,
                                              const std::function<double(int, RngStream&)>& draw) {
    struct Task {
        int level;
        std::int64_t chunk;
        std::int64_t begin;
        std::int64_t end;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const int level = first_level + static_cast<int>(i);
        for (std::int64_t b = 0, c = 0; b < counts[i]; b += kChunkSize, ++c)
            tasks.push_back({level, c, b, std::min(counts[i], b + kChunkSize)});
    }
    std::vector<RunningStats> partial(tasks.size());
    parallel_for(tasks.size(), [&](std::size_t t) {
        const Task& task = tasks[t];
        RngStream s = stream.derive(static_cast<std::uint64_t>(task.level), static_cast<std::uint64_t>(task.chunk));
        RunningStats acc;
        for (std::int64_t i = task.begin; i < task.end; ++i) acc.push(draw(task.level, s));
        partial[t] = acc;
    });
    std::vector<RunningStats> per_level(counts.size());
    for (std::size_t t = 0; t < tasks.size(); ++t)
        per_level[static_cast<std::size_t>(tasks[t].level - first_level)].merge(partial[t]);
    return per_level;
}

}  // namespace

void RateParams::validate() const {
    if (!(alpha > 0.0) || !(beta > 0.0) || !(zeta > 0.0))
        throw std::invalid_argument("RateParams: alpha, beta and zeta must be strictly positive");
}

double LevelSchedule::cost(double zeta) const {
    double total = 0.0;
    for (int l = 1; l <= max_level; ++l)
        total += static_cast<double>(samples_at(l)) * std::pow(2.0, static_cast<double>(l) * zeta);
    return total;
}

void LevelSchedule::validate() const {
    if (max_level < 1) throw std::invalid_argument("LevelSchedule: max_level must be >= 1");
    if (samples.size() != static_cast<std::size_t>(max_level) || step_sizes.size() != samples.size())
        throw std::invalid_argument("LevelSchedule: samples/step_sizes must have max_level entries");
    for (int l = 1; l <= max_level; ++l) {
        if (samples_at(l) < 1) throw std::invalid_argument("LevelSchedule: N_" + std::to_string(l) + " < 1");
        if (step_sizes[static_cast<std::size_t>(l - 1)] != std::ldexp(1.0, -l))
            throw std::invalid_argument("LevelSchedule: h_" + std::to_string(l) + " != 2^-l");
    }
}

LevelSchedule LevelSchedule::from_samples(std::vector<std::int64_t> samples) {
    LevelSchedule s;
    s.max_level = static_cast<int>(samples.size());
    s.samples = std::move(samples);
    for (int l = 1; l <= s.max_level; ++l) s.step_sizes.push_back(std::ldexp(1.0, -l));
    s.validate();
    return s;
}

int choose_max_level(double epsilon, double alpha) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("choose_max_level: epsilon must be in (0, 1)");
    if (!(alpha > 0.0)) throw std::invalid_argument("choose_max_level: alpha must be positive");
    const double raw = -std::log(epsilon) / (alpha * std::log(2.0));
    // Exact powers of two must not round up past their level.
    const double snapped = std::abs(raw - std::round(raw)) < 1e-12 ? std::round(raw) : raw;
    return std::max(1, static_cast<int>(std::ceil(snapped)));
}

LevelSchedule allocate_samples(double epsilon, const RateParams& rates, int max_level, double scale,
                               AllocationRule rule) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("allocate_samples: epsilon must be in (0, 1)");
    if (max_level < 1) throw std::invalid_argument("allocate_samples: max_level must be >= 1");
    if (!(scale > 0.0)) throw std::invalid_argument("allocate_samples: scale must be positive");
    rates.validate();
    LevelSchedule s;
    s.max_level = max_level;
    s.lagrange_constant = lagrange_factor(rates, max_level, rule);
    for (int l = 1; l <= max_level; ++l) {
        const double h = std::ldexp(1.0, -l);
        const double n = scale * std::pow(epsilon, -2.0) * std::pow(h, (rates.beta + rates.zeta) / 2.0) *
                         s.lagrange_constant;
        s.step_sizes.push_back(h);
        s.samples.push_back(std::max<std::int64_t>(2, static_cast<std::int64_t>(std::ceil(n))));
    }
    return s;
}

EstimatorReport mc_estimate(const Sampler& sampler, std::int64_t n, const RngStream& stream,
                            double per_sample_cost) {
    if (n < 2) throw std::invalid_argument("mc_estimate: need N >= 2");
    const auto start = std::chrono::steady_clock::now();
    auto stats = chunked_level_stats({n}, 1, stream, [&](int, RngStream& s) { return sampler(s); });
    EstimatorReport r;
    r.value = stats[0].mean();
    r.per_level_means = {stats[0].mean()};
    r.per_level_variances = {stats[0].variance()};
    r.per_level_samples = {n};
    r.total_cost = static_cast<double>(n) * per_sample_cost;
    r.seed = stream.seed();
    r.wall_seconds = seconds_since(start);
    return r;
}

EstimatorReport mlmc_estimate(const CoupledSampler& coupled_sampler, const Sampler& phi_level1,
                              const LevelSchedule& schedule, const RngStream& stream, double zeta) {
    schedule.validate();
    const auto start = std::chrono::steady_clock::now();
    auto stats = chunked_level_stats(schedule.samples, 1, stream, [&](int level, RngStream& s) {
        if (level == 1) return phi_level1(s);
        const auto [fine, coarse] = coupled_sampler(level, s);
        return fine - coarse;
    });
    EstimatorReport r;
    for (const RunningStats& st : stats) {
        r.per_level_means.push_back(st.mean());
        r.per_level_variances.push_back(st.variance());
        r.per_level_samples.push_back(st.count());
        r.value += st.mean();
    }
    r.total_cost = schedule.cost(zeta);
    r.seed = stream.seed();
    r.wall_seconds = seconds_since(start);
    return r;
}

RateFit fit_rates(std::span<const LevelStat> stats) {
    if (stats.size() < 3) throw std::invalid_argument("fit_rates: need at least 3 levels");
    RateFit fit;
    std::vector<double> lm, ym, lv, yv;
    for (const LevelStat& s : stats) {
        if (s.abs_mean_diff > 0.0 && std::isfinite(s.abs_mean_diff)) {
            lm.push_back(s.level);
            ym.push_back(std::log2(s.abs_mean_diff));
        } else {
            fit.warnings.push_back("level " + std::to_string(s.level) + ": non-positive mean difference excluded");
        }
        if (s.var_diff > 0.0 && std::isfinite(s.var_diff)) {
            lv.push_back(s.level);
            yv.push_back(std::log2(s.var_diff));
        } else {
            fit.warnings.push_back("level " + std::to_string(s.level) + ": non-positive variance excluded");
        }
    }
    fit.alpha = lm.size() >= 2 ? -least_squares(lm, ym).slope : std::nan("");
    fit.beta = lv.size() >= 2 ? -least_squares(lv, yv).slope : std::nan("");
    return fit;
}

std::vector<LevelStat> pilot_level_stats(const CoupledSampler& coupled_sampler, const Sampler& phi_level1,
                                         int first_level, int last_level, std::int64_t n,
                                         const RngStream& stream) {
    if (first_level < 1 || last_level < first_level) throw std::invalid_argument("pilot_level_stats: bad level range");
    if (n < 2) throw std::invalid_argument("pilot_level_stats: need n >= 2");
    std::vector<std::int64_t> counts(static_cast<std::size_t>(last_level - first_level + 1), n);
    auto stats = chunked_level_stats(counts, first_level, stream, [&](int level, RngStream& s) {
        if (level == 1) return phi_level1(s);
        const auto [fine, coarse] = coupled_sampler(level, s);
        return fine - coarse;
    });
    std::vector<LevelStat> out;
    for (std::size_t i = 0; i < stats.size(); ++i)
        out.push_back({first_level + static_cast<int>(i), std::abs(stats[i].mean()), stats[i].variance()});
    return out;
}

double calibrate_scale(std::span<const double> level_variances, const RateParams& rates,
                       double variance_fraction, AllocationRule rule) {
    if (level_variances.empty()) throw std::invalid_argument("calibrate_scale: no pilot variances");
    if (!(variance_fraction > 0.0)) throw std::invalid_argument("calibrate_scale: variance_fraction must be positive");
    const int max_level = static_cast<int>(level_variances.size());
    double sum = 0.0;
    for (int l = 1; l <= max_level; ++l) {
        const double h = std::ldexp(1.0, -l);
        sum += level_variances[static_cast<std::size_t>(l - 1)] * std::pow(h, -(rates.beta + rates.zeta) / 2.0);
    }
    return sum / (lagrange_factor(rates, max_level, rule) * variance_fraction);
}

}  // namespace mlmc
