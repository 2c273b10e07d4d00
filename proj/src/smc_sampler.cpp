#include "mlmc/smc_sampler.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "detail.hpp"
#include "mlmc/particle_filter.hpp"

namespace mlmc {

namespace {

constexpr std::uint64_t kLaneInit = 1;
constexpr std::uint64_t kLaneResample = 2;
constexpr std::uint64_t kLaneMutate = 3;

std::vector<double> log_increments(const TargetSequence& seq, const std::vector<Vector>& particles, int level) {
    const auto& num = seq.log_kappas[static_cast<std::size_t>(level - 1)];
    const auto& den = seq.log_kappas[static_cast<std::size_t>(level - 2)];
    std::vector<double> out(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) {
        const double r = num(particles[i]) - den(particles[i]);
        out[i] = std::isnan(r) ? -std::numeric_limits<double>::infinity() : r;
    }
    return out;
}

RandomWalkProposal population_proposal(const std::vector<Vector>& particles, int dim) {
    const auto n = static_cast<double>(particles.size());
    Vector mean = Vector::Zero(dim);
    for (const auto& p : particles) mean += p;
    mean /= n;
    Matrix cov = Matrix::Zero(dim, dim);
    for (const auto& p : particles) cov += (p - mean) * (p - mean).transpose();
    cov /= std::max(n - 1.0, 1.0);
    const double scale = 2.38 / std::sqrt(static_cast<double>(dim));
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() == Eigen::Success && cov.diagonal().minCoeff() > 1e-300)
        return RandomWalkProposal::with_covariance(cov, scale);
    // Collapsed population: fall back to an isotropic step of the average spread.
    const double spread = std::sqrt(std::max(cov.diagonal().mean(), 1e-12));
    return RandomWalkProposal::isotropic(dim, scale * spread);
}

}  // namespace

void TargetSequence::validate() const {
    if (log_kappas.empty()) throw std::invalid_argument("TargetSequence: no levels");
    for (const auto& k : log_kappas)
        if (!k) throw std::invalid_argument("TargetSequence: empty log density");
    if (!initial_sampler) throw std::invalid_argument("TargetSequence: missing initial sampler");
    if (dim < 1) throw std::invalid_argument("TargetSequence: dim must be >= 1");
    if (mutation_steps < 0) throw std::invalid_argument("TargetSequence: mutation_steps must be >= 0");
}

TargetSequence make_gaussian_bridge(std::vector<double> variances) {
    for (double v : variances)
        if (!(v > 0.0)) throw std::invalid_argument("make_gaussian_bridge: variances must be positive");
    TargetSequence seq;
    seq.dim = 1;
    for (double v : variances)
        seq.log_kappas.emplace_back([v](const Vector& u) { return -0.5 * u.squaredNorm() / v; });
    const double sd1 = std::sqrt(variances.at(0));
    seq.initial_sampler = [sd1](RngStream& s) { return Vector::Constant(1, sd1 * s.normal()); };
    return seq;
}

SmcRun smc_sampler_run(const TargetSequence& seq, std::span<const std::int64_t> n_schedule, const RngStream& stream) {
    seq.validate();
    if (n_schedule.empty()) throw std::invalid_argument("smc_sampler_run: empty schedule");
    if (static_cast<int>(n_schedule.size()) > seq.levels())
        throw std::invalid_argument("smc_sampler_run: schedule longer than the target sequence");
    for (std::size_t i = 0; i < n_schedule.size(); ++i) {
        if (n_schedule[i] < 2) throw std::invalid_argument("smc_sampler_run: every N_l must be >= 2");
        if (i > 0 && n_schedule[i] > n_schedule[i - 1])
            throw std::invalid_argument("smc_sampler_run: schedule must be non-increasing");
    }

    SmcRun run;
    SmcLevel first;
    first.particles.resize(static_cast<std::size_t>(n_schedule[0]));
    detail::for_each_particle(first.particles.size(), seq.dim, stream.derive(1, kLaneInit),
                              [&](std::size_t i, RngStream& s, EulerWorkspace&) {
                                  first.particles[i] = seq.initial_sampler(s);
                              });
    run.levels.push_back(std::move(first));

    for (std::size_t idx = 1; idx < n_schedule.size(); ++idx) {
        const int level = static_cast<int>(idx) + 1;
        const auto& prev = run.levels.back().particles;
        const auto log_r = log_increments(seq, prev, level);
        if (detail::all_negative_infinite(log_r)) throw DegeneracyError(level, level, "smc_sampler_run");
        SmcLevel next;
        next.log_z_ratio = run.levels.back().log_z_ratio + detail::log_sum_exp(log_r) -
                           std::log(static_cast<double>(prev.size()));

        const auto weights = ProbabilityVector::from_log_weights(log_r);
        RngStream rs = stream.derive(static_cast<std::uint64_t>(level), kLaneResample);
        const auto n = static_cast<std::size_t>(n_schedule[idx]);
        const auto picks = multinomial_resample(weights, n, rs);
        next.particles.resize(n);
        for (std::size_t i = 0; i < n; ++i) next.particles[i] = prev[picks[i]];

        const auto proposal = population_proposal(next.particles, seq.dim);
        const LogTarget target{seq.log_kappas[idx], seq.dim};
        std::vector<std::int64_t> accepted(n, 0);
        detail::for_each_particle(n, seq.dim, stream.derive(static_cast<std::uint64_t>(level), kLaneMutate),
                                  [&](std::size_t i, RngStream& s, EulerWorkspace&) {
                                      auto st = MhState::start(target, next.particles[i]);
                                      for (int m = 0; m < seq.mutation_steps; ++m)
                                          st = rwmh_step(target, std::move(st), proposal, s);
                                      accepted[i] = st.accepted_count;
                                      next.particles[i] = std::move(st.current);
                                  });
        std::int64_t total = 0;
        for (auto a : accepted) total += a;
        const double proposed = static_cast<double>(n) * seq.mutation_steps;
        next.acceptance_rate = proposed > 0 ? static_cast<double>(total) / proposed : 0.0;
        run.levels.push_back(std::move(next));
    }
    return run;
}

double snis_estimate(const TargetSequence& seq, const std::vector<Vector>& previous, int level,
                     const std::function<double(const Vector&)>& phi) {
    if (level < 2 || level > seq.levels()) throw std::invalid_argument("snis_estimate: level out of range");
    const auto log_r = log_increments(seq, previous, level);
    if (detail::all_negative_infinite(log_r)) throw DegeneracyError(level, level, "snis_estimate");
    const auto w = ProbabilityVector::from_log_weights(log_r);
    double s = 0.0;
    for (std::size_t i = 0; i < previous.size(); ++i)
        if (w[i] > 0.0) s += w[i] * phi(previous[i]);
    return s;
}

EstimatorReport mlsmc_estimate(const TargetSequence& seq, const std::function<double(const Vector&)>& phi,
                               const LevelSchedule& schedule, const RngStream& stream, double zeta) {
    schedule.validate();
    const int L = schedule.max_level;
    if (L < 2) throw std::invalid_argument("mlsmc_estimate: need max_level >= 2");
    if (L > seq.levels()) throw std::invalid_argument("mlsmc_estimate: schedule deeper than the target sequence");

    const std::span<const std::int64_t> run_schedule(schedule.samples.data(), static_cast<std::size_t>(L - 1));
    const auto run = smc_sampler_run(seq, run_schedule, stream);

    EstimatorReport r;
    r.seed = stream.seed();
    r.per_level_samples = schedule.samples;
    for (int l = 2; l <= L; ++l) {
        const auto& ens = run.levels[static_cast<std::size_t>(l - 2)].particles;
        const double snis = snis_estimate(seq, ens, l, phi);
        double term = snis;
        if (l >= 3) {
            double plain = 0.0;
            for (const auto& u : ens) plain += phi(u);
            term -= plain / static_cast<double>(ens.size());
        }
        r.per_level_means.push_back(term);
        r.per_level_variances.push_back(std::numeric_limits<double>::quiet_NaN());
        r.value += term;
    }
    for (int l = 1; l < L; ++l) r.total_cost += static_cast<double>(schedule.samples_at(l)) * std::exp2(l * zeta);
    r.total_cost += static_cast<double>(schedule.samples_at(L - 1)) * std::exp2(L * zeta);
    return r;
}

EstimatorReport smc_estimate(const TargetSequence& seq, const std::function<double(const Vector&)>& phi,
                             std::int64_t n, int max_level, const RngStream& stream, double zeta) {
    if (max_level < 1 || max_level > seq.levels()) throw std::invalid_argument("smc_estimate: bad max_level");
    const std::vector<std::int64_t> sched(static_cast<std::size_t>(max_level), n);
    const auto run = smc_sampler_run(seq, sched, stream);
    EstimatorReport r;
    r.seed = stream.seed();
    r.per_level_samples = sched;
    double s = 0.0;
    for (const auto& u : run.levels.back().particles) s += phi(u);
    r.value = s / static_cast<double>(n);
    r.per_level_means = {r.value};
    for (int l = 1; l <= max_level; ++l) r.total_cost += static_cast<double>(n) * std::exp2(l * zeta);
    return r;
}

std::vector<WeightDeviation> weight_deviation_profile(const TargetSequence& seq, const SmcRun& run) {
    std::vector<WeightDeviation> out;
    const int last = std::min(static_cast<int>(run.levels.size()) + 1, seq.levels());
    for (int l = 2; l <= last; ++l) {
        const auto& ens = run.levels[static_cast<std::size_t>(l - 2)].particles;
        const auto log_r = log_increments(seq, ens, l);
        const double log_ratio = detail::log_sum_exp(log_r) - std::log(static_cast<double>(ens.size()));
        WeightDeviation d;
        d.level = l;
        double ss = 0.0;
        for (double lr : log_r) {
            const double dev = std::abs(std::exp(lr - log_ratio) - 1.0);
            d.sup = std::max(d.sup, dev);
            ss += dev * dev;
        }
        d.l2 = std::sqrt(ss / static_cast<double>(log_r.size()));
        out.push_back(d);
    }
    return out;
}

}  // namespace mlmc
