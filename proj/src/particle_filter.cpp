#include "mlmc/particle_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "detail.hpp"
#include "mlmc/parallel.hpp"

namespace mlmc {

namespace {

constexpr std::uint64_t kLanePropagate = 1;
constexpr std::uint64_t kLaneResample = 2;

double first_coordinate(const Vector& u) { return u(0); }

std::function<double(const Vector&)> phi_or_default(const std::function<double(const Vector&)>& phi) {
    return phi ? phi : std::function<double(const Vector&)>(first_coordinate);
}

using detail::all_negative_infinite;
using detail::for_each_particle;
using detail::log_sum_exp;

void validate_hmm(const HmmModel& model, std::size_t n, const char* who) {
    if (n < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 particles");
    if (model.observations.empty()) throw std::invalid_argument(std::string(who) + ": no observations");
    if (!model.obs_log_density) throw std::invalid_argument(std::string(who) + ": missing observation density");
    if (model.sde.initial_state.size() != model.sde.dim)
        throw std::invalid_argument(std::string(who) + ": initial state has wrong dimension");
}

}  // namespace

double gaussian_log_density(double y, double mean, double var) {
    const double r = y - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * var) + r * r / var);
}

HmmModel make_linear_gaussian_hmm(double theta, double sigma, double x0, double obs_var,
                                  std::vector<double> observations) {
    if (!(obs_var > 0.0)) throw std::invalid_argument("make_linear_gaussian_hmm: obs_var must be positive");
    HmmModel m;
    m.sde = make_ou(theta, sigma, x0);
    m.obs_log_density = [obs_var](const Vector& u, const Vector& y) {
        return gaussian_log_density(y(0), u(0), obs_var);
    };
    for (double y : observations) m.observations.push_back(Vector::Constant(1, y));
    return m;
}

DegeneracyError::DegeneracyError(int step, int level, const std::string& where)
    : std::runtime_error(where + ": all weights are zero at step " + std::to_string(step) +
                         " (level " + std::to_string(level) + ")"),
      step_(step),
      level_(level) {}

WeightedEnsemble::WeightedEnsemble(std::vector<Vector> p, std::vector<double> lw)
    : particles(std::move(p)), log_weights(std::move(lw)), weights(ProbabilityVector::from_log_weights(log_weights)) {
    if (particles.size() != log_weights.size())
        throw std::invalid_argument("WeightedEnsemble: particle and weight counts differ");
}

double WeightedEnsemble::expectation(const std::function<double(const Vector&)>& phi) const {
    double s = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i)
        if (weights[i] > 0.0) s += weights[i] * phi(particles[i]);
    return s;
}

std::vector<std::size_t> multinomial_resample(const ProbabilityVector& weights, std::size_t n, RngStream& stream) {
    CategoricalTable table(weights);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = table.sample(stream);
    return idx;
}

std::vector<std::size_t> systematic_resample_at(const ProbabilityVector& weights, std::size_t n, double u) {
    if (!(u >= 0.0 && u < 1.0)) throw std::invalid_argument("systematic_resample_at: offset must lie in [0, 1)");
    std::vector<std::size_t> idx(n);
    const std::size_t m = weights.size();
    std::size_t j = 0;
    double cumulative = weights[0];
    for (std::size_t i = 0; i < n; ++i) {
        const double position = (static_cast<double>(i) + u) / static_cast<double>(n);
        while (position >= cumulative && j + 1 < m) cumulative += weights[++j];
        // Roundoff in the running sum can leave j on a zero-mass tail entry.
        while (weights[j] == 0.0 && j > 0) --j;
        idx[i] = j;
    }
    return idx;
}

std::vector<std::size_t> systematic_resample(const ProbabilityVector& weights, std::size_t n, RngStream& stream) {
    return systematic_resample_at(weights, n, stream.uniform());
}

ParticleFilterResult particle_filter_run(const HmmModel& model, LevelIndex level, std::size_t n_particles,
                                         const RngStream& stream, const FilterOptions& options) {
    validate_hmm(model, n_particles, "particle_filter_run");
    const auto phi = phi_or_default(options.phi);
    const std::size_t n = n_particles;
    const double log_n = std::log(static_cast<double>(n));

    std::vector<Vector> particles(n, model.sde.initial_state);
    std::vector<double> prev_log_w(n, -log_n);  // normalized weights carried into the step
    std::vector<double> correction(n, 0.0);
    std::vector<double> log_w(n);

    ParticleFilterResult out;
    const auto n_obs = model.observations.size();
    for (std::size_t k = 0; k < n_obs; ++k) {
        const int step = static_cast<int>(k) + 1;
        for_each_particle(n, model.sde.dim, stream.derive(k, kLanePropagate),
                          [&](std::size_t i, RngStream& s, EulerWorkspace& ws) {
                              if (model.proposal) {
                                  correction[i] = model.proposal(particles[i], s, level);
                              } else {
                                  simulate_unit_interval_inplace(model.sde, level, particles[i], s, ws);
                              }
                          });
        const Vector& y = model.observations[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double g = model.obs_log_density(particles[i], y) + correction[i];
            log_w[i] = std::isnan(g) ? -std::numeric_limits<double>::infinity() : g;
        }
        if (all_negative_infinite(log_w)) throw DegeneracyError(step, level.l(), "particle_filter_run");

        std::vector<double> joint(n);
        for (std::size_t i = 0; i < n; ++i) joint[i] = prev_log_w[i] + log_w[i];
        const double inc = log_sum_exp(joint);
        out.log_normalizer_increments.push_back(inc);
        out.log_normalizer += inc;

        WeightedEnsemble ens(particles, joint);
        out.estimates.push_back(ens.expectation(phi));

        if (k + 1 < n_obs) {
            const bool resample = !options.adaptive_resampling ||
                                  ens.weights.ess() < options.ess_threshold * static_cast<double>(n);
            if (resample) {
                RngStream rs = stream.derive(k, kLaneResample);
                const auto idx = options.scheme == ResamplingScheme::Systematic
                                     ? systematic_resample(ens.weights, n, rs)
                                     : multinomial_resample(ens.weights, n, rs);
                std::vector<Vector> next(n);
                for (std::size_t i = 0; i < n; ++i) next[i] = particles[idx[i]];
                particles = std::move(next);
                std::fill(prev_log_w.begin(), prev_log_w.end(), -log_n);
            } else {
                for (std::size_t i = 0; i < n; ++i) prev_log_w[i] = std::log(ens.weights[i]);
            }
        }
        if (options.store_ensembles) out.ensembles.push_back(std::move(ens));
    }
    return out;
}

double coupling_probability(const ProbabilityVector& fine, const ProbabilityVector& coarse) {
    if (fine.size() != coarse.size()) throw std::invalid_argument("coupling_probability: size mismatch");
    double alpha = 0.0;
    for (std::size_t j = 0; j < fine.size(); ++j) alpha += std::min(fine[j], coarse[j]);
    return std::min(alpha, 1.0);
}

std::vector<std::pair<std::size_t, std::size_t>> maximal_coupling_resample(const ProbabilityVector& fine,
                                                                           const ProbabilityVector& coarse,
                                                                           std::size_t n, RngStream& stream) {
    if (fine.size() != coarse.size()) throw std::invalid_argument("maximal_coupling_resample: size mismatch");
    const std::size_t m = fine.size();
    std::vector<double> common(m), rest_fine(m), rest_coarse(m);
    double alpha = 0.0, mass_fine = 0.0, mass_coarse = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        common[j] = std::min(fine[j], coarse[j]);
        rest_fine[j] = fine[j] - common[j];
        rest_coarse[j] = coarse[j] - common[j];
        alpha += common[j];
        mass_fine += rest_fine[j];
        mass_coarse += rest_coarse[j];
    }
    // Branch a only: a vanishing residual means the weights coincide.
    const bool only_common = mass_fine <= 0.0 || mass_coarse <= 0.0;
    const bool only_residual = alpha <= 0.0;

    std::vector<std::pair<std::size_t, std::size_t>> out(n);
    if (only_common) {
        CategoricalTable table{std::span<const double>(common)};
        for (auto& p : out) {
            const std::size_t j = table.sample(stream);
            p = {j, j};
        }
        return out;
    }
    if (only_residual) {
        CategoricalTable tf{std::span<const double>(rest_fine)}, tc{std::span<const double>(rest_coarse)};
        for (auto& p : out) {
            const std::size_t a = tf.sample(stream);
            p = {a, tc.sample(stream)};
        }
        return out;
    }
    CategoricalTable table{std::span<const double>(common)};
    CategoricalTable tf{std::span<const double>(rest_fine)}, tc{std::span<const double>(rest_coarse)};
    // alpha + residual mass is 1 up to roundoff; normalize so the branch test stays a probability.
    const double alpha_branch = alpha / (alpha + 0.5 * (mass_fine + mass_coarse));
    for (auto& p : out) {
        if (stream.uniform() < alpha_branch) {
            const std::size_t j = table.sample(stream);
            p = {j, j};
        } else {
            const std::size_t a = tf.sample(stream);
            p = {a, tc.sample(stream)};
        }
    }
    return out;
}

CoupledFilterResult coupled_particle_filter(const HmmModel& model, LevelIndex fine_level, std::size_t n_pairs,
                                            const std::function<double(const Vector&)>& phi_in,
                                            const RngStream& stream, bool coincident_lanes) {
    validate_hmm(model, n_pairs, "coupled_particle_filter");
    if (fine_level.l() < 2) throw std::invalid_argument("coupled_particle_filter: fine level must be >= 2");
    const auto phi = phi_or_default(phi_in);
    const std::size_t n = n_pairs;

    std::vector<Vector> fine(n, model.sde.initial_state), coarse(n, model.sde.initial_state);
    std::vector<double> lw_fine(n), lw_coarse(n);
    CoupledFilterResult out;
    const auto n_obs = model.observations.size();
    for (std::size_t k = 0; k < n_obs; ++k) {
        const int step = static_cast<int>(k) + 1;
        for_each_particle(n, model.sde.dim, stream.derive(k, kLanePropagate),
                          [&](std::size_t i, RngStream& s, EulerWorkspace& ws) {
                              if (coincident_lanes) {
                                  RngStream replay = s;
                                  simulate_unit_interval_inplace(model.sde, fine_level, fine[i], s, ws);
                                  simulate_unit_interval_inplace(model.sde, fine_level, coarse[i], replay, ws);
                              } else {
                                  coupled_transition_inplace(model.sde, fine[i], coarse[i], fine_level, s, ws);
                              }
                          });
        const Vector& y = model.observations[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double gf = model.obs_log_density(fine[i], y);
            const double gc = model.obs_log_density(coarse[i], y);
            lw_fine[i] = std::isnan(gf) ? -std::numeric_limits<double>::infinity() : gf;
            lw_coarse[i] = std::isnan(gc) ? -std::numeric_limits<double>::infinity() : gc;
        }
        if (all_negative_infinite(lw_fine)) throw DegeneracyError(step, fine_level.l(), "coupled_particle_filter");
        if (all_negative_infinite(lw_coarse))
            throw DegeneracyError(step, fine_level.l() - 1, "coupled_particle_filter");
        const auto wf = ProbabilityVector::from_log_weights(lw_fine);
        const auto wc = ProbabilityVector::from_log_weights(lw_coarse);

        double ef = 0.0, ec = 0.0, diff = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = wf[i] > 0.0 ? phi(fine[i]) * wf[i] : 0.0;
            const double b = wc[i] > 0.0 ? phi(coarse[i]) * wc[i] : 0.0;
            ef += a;
            ec += b;
            diff += a - b;
        }
        out.fine_estimates.push_back(ef);
        out.coarse_estimates.push_back(ec);
        out.differences.push_back(diff);
        out.coupling_probabilities.push_back(coupling_probability(wf, wc));

        if (k + 1 < n_obs) {
            RngStream rs = stream.derive(k, kLaneResample);
            const auto pairs = maximal_coupling_resample(wf, wc, n, rs);
            std::vector<Vector> nf(n), nc(n);
            for (std::size_t i = 0; i < n; ++i) {
                nf[i] = fine[pairs[i].first];
                nc[i] = coarse[pairs[i].second];
            }
            fine = std::move(nf);
            coarse = std::move(nc);
        }
    }
    return out;
}

MlpfResult mlpf_run(const HmmModel& model, const LevelSchedule& schedule,
                    const std::function<double(const Vector&)>& phi_in, const RngStream& stream,
                    const MlpfOptions& options) {
    schedule.validate();
    if (schedule.max_level < 2) throw std::invalid_argument("mlpf_run: schedule.max_level must be >= 2");
    const auto phi = phi_or_default(phi_in);
    const auto L = static_cast<std::size_t>(schedule.max_level);
    const auto n_obs = model.observations.size();

    std::vector<std::vector<double>> level_terms(L);
    parallel_for(L, [&](std::size_t idx) {
        const int l = static_cast<int>(idx) + 1;
        const auto n = static_cast<std::size_t>(schedule.samples_at(l));
        if (l == 1) {
            FilterOptions fo;
            fo.phi = phi;
            fo.store_ensembles = false;
            level_terms[idx] = particle_filter_run(model, LevelIndex(1), n, stream.split(1), fo).estimates;
        } else {
            level_terms[idx] =
                coupled_particle_filter(model, LevelIndex(l), n, phi, stream.split(static_cast<std::uint64_t>(l)),
                                        options.coincident_lanes)
                    .differences;
        }
    });

    MlpfResult out;
    const double cost = schedule.cost(options.zeta);
    for (std::size_t k = 0; k < n_obs; ++k) {
        EstimatorReport r;
        r.seed = stream.seed();
        r.total_cost = cost;
        r.per_level_samples = schedule.samples;
        for (std::size_t idx = 0; idx < L; ++idx) {
            r.per_level_means.push_back(level_terms[idx][k]);
            r.per_level_variances.push_back(std::numeric_limits<double>::quiet_NaN());
            r.value += level_terms[idx][k];
        }
        out.per_step.push_back(std::move(r));
    }
    return out;
}

}  // namespace mlmc
