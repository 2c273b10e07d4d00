#include "mlmc/pmmh.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "detail.hpp"
#include "mlmc/kalman.hpp"
#include "mlmc/mcmc.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

constexpr std::uint64_t kLanePropagate = 1;
constexpr std::uint64_t kLaneResample = 2;
constexpr std::uint64_t kLaneTrace = 3;
constexpr std::uint64_t kLaneChain = 10;
constexpr std::uint64_t kLaneFilter = 11;

enum class LaneMode { Single, Coupled, Coincident };

double finite_or_neg_inf(double x) { return std::isnan(x) ? kNegInf : x; }

// Per-run summary of the H-weighted functionals:
// a = sum W phi(fine) H-bar, b = sum W H-bar, c/d likewise for the coarse lane,
// with W = 1 for one traced pair or the final normalized weights otherwise.
struct TracedSummary {
    double log_z = kNegInf;
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0;
    double phi_fine = 0.0, phi_coarse = 0.0;
};

TracedSummary traced_filter(const HmmModel& model, const Vector& theta, LevelIndex level, std::size_t n,
                            LaneMode mode, bool fine_only, bool all_particles, const PathFunctional& phi,
                            const RngStream& stream) {
    const auto n_obs = model.observations.size();
    const bool two_lanes = mode != LaneMode::Single;
    const double log_n = std::log(static_cast<double>(n));

    std::vector<std::vector<Vector>> hf(n_obs), hc(two_lanes ? n_obs : 0);
    std::vector<std::vector<double>> lgf(n_obs, std::vector<double>(n)), lgc(two_lanes ? n_obs : 0),
        lw(n_obs, std::vector<double>(n));
    std::vector<std::vector<std::size_t>> anc(n_obs);
    if (two_lanes)
        for (auto& v : lgc) v.resize(n);

    TracedSummary out;
    out.log_z = 0.0;
    for (std::size_t k = 0; k < n_obs; ++k) {
        std::vector<Vector> fine(n), coarse(two_lanes ? n : 0);
        for (std::size_t i = 0; i < n; ++i) {
            fine[i] = k == 0 ? model.sde.initial_state : hf[k - 1][anc[k][i]];
            if (two_lanes) coarse[i] = k == 0 ? model.sde.initial_state : hc[k - 1][anc[k][i]];
        }
        detail::for_each_particle(n, model.sde.dim, stream.derive(k, kLanePropagate),
                                  [&](std::size_t i, RngStream& s, EulerWorkspace& ws) {
                                      switch (mode) {
                                          case LaneMode::Single:
                                              simulate_unit_interval_inplace(model.sde, level, fine[i], s, ws);
                                              break;
                                          case LaneMode::Coupled:
                                              coupled_transition_inplace(model.sde, fine[i], coarse[i], level, s, ws);
                                              break;
                                          case LaneMode::Coincident: {
                                              RngStream replay = s;
                                              simulate_unit_interval_inplace(model.sde, level, fine[i], s, ws);
                                              simulate_unit_interval_inplace(model.sde, level, coarse[i], replay, ws);
                                              break;
                                          }
                                      }
                                  });
        const Vector& y = model.observations[k];
        for (std::size_t i = 0; i < n; ++i) {
            lgf[k][i] = finite_or_neg_inf(model.obs_log_density(fine[i], y));
            if (two_lanes) {
                lgc[k][i] = finite_or_neg_inf(model.obs_log_density(coarse[i], y));
                lw[k][i] = fine_only ? lgf[k][i] : std::max(lgf[k][i], lgc[k][i]);
            } else {
                lw[k][i] = lgf[k][i];
            }
        }
        if (detail::all_negative_infinite(lw[k]))
            throw DegeneracyError(static_cast<int>(k) + 1, level.l(), "pmmh filter");
        out.log_z += detail::log_sum_exp(lw[k]) - log_n;
        hf[k] = std::move(fine);
        if (two_lanes) hc[k] = std::move(coarse);
        if (k + 1 < n_obs) {
            RngStream rs = stream.derive(k, kLaneResample);
            anc[k + 1] = multinomial_resample(ProbabilityVector::from_log_weights(lw[k]), n, rs);
        }
    }

    const auto final_w = ProbabilityVector::from_log_weights(lw[n_obs - 1]);
    std::vector<std::pair<std::size_t, double>> picks;
    if (all_particles) {
        for (std::size_t i = 0; i < n; ++i)
            if (final_w[i] > 0.0) picks.emplace_back(i, final_w[i]);
    } else {
        RngStream ts = stream.split(kLaneTrace);
        picks.emplace_back(categorical_sample(final_w, ts), 1.0);
    }
    std::vector<Vector> path_f(n_obs), path_c(n_obs);
    for (auto [idx, w] : picks) {
        double log_hf = 0.0, log_hc = 0.0;
        std::size_t j = idx;
        for (std::size_t k = n_obs; k-- > 0;) {
            path_f[k] = hf[k][j];
            if (two_lanes) {
                path_c[k] = hc[k][j];
                log_hf += lgf[k][j] - lw[k][j];
                log_hc += lgc[k][j] - lw[k][j];
            }
            if (k > 0) j = anc[k][j];
        }
        const double h_fine = std::exp(log_hf), h_coarse = std::exp(log_hc);
        const double pf = phi(theta, path_f);
        const double pc = two_lanes ? phi(theta, path_c) : pf;
        out.a += w * pf * h_fine;
        out.b += w * h_fine;
        out.c += w * pc * h_coarse;
        out.d += w * h_coarse;
        out.phi_fine += w * pf;
        out.phi_coarse += w * pc;
    }
    return out;
}

struct ChainRecord {
    std::vector<Vector> thetas;
    std::vector<double> log_likelihoods;
    std::vector<TracedSummary> summaries;
    double acceptance_rate = 0.0;
    double final_scale = 0.0;
    std::int64_t filter_runs = 0;
    std::int64_t failed_filter_runs = 0;
    std::vector<std::string> warnings;
};

ChainRecord run_chain(const ParamModel& model, LevelIndex level, LaneMode mode, const PathFunctional& phi,
                      const PmmhOptions& opt, const RngStream& stream) {
    if (!model.build || !model.log_prior || !model.prior_sampler)
        throw std::invalid_argument("pmmh: incomplete parameter model");
    if (opt.n_iters < 1) throw std::invalid_argument("pmmh: n_iters must be >= 1");
    if (opt.n_particles < 2) throw std::invalid_argument("pmmh: need at least 2 particles");
    if (!phi) throw std::invalid_argument("pmmh: missing functional");
    const std::int64_t burn_in = opt.burn_in >= 0 ? std::min(opt.burn_in, opt.n_iters - 1) : opt.n_iters / 10;

    ChainRecord rec;
    RngStream chain = stream.split(kLaneChain);
    std::int64_t run_index = 0;
    auto evaluate = [&](const Vector& theta, TracedSummary& summary) -> bool {
        const auto hmm = model.build(theta);
        const RngStream fs = stream.derive(kLaneFilter, static_cast<std::uint64_t>(run_index++));
        ++rec.filter_runs;
        try {
            summary = traced_filter(hmm, theta, level, opt.n_particles, mode, opt.fine_potential_only,
                                    opt.all_particles, phi, fs);
            if (std::isfinite(summary.log_z)) return true;
        } catch (const DegeneracyError& e) {
            if (rec.warnings.size() < 10) rec.warnings.emplace_back(e.what());
        }
        ++rec.failed_filter_runs;
        return false;
    };

    Vector theta;
    double log_prior = kNegInf;
    TracedSummary current;
    bool started = false;
    for (int attempt = 0; attempt < 50 && !started; ++attempt) {
        theta = (attempt == 0 && opt.init) ? *opt.init : model.prior_sampler(chain);
        if (theta.size() != model.dim) throw std::invalid_argument("pmmh: initial theta has wrong dimension");
        log_prior = model.log_prior(theta);
        started = std::isfinite(log_prior) && evaluate(theta, current);
    }
    if (!started) throw std::runtime_error("pmmh: no initial parameter with a non-degenerate filter");

    auto proposal = RandomWalkProposal::isotropic(model.dim, opt.proposal_scale);
    double log_scale = std::log(opt.proposal_scale);
    std::int64_t recorded_accepts = 0;
    for (std::int64_t t = 0; t < opt.n_iters; ++t) {
        const Vector candidate = theta + proposal.draw(chain);
        const double log_u = std::log(chain.uniform());
        const double cand_prior = model.log_prior(candidate);
        bool accepted = false;
        if (std::isfinite(cand_prior)) {
            TracedSummary s;
            if (evaluate(candidate, s)) {
                const double log_ratio = s.log_z + cand_prior - current.log_z - log_prior;
                if (log_ratio >= 0.0 || log_u < log_ratio) {
                    theta = candidate;
                    log_prior = cand_prior;
                    current = s;
                    accepted = true;
                }
            }
        }
        if (t < burn_in) {
            if (opt.adapt) {
                log_scale += std::pow(static_cast<double>(t + 1), -0.6) *
                             ((accepted ? 1.0 : 0.0) - opt.target_acceptance);
                proposal.set_scale(std::exp(log_scale));
            }
            continue;
        }
        recorded_accepts += accepted;
        rec.thetas.push_back(theta);
        rec.log_likelihoods.push_back(current.log_z);
        rec.summaries.push_back(current);
    }
    rec.acceptance_rate = static_cast<double>(recorded_accepts) / static_cast<double>(opt.n_iters - burn_in);
    rec.final_scale = proposal.scale();
    if (rec.failed_filter_runs > 0)
        rec.warnings.push_back(std::to_string(rec.failed_filter_runs) + " degenerate filter run(s) treated as rejections");
    return rec;
}

}  // namespace

ParamModel make_ou_param_model(OuParameter unknown, double fixed_drift, double sigma, double x0, double fixed_obs_sd,
                               std::vector<double> observations, double prior_lo, double prior_hi) {
    if (!(prior_lo < prior_hi)) throw std::invalid_argument("make_ou_param_model: empty prior interval");
    if (unknown == OuParameter::ObservationScale && !(prior_lo > 0.0))
        throw std::invalid_argument("make_ou_param_model: observation scale prior must be positive");
    ParamModel m;
    m.dim = 1;
    m.build = [=](const Vector& theta) {
        const double drift = unknown == OuParameter::Drift ? theta(0) : fixed_drift;
        const double sd = unknown == OuParameter::ObservationScale ? theta(0) : fixed_obs_sd;
        return make_linear_gaussian_hmm(drift, sigma, x0, sd * sd, observations);
    };
    const double log_width = std::log(prior_hi - prior_lo);
    m.log_prior = [=](const Vector& theta) {
        return theta(0) >= prior_lo && theta(0) <= prior_hi ? -log_width : kNegInf;
    };
    m.prior_sampler = [=](RngStream& s) { return Vector::Constant(1, prior_lo + (prior_hi - prior_lo) * s.uniform()); };
    return m;
}

double coupled_potential(const HmmModel& model, const Vector& fine, const Vector& coarse, const Vector& y) {
    return std::max(model.obs_log_density(fine, y), model.obs_log_density(coarse, y));
}

CorrectionWeights correction_weights(const HmmModel& model, std::span<const Vector> fine_path,
                                     std::span<const Vector> coarse_path) {
    if (fine_path.size() != model.observations.size() || coarse_path.size() != model.observations.size())
        throw std::invalid_argument("correction_weights: path length must match the observations");
    double lf = 0.0, lc = 0.0;
    for (std::size_t k = 0; k < fine_path.size(); ++k) {
        const auto& y = model.observations[k];
        const double gf = model.obs_log_density(fine_path[k], y);
        const double gc = model.obs_log_density(coarse_path[k], y);
        const double g = std::max(gf, gc);
        lf += gf - g;
        lc += gc - g;
    }
    return {std::exp(lf), std::exp(lc)};
}

double PmmhResult::estimate() const { return mean(phi_values); }

double PmmhResult::standard_error() const { return batch_means_se(phi_values); }

PmmhResult pmmh_chain(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                      const PmmhOptions& options, const RngStream& stream) {
    auto rec = run_chain(model, level, LaneMode::Single, phi, options, stream);
    PmmhResult out;
    out.thetas = std::move(rec.thetas);
    out.log_likelihoods = std::move(rec.log_likelihoods);
    for (const auto& s : rec.summaries) out.phi_values.push_back(s.a);
    out.acceptance_rate = rec.acceptance_rate;
    out.final_scale = rec.final_scale;
    out.filter_runs = rec.filter_runs;
    out.failed_filter_runs = rec.failed_filter_runs;
    out.warnings = std::move(rec.warnings);
    return out;
}

MlPmmhDifference ml_pmmh_difference(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                                    const PmmhOptions& options, const RngStream& stream) {
    if (level.l() < 2) throw std::invalid_argument("ml_pmmh_difference: level must be >= 2");
    const auto mode = options.coincident_lanes ? LaneMode::Coincident : LaneMode::Coupled;
    const auto rec = run_chain(model, level, mode, phi, options, stream);

    MlPmmhDifference out;
    double sa = 0.0, sb = 0.0, sc = 0.0, sd = 0.0;
    for (const auto& s : rec.summaries) {
        sa += s.a;
        sb += s.b;
        sc += s.c;
        sd += s.d;
        out.h_fine.push_back(s.b);
        out.h_coarse.push_back(s.d);
        out.phi_fine.push_back(s.phi_fine);
        out.phi_coarse.push_back(s.phi_coarse);
    }
    const auto n = static_cast<double>(rec.summaries.size());
    out.fine_ratio = sa / sb;
    out.coarse_ratio = sc / sd;
    out.value = out.fine_ratio - out.coarse_ratio;
    std::vector<double> z;
    z.reserve(rec.summaries.size());
    for (const auto& s : rec.summaries)
        z.push_back((s.a - out.fine_ratio * s.b) / (sb / n) - (s.c - out.coarse_ratio * s.d) / (sd / n));
    out.standard_error = z.size() >= 4 ? batch_means_se(z) : std::numeric_limits<double>::quiet_NaN();
    out.acceptance_rate = rec.acceptance_rate;
    out.filter_runs = rec.filter_runs;
    out.failed_filter_runs = rec.failed_filter_runs;
    return out;
}

EstimatorReport ml_pmmh_estimate(const ParamModel& model, const LevelSchedule& schedule, const PathFunctional& phi,
                                 const PmmhOptions& options, const RngStream& stream, double zeta) {
    schedule.validate();
    if (schedule.max_level < 2) throw std::invalid_argument("ml_pmmh_estimate: need max_level >= 2");
    const auto L = static_cast<std::size_t>(schedule.max_level);
    std::vector<double> means(L), variances(L);
    parallel_for(L, [&](std::size_t idx) {
        const int l = static_cast<int>(idx) + 1;
        PmmhOptions o = options;
        o.n_iters = schedule.samples_at(l);
        const RngStream s = stream.split(static_cast<std::uint64_t>(l));
        double se = 0.0, n = 0.0;
        if (l == 1) {
            const auto r = pmmh_chain(model, LevelIndex(1), phi, o, s);
            means[idx] = r.estimate();
            se = r.phi_values.size() >= 4 ? r.standard_error() : std::numeric_limits<double>::quiet_NaN();
            n = static_cast<double>(r.phi_values.size());
        } else {
            const auto r = ml_pmmh_difference(model, LevelIndex(l), phi, o, s);
            means[idx] = r.value;
            se = r.standard_error;
            n = static_cast<double>(r.h_fine.size());
        }
        variances[idx] = se * se * n;
    });
    EstimatorReport rep;
    rep.seed = stream.seed();
    rep.per_level_means = means;
    rep.per_level_variances = variances;
    rep.per_level_samples = schedule.samples;
    for (double m : means) rep.value += m;
    rep.total_cost = static_cast<double>(options.n_particles) * schedule.cost(zeta);
    return rep;
}

EstimatorReport pmmh_estimate(const ParamModel& model, LevelIndex level, const PathFunctional& phi,
                              const PmmhOptions& options, const RngStream& stream, double zeta) {
    const auto r = pmmh_chain(model, level, phi, options, stream);
    EstimatorReport rep;
    rep.seed = stream.seed();
    rep.value = r.estimate();
    rep.per_level_means = {rep.value};
    const double se = r.phi_values.size() >= 4 ? r.standard_error() : std::numeric_limits<double>::quiet_NaN();
    rep.per_level_variances = {se * se * static_cast<double>(r.phi_values.size())};
    rep.per_level_samples = {options.n_iters};
    rep.total_cost = static_cast<double>(options.n_particles) * static_cast<double>(options.n_iters) *
                     std::exp2(level.l() * zeta);
    return rep;
}

double ou_grid_posterior_mean(OuParameter unknown, double fixed_drift, double sigma, double x0, double fixed_obs_sd,
                              std::span<const double> observations, double prior_lo, double prior_hi, int level,
                              int points) {
    if (points < 2) throw std::invalid_argument("ou_grid_posterior_mean: need at least 2 points");
    std::vector<double> grid(static_cast<std::size_t>(points)), loglik(grid.size());
    const double step = (prior_hi - prior_lo) / points;
    for (int i = 0; i < points; ++i) {
        const double theta = prior_lo + (i + 0.5) * step;
        const double drift = unknown == OuParameter::Drift ? theta : fixed_drift;
        const double sd = unknown == OuParameter::ObservationScale ? theta : fixed_obs_sd;
        auto m = ou_euler_transition(drift, sigma, level);
        m.m0 = x0;
        m.r = sd * sd;
        grid[static_cast<std::size_t>(i)] = theta;
        loglik[static_cast<std::size_t>(i)] = kalman_filter(m, observations).log_likelihood;
    }
    const double lse = detail::log_sum_exp(loglik);
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) s += grid[i] * std::exp(loglik[i] - lse);
    return s;
}

}  // namespace mlmc
