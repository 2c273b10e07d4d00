#include "mlmc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "mlmc/bip.hpp"
#include "mlmc/enkf.hpp"
#include "mlmc/kalman.hpp"
#include "mlmc/parallel.hpp"
#include "mlmc/particle_filter.hpp"
#include "mlmc/pmmh.hpp"
#include "mlmc/sde.hpp"
#include "mlmc/smc_sampler.hpp"
#include "mlmc/stats.hpp"

namespace mlmc {

namespace {

using json = nlohmann::json;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kLongReferenceLane = 1000003;
constexpr std::uint64_t kRatesLane = 1000033;
constexpr std::uint64_t kPilotLane = 1000037;

// ---------------------------------------------------------------- names

const std::vector<std::pair<ExperimentKind, std::string>>& kind_names() {
    static const std::vector<std::pair<ExperimentKind, std::string>> v{
        {ExperimentKind::MlmcSde, "mlmc-sde"},           {ExperimentKind::PfVsMlpf, "pf-vs-mlpf"},
        {ExperimentKind::SmcVsMlsmc, "smc-vs-mlsmc"},     {ExperimentKind::PmmhVsMlpmmh, "pmmh-vs-mlpmmh"},
        {ExperimentKind::EnkfVsMlenkf, "enkf-vs-mlenkf"}, {ExperimentKind::Rates, "rates"}};
    return v;
}

const std::vector<std::pair<OracleKind, std::string>>& oracle_names() {
    static const std::vector<std::pair<OracleKind, std::string>> v{{OracleKind::ClosedForm, "closed-form"},
                                                                    {OracleKind::Kalman, "kalman"},
                                                                    {OracleKind::Grid, "grid"},
                                                                    {OracleKind::LongReference, "long-reference"}};
    return v;
}

template <class E>
std::optional<E> lookup(const std::vector<std::pair<E, std::string>>& table, const std::string& name) {
    for (const auto& [e, n] : table)
        if (n == name) return e;
    return std::nullopt;
}

template <class E>
std::string joined_names(const std::vector<std::pair<E, std::string>>& table) {
    std::string s;
    for (const auto& [e, n] : table) s += (s.empty() ? "" : ", ") + n;
    return s;
}

std::string rule_name(AllocationRule r) { return r == AllocationRule::Standard ? "standard" : "ensemble-kalman"; }

// ---------------------------------------------------------------- models

struct ModelInfo {
    std::map<std::string, double> defaults;
    std::vector<ExperimentKind> kinds;
    std::vector<OracleKind> oracles;  // first entry is the default
};

const std::map<std::string, ModelInfo>& model_table() {
    using K = ExperimentKind;
    using O = OracleKind;
    static const std::map<std::string, ModelInfo> t{
        {"gbm", {{{"theta1", 0.05}, {"theta2", 0.2}, {"x0", 1.0}}, {K::MlmcSde, K::Rates}, {O::ClosedForm, O::LongReference}}},
        {"ou", {{{"theta1", 1.0}, {"theta2", 0.5}, {"x0", 1.0}}, {K::MlmcSde, K::Rates}, {O::ClosedForm, O::LongReference}}},
        {"langevin", {{{"theta1", 1.0}, {"theta2", 0.5}, {"x0", 0.5}}, {K::MlmcSde, K::Rates}, {O::LongReference}}},
        {"linear-gaussian",
         {{{"theta", 0.5}, {"sigma", 0.8}, {"x0", 1.0}, {"obs_var", 0.25}, {"steps", 25}, {"data_seed", 7},
           {"particles", 100}},
          {K::PfVsMlpf, K::EnkfVsMlenkf, K::Rates},
          {O::Kalman, O::LongReference}}},
        {"langevin-hmm",
         {{{"theta1", 1.0}, {"theta2", 0.5}, {"x0", 0.5}, {"obs_var", 0.25}, {"steps", 25}, {"data_seed", 7}},
          {K::PfVsMlpf},
          {O::LongReference}}},
        {"gaussian-bridge", {{{"limit_variance", 1.0}, {"offset", 1.0}}, {K::SmcVsMlsmc}, {O::ClosedForm, O::LongReference}}},
        {"bip",
         {{{"noise_sd", 0.01}, {"true_u1", 0.5}, {"true_u2", -0.3}, {"data_level", 10}, {"data_seed", 3},
           {"burn_in", 50}, {"reference_level", 8}, {"grid_points", 100}},
          {K::SmcVsMlsmc},
          {O::Grid, O::LongReference}}},
        {"ou-drift",
         {{{"theta", 0.7}, {"sigma", 0.6}, {"x0", 0.5}, {"obs_sd", 0.4}, {"steps", 10}, {"data_seed", 11},
           {"prior_lo", 0.1}, {"prior_hi", 2.0}, {"particles", 50}, {"proposal_scale", 0.5},
           {"reference_level", 12}, {"grid_points", 2000}},
          {K::PmmhVsMlpmmh},
          {O::Grid, O::LongReference}}},
    };
    return t;
}

// ---------------------------------------------------------------- validation helpers

struct Reader {
    const json& j;
    std::vector<std::string>& errors;
    std::string prefix;

    [[nodiscard]] std::string field(const std::string& key) const { return prefix.empty() ? key : prefix + "." + key; }

    void check_keys(const std::set<std::string>& allowed) const {
        for (const auto& [k, v] : j.items())
            if (!allowed.count(k)) errors.push_back(field(k) + ": unknown field");
    }

    std::optional<double> number(const std::string& key, std::optional<double> fallback = std::nullopt) const {
        if (!j.contains(key)) {
            if (!fallback) errors.push_back(field(key) + ": required");
            return fallback;
        }
        const auto& v = j.at(key);
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
            errors.push_back(field(key) + ": must be a finite number");
            return std::nullopt;
        }
        return v.get<double>();
    }

    std::optional<std::int64_t> integer(const std::string& key, std::int64_t fallback) const {
        if (!j.contains(key)) return fallback;
        const auto& v = j.at(key);
        if (!v.is_number_integer()) {
            errors.push_back(field(key) + ": must be an integer");
            return std::nullopt;
        }
        return v.get<std::int64_t>();
    }

    std::optional<std::string> string(const std::string& key, std::optional<std::string> fallback) const {
        if (!j.contains(key)) {
            if (!fallback) errors.push_back(field(key) + ": required");
            return fallback;
        }
        if (!j.at(key).is_string()) {
            errors.push_back(field(key) + ": must be a string");
            return std::nullopt;
        }
        return j.at(key).get<std::string>();
    }
};

void positive(std::vector<std::string>& errors, const std::string& field, const std::optional<double>& v) {
    if (v && !(*v > 0.0)) errors.push_back(field + ": must be positive");
}

// ---------------------------------------------------------------- csv

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string(); }

// ---------------------------------------------------------------- experiment plumbing

struct Plan {
    int L = 0;
    LevelSchedule schedule;
    std::int64_t baseline_samples = 2;  // single-level sample/particle/iteration count
};

int plan_level(const PlanningSpec& p, double eps) {
    return std::max(p.min_level, choose_max_level(eps, p.rates.alpha) + p.level_offset);
}

std::int64_t baseline_samples(double eps, double scale) {
    return std::max<std::int64_t>(2, static_cast<std::int64_t>(std::ceil(scale / (eps * eps))));
}

Plan make_plan(const PlanningSpec& p, double eps, double scale, double baseline_scale) {
    Plan plan;
    plan.L = plan_level(p, eps);
    plan.schedule = allocate_samples(eps, p.rates, plan.L, scale, p.rule);
    plan.baseline_samples = baseline_samples(eps, baseline_scale);
    return plan;
}

/// Fixed-constant plan, or the pilot-calibrated one when pilot variances are given.
Plan make_plan(const PlanningSpec& p, double eps, double budget_factor, std::span<const double> pilot_variances) {
    if (pilot_variances.empty()) return make_plan(p, eps, budget_factor * p.scale, budget_factor * p.scale);
    const int L = plan_level(p, eps);
    const auto v = pilot_variances.subspan(0, static_cast<std::size_t>(L));
    const double scale = calibrate_scale(v, p.rates, p.variance_fraction, p.rule);
    return make_plan(p, eps, budget_factor * scale, budget_factor * v[0] / p.variance_fraction);
}

struct MethodOutput {
    double value = 0.0;
    double total_cost = 0.0;
    std::vector<double> step_means;
    std::vector<double> step_covariances;  // empty when not reported
};

/// method index, plan, stream.
using MethodRunner = std::function<MethodOutput(std::size_t, const Plan&, const RngStream&)>;

struct Runner {
    std::vector<std::string> methods;  // baseline first, multilevel second
    MethodRunner run;
    std::optional<double> oracle;      // exact or grid oracle, if any
    std::vector<double> oracle_steps;  // per-step oracle means (filters)
    std::vector<double> oracle_step_covariances;
    std::string oracle_label;
};

double p(const ExperimentConfig& c, const char* name) { return c.parameters.at(name); }

SdeModel sde_model(const ExperimentConfig& c) {
    if (c.model == "gbm") return make_gbm(p(c, "theta1"), p(c, "theta2"), p(c, "x0"));
    if (c.model == "ou") return make_ou(p(c, "theta1"), p(c, "theta2"), p(c, "x0"));
    return make_langevin_like(p(c, "theta1"), p(c, "theta2"), p(c, "x0"));
}

Sampler terminal_sampler(const SdeModel& m, int level) {
    return [m, level](RngStream& s) { return simulate_unit_interval(m, LevelIndex(level), m.initial_state, s)(0); };
}

CoupledSampler coupled_terminal_sampler(const SdeModel& m) {
    return [m](int level, RngStream& s) {
        const auto r = coupled_transition(m, CoupledState{m.initial_state, m.initial_state}, LevelIndex(level), s);
        return std::pair<double, double>{r.fine(0), r.coarse(0)};
    };
}

std::vector<double> linear_gaussian_observations(const ExperimentConfig& c) {
    RngStream s(static_cast<std::uint64_t>(p(c, "data_seed")), 0);
    const auto tr = ou_exact_transition(p(c, "theta"), p(c, "sigma"));
    std::vector<double> ys;
    double x = p(c, "x0");
    for (int k = 0; k < static_cast<int>(p(c, "steps")); ++k) {
        x = tr.a * x + std::sqrt(tr.q) * s.normal();
        ys.push_back(x + std::sqrt(p(c, "obs_var")) * s.normal());
    }
    return ys;
}

std::vector<double> langevin_observations(const ExperimentConfig& c, const SdeModel& m) {
    RngStream s(static_cast<std::uint64_t>(p(c, "data_seed")), 0);
    std::vector<double> ys;
    Vector x = m.initial_state;
    for (int k = 0; k < static_cast<int>(p(c, "steps")); ++k) {
        x = simulate_unit_interval(m, LevelIndex(12), x, s);
        ys.push_back(x(0) + std::sqrt(p(c, "obs_var")) * s.normal());
    }
    return ys;
}

KalmanResult exact_kalman(const ExperimentConfig& c, const std::vector<double>& ys) {
    auto k = ou_exact_transition(p(c, "theta"), p(c, "sigma"));
    k.c = 1.0;
    k.r = p(c, "obs_var");
    k.m0 = p(c, "x0");
    k.p0 = 0.0;
    return kalman_filter(k, ys);
}

double first_coordinate(const Vector& u) { return u(0); }

Runner sde_runner(const ExperimentConfig& c) {
    Runner r;
    r.methods = {"mc", "mlmc"};
    const SdeModel m = sde_model(c);
    const double zeta = c.planning.rates.zeta;
    r.run = [m, zeta](std::size_t method, const Plan& plan, const RngStream& s) {
        MethodOutput out;
        if (method == 0) {
            const auto rep = mc_estimate(terminal_sampler(m, plan.L), plan.baseline_samples, s,
                                         std::exp2(plan.L * zeta));
            out.value = rep.value;
            out.total_cost = rep.total_cost;
        } else {
            const auto rep = mlmc_estimate(coupled_terminal_sampler(m), terminal_sampler(m, 1), plan.schedule, s, zeta);
            out.value = rep.value;
            out.total_cost = rep.total_cost;
        }
        return out;
    };
    if (c.oracle == OracleKind::ClosedForm) {
        const double x0 = p(c, "x0"), t1 = p(c, "theta1");
        r.oracle = c.model == "gbm" ? x0 * std::exp(t1) : x0 * std::exp(-t1);
        r.oracle_label = "closed-form E[U_1]";
    }
    return r;
}

Runner pf_runner(const ExperimentConfig& c) {
    Runner r;
    r.methods = {"pf", "mlpf"};
    HmmModel hmm;
    std::vector<double> ys;
    if (c.model == "linear-gaussian") {
        ys = linear_gaussian_observations(c);
        hmm = make_linear_gaussian_hmm(p(c, "theta"), p(c, "sigma"), p(c, "x0"), p(c, "obs_var"), ys);
    } else {
        const SdeModel m = make_langevin_like(p(c, "theta1"), p(c, "theta2"), p(c, "x0"));
        ys = langevin_observations(c, m);
        hmm = make_linear_gaussian_hmm(1.0, 1.0, p(c, "x0"), p(c, "obs_var"), ys);
        hmm.sde = m;
    }
    const double zeta = c.planning.rates.zeta;
    r.run = [hmm, zeta](std::size_t method, const Plan& plan, const RngStream& s) {
        MethodOutput out;
        if (method == 0) {
            const auto n = static_cast<std::size_t>(plan.baseline_samples);
            FilterOptions o;
            o.store_ensembles = false;
            const auto res = particle_filter_run(hmm, LevelIndex(plan.L), n, s, o);
            out.step_means = res.estimates;
            out.total_cost = static_cast<double>(n) * std::exp2(plan.L * zeta);
        } else {
            MlpfOptions o;
            o.zeta = zeta;
            const auto res = mlpf_run(hmm, plan.schedule, first_coordinate, s, o);
            for (const auto& rep : res.per_step) out.step_means.push_back(rep.value);
            out.total_cost = res.per_step.back().total_cost;
        }
        out.value = out.step_means.back();
        return out;
    };
    if (c.oracle == OracleKind::Kalman) {
        const auto k = exact_kalman(c, ys);
        r.oracle_steps = k.filtered_mean;
        r.oracle_step_covariances = k.filtered_var;
        r.oracle = k.filtered_mean.back();
        r.oracle_label = "Kalman filter of the exact OU transition, final-step filter mean";
    }
    return r;
}

Runner enkf_runner(const ExperimentConfig& c) {
    Runner r;
    r.methods = {"enkf", "mlenkf"};
    const auto ys = linear_gaussian_observations(c);
    const SdeModel m = make_ou(p(c, "theta"), p(c, "sigma"), p(c, "x0"));
    LinearObsModel obs;
    obs.H = Matrix::Identity(1, 1);
    obs.Gamma = Matrix::Constant(1, 1, p(c, "obs_var"));
    for (double y : ys) obs.observations.push_back(Vector::Constant(1, y));
    const double zeta = c.planning.rates.zeta;
    r.run = [m, obs, zeta](std::size_t method, const Plan& plan, const RngStream& s) {
        MethodOutput out;
        if (method == 0) {
            const auto res = enkf_run(m, obs, static_cast<std::size_t>(plan.baseline_samples),
                                      LevelIndex(plan.L), s, zeta);
            for (const auto& a : res.analyses) {
                out.step_means.push_back(a.mean(0));
                out.step_covariances.push_back(a.covariance(0, 0));
            }
            out.total_cost = res.total_cost;
        } else {
            MlenkfOptions o;
            o.zeta = zeta;
            const auto res = mlenkf_run(m, obs, plan.schedule, s, o);
            for (std::size_t k = 0; k < res.means.size(); ++k) {
                out.step_means.push_back(res.means[k](0));
                out.step_covariances.push_back(res.covariances[k](0, 0));
            }
            out.total_cost = res.report.total_cost;
        }
        out.value = out.step_means.back();
        return out;
    };
    if (c.oracle == OracleKind::Kalman) {
        const auto k = exact_kalman(c, ys);
        r.oracle_steps = k.filtered_mean;
        r.oracle_step_covariances = k.filtered_var;
        r.oracle = k.filtered_mean.back();
        r.oracle_label = "Kalman filter of the exact OU transition, final-step filter mean";
    }
    return r;
}

/// Planned MLSMC cost: levels below L at their own N_l, plus level-L
/// evaluations of the level-(L-1) ensemble.
double mlsmc_planned_cost(const LevelSchedule& s, double zeta) {
    double cost = 0.0;
    for (int l = 1; l < s.max_level; ++l) cost += static_cast<double>(s.samples_at(l)) * std::exp2(l * zeta);
    return cost + static_cast<double>(s.samples_at(s.max_level - 1)) * std::exp2(s.max_level * zeta);
}

Runner smc_runner(const ExperimentConfig& c) {
    Runner r;
    r.methods = {"smc", "mlsmc"};
    std::function<TargetSequence(int)> sequence;
    std::function<double(const Vector&)> phi;
    if (c.model == "gaussian-bridge") {
        const double v_inf = p(c, "limit_variance"), offset = p(c, "offset");
        sequence = [v_inf, offset](int L) {
            std::vector<double> v;
            for (int l = 1; l <= L; ++l) v.push_back(v_inf + offset * std::exp2(-l));
            return make_gaussian_bridge(v);
        };
        phi = [](const Vector& u) { return u(0) * u(0); };
        if (c.oracle == OracleKind::ClosedForm) {
            r.oracle = v_inf;
            r.oracle_label = "closed-form second moment of the limit target";
        }
    } else {
        auto model = make_default_elliptic_model(2, p(c, "noise_sd"));
        Vector true_u(2);
        true_u << p(c, "true_u1"), p(c, "true_u2");
        RngStream ds(static_cast<std::uint64_t>(p(c, "data_seed")), 0);
        model.data = generate_synthetic_data(model, true_u, static_cast<int>(p(c, "data_level")), ds);
        const int burn_in = static_cast<int>(p(c, "burn_in"));
        sequence = [model, burn_in](int L) { return make_bip_sequence(model, L, 1, burn_in); };
        phi = first_coordinate;
        if (c.oracle == OracleKind::Grid) {
            const auto g = grid_posterior(model, static_cast<int>(p(c, "reference_level")),
                                          static_cast<int>(p(c, "grid_points")));
            r.oracle = g.mean[0];
            r.oracle_label = "grid posterior mean of u_1 at the reference level";
        }
    }
    const double zeta = c.planning.rates.zeta;
    r.run = [sequence, phi, zeta](std::size_t method, const Plan& plan, const RngStream& s) {
        MethodOutput out;
        const auto seq = sequence(plan.L);
        EstimatorReport rep;
        if (method == 0) {
            // Constant N at the multilevel method's planned cost.
            double unit = 0.0;
            for (int l = 1; l <= plan.L; ++l) unit += std::exp2(l * zeta);
            const auto n = std::max<std::int64_t>(
                2, static_cast<std::int64_t>(std::llround(mlsmc_planned_cost(plan.schedule, zeta) / unit)));
            rep = smc_estimate(seq, phi, n, plan.L, s, zeta);
        } else {
            rep = mlsmc_estimate(seq, phi, plan.schedule, s, zeta);
        }
        out.value = rep.value;
        out.total_cost = rep.total_cost;
        return out;
    };
    return r;
}

Runner pmmh_runner(const ExperimentConfig& c) {
    Runner r;
    r.methods = {"pmmh", "mlpmmh"};
    std::vector<double> ys;
    {
        RngStream s(static_cast<std::uint64_t>(p(c, "data_seed")), 0);
        const auto tr = ou_exact_transition(p(c, "theta"), p(c, "sigma"));
        double x = p(c, "x0");
        for (int k = 0; k < static_cast<int>(p(c, "steps")); ++k) {
            x = tr.a * x + std::sqrt(tr.q) * s.normal();
            ys.push_back(x + p(c, "obs_sd") * s.normal());
        }
    }
    const auto pm = make_ou_param_model(OuParameter::Drift, p(c, "theta"), p(c, "sigma"), p(c, "x0"), p(c, "obs_sd"),
                                        ys, p(c, "prior_lo"), p(c, "prior_hi"));
    PmmhOptions base;
    base.n_particles = static_cast<std::size_t>(p(c, "particles"));
    base.proposal_scale = p(c, "proposal_scale");
    const double zeta = c.planning.rates.zeta;
    const PathFunctional phi = [](const Vector& theta, std::span<const Vector>) { return theta(0); };
    r.run = [pm, base, phi, zeta](std::size_t method, const Plan& plan, const RngStream& s) {
        MethodOutput out;
        EstimatorReport rep;
        PmmhOptions o = base;
        if (method == 0) {
            o.n_iters = plan.baseline_samples;
            rep = pmmh_estimate(pm, LevelIndex(plan.L), phi, o, s, zeta);
        } else {
            rep = ml_pmmh_estimate(pm, plan.schedule, phi, o, s, zeta);
        }
        out.value = rep.value;
        out.total_cost = rep.total_cost;
        return out;
    };
    if (c.oracle == OracleKind::Grid) {
        r.oracle = ou_grid_posterior_mean(OuParameter::Drift, p(c, "theta"), p(c, "sigma"), p(c, "x0"), p(c, "obs_sd"),
                                          ys, p(c, "prior_lo"), p(c, "prior_hi"),
                                          static_cast<int>(p(c, "reference_level")),
                                          static_cast<int>(p(c, "grid_points")));
        r.oracle_label = "grid posterior mean of the drift (Kalman likelihood at the reference level)";
    }
    return r;
}

Runner make_runner(const ExperimentConfig& c) {
    switch (c.kind) {
        case ExperimentKind::MlmcSde: return sde_runner(c);
        case ExperimentKind::PfVsMlpf: return pf_runner(c);
        case ExperimentKind::SmcVsMlsmc: return smc_runner(c);
        case ExperimentKind::PmmhVsMlpmmh: return pmmh_runner(c);
        case ExperimentKind::EnkfVsMlenkf: return enkf_runner(c);
        case ExperimentKind::Rates: break;
    }
    throw std::invalid_argument("run_experiment: rates experiments go through run_rates");
}

std::vector<MethodSummary> summarize(const std::vector<ResultRow>& rows, const std::vector<double>& epsilons) {
    std::vector<MethodSummary> out;
    std::vector<std::string> order;
    for (const auto& row : rows)
        if (std::find(order.begin(), order.end(), row.method) == order.end()) order.push_back(row.method);
    for (const auto& method : order) {
        MethodSummary s;
        s.method = method;
        for (double eps : epsilons) {
            RunningStats cost, se;
            bool have_se = false;
            for (const auto& row : rows) {
                if (row.method != method || row.epsilon != eps) continue;
                cost.push(row.total_cost);
                if (row.squared_error) {
                    se.push(*row.squared_error);
                    have_se = true;
                }
            }
            s.epsilons.push_back(eps);
            s.mean_cost.push_back(cost.mean());
            s.mse.push_back(have_se ? se.mean() : kNaN);
        }
        s.cost_vs_eps_slope = kNaN;
        s.cost_vs_mse_slope = kNaN;
        if (s.epsilons.size() >= 2) {
            std::vector<double> le, lc, lm;
            for (std::size_t i = 0; i < s.epsilons.size(); ++i) {
                le.push_back(std::log(s.epsilons[i]));
                lc.push_back(std::log(s.mean_cost[i]));
                lm.push_back(std::log(s.mse[i]));
            }
            s.cost_vs_eps_slope = least_squares(le, lc).slope;
            if (std::all_of(s.mse.begin(), s.mse.end(), [](double m) { return std::isfinite(m) && m > 0.0; }))
                s.cost_vs_mse_slope = least_squares(lm, lc).slope;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- public: names and config

std::string to_string(ExperimentKind kind) {
    for (const auto& [k, n] : kind_names())
        if (k == kind) return n;
    return "?";
}

std::string to_string(OracleKind kind) {
    for (const auto& [k, n] : oracle_names())
        if (k == kind) return n;
    return "?";
}

std::optional<std::map<std::string, double>> model_defaults(const std::string& model) {
    const auto it = model_table().find(model);
    if (it == model_table().end()) return std::nullopt;
    return it->second.defaults;
}

ConfigValidation validate_config(std::string_view text) {
    ConfigValidation out;
    auto& errors = out.errors;
    json j;
    try {
        j = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        errors.push_back(std::string("config: invalid JSON (") + e.what() + ")");
        return out;
    }
    if (!j.is_object()) {
        errors.push_back("config: top level must be a JSON object");
        return out;
    }
    const Reader top{j, errors, ""};
    top.check_keys({"kind", "model", "epsilons", "replicates", "seed", "output", "oracle", "planning", "rates",
                    "record_wall_clock"});

    ExperimentConfig c;
    bool kind_ok = false;
    if (const auto s = top.string("kind", std::nullopt)) {
        if (const auto k = lookup(kind_names(), *s)) {
            c.kind = *k;
            kind_ok = true;
        } else {
            errors.push_back("kind: unknown experiment kind '" + *s + "' (expected one of " +
                             joined_names(kind_names()) + ")");
        }
    }

    const ModelInfo* info = nullptr;
    if (!j.contains("model")) {
        errors.push_back("model: required");
    } else if (!j.at("model").is_object()) {
        errors.push_back("model: must be an object with 'name' and optional 'parameters'");
    } else {
        const Reader mr{j.at("model"), errors, "model"};
        mr.check_keys({"name", "parameters"});
        if (const auto name = mr.string("name", std::nullopt)) {
            const auto it = model_table().find(*name);
            if (it == model_table().end()) {
                errors.push_back("model.name: unknown model '" + *name + "'");
            } else {
                info = &it->second;
                c.model = *name;
                c.parameters = info->defaults;
                if (kind_ok && std::find(info->kinds.begin(), info->kinds.end(), c.kind) == info->kinds.end())
                    errors.push_back("model.name: model '" + *name + "' is not available for kind '" +
                                     to_string(c.kind) + "'");
            }
        }
        if (j.at("model").contains("parameters")) {
            const auto& params = j.at("model").at("parameters");
            if (!params.is_object()) {
                errors.push_back("model.parameters: must be an object");
            } else if (info) {
                for (const auto& [k, v] : params.items()) {
                    const std::string f = "model.parameters." + k;
                    if (!info->defaults.count(k))
                        errors.push_back(f + ": unknown parameter for model '" + c.model + "'");
                    else if (!v.is_number() || !std::isfinite(v.get<double>()))
                        errors.push_back(f + ": must be a finite number");
                    else
                        c.parameters[k] = v.get<double>();
                }
            }
        }
    }

    if (!j.contains("epsilons")) {
        if (!(kind_ok && c.kind == ExperimentKind::Rates)) errors.push_back("epsilons: required");
    } else if (!j.at("epsilons").is_array()) {
        errors.push_back("epsilons: must be an array of numbers");
    } else {
        const auto& arr = j.at("epsilons");
        bool ok = true;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string f = "epsilons[" + std::to_string(i) + "]";
            if (!arr[i].is_number()) {
                errors.push_back(f + ": must be a number");
                ok = false;
                continue;
            }
            const double e = arr[i].get<double>();
            if (!(e > 0.0 && e < 1.0)) {
                errors.push_back(f + ": " + fmt(e) + " is outside (0, 1)");
                ok = false;
            }
            c.epsilons.push_back(e);
        }
        if (ok)
            for (std::size_t i = 1; i < c.epsilons.size(); ++i)
                if (!(c.epsilons[i] < c.epsilons[i - 1])) {
                    errors.push_back("epsilons: grid must be strictly decreasing");
                    break;
                }
        if (arr.empty() && !(kind_ok && c.kind == ExperimentKind::Rates))
            errors.push_back("epsilons: must not be empty");
    }

    if (const auto r = top.integer("replicates", 2)) {
        if (*r < 2) errors.push_back("replicates: must be at least 2, got " + std::to_string(*r));
        c.replicates = static_cast<int>(*r);
    }
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !(j.at("seed").is_number_integer() && j.at("seed").get<std::int64_t>() >= 0))
            errors.push_back("seed: must be a non-negative integer");
        else
            c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (const auto o = top.string("output", std::string("results.csv"))) {
        if (o->empty()) errors.push_back("output: must not be empty");
        c.output = *o;
    }
    if (j.contains("oracle")) {
        if (const auto s = top.string("oracle", std::nullopt)) {
            if (const auto o = lookup(oracle_names(), *s)) {
                c.oracle = *o;
                if (info && !(kind_ok && c.kind == ExperimentKind::Rates) &&
                    std::find(info->oracles.begin(), info->oracles.end(), *o) == info->oracles.end())
                    errors.push_back("oracle: '" + *s + "' is unavailable for model '" + c.model + "'");
            } else {
                errors.push_back("oracle: unknown oracle '" + *s + "' (expected one of " +
                                 joined_names(oracle_names()) + ")");
            }
        }
    } else if (info) {
        c.oracle = info->oracles.front();
    }

    if (kind_ok && c.kind == ExperimentKind::EnkfVsMlenkf) c.planning.rule = AllocationRule::EnsembleKalman;
    if (j.contains("planning")) {
        if (!j.at("planning").is_object()) {
            errors.push_back("planning: must be an object");
        } else {
            const Reader pr{j.at("planning"), errors, "planning"};
            pr.check_keys({"alpha", "beta", "zeta", "scale", "rule", "level_offset", "min_level", "pilot_samples",
                           "variance_fraction"});
            auto& pl = c.planning;
            const auto a = pr.number("alpha", pl.rates.alpha), b = pr.number("beta", pl.rates.beta),
                       z = pr.number("zeta", pl.rates.zeta), s = pr.number("scale", pl.scale);
            positive(errors, "planning.alpha", a);
            positive(errors, "planning.beta", b);
            positive(errors, "planning.zeta", z);
            positive(errors, "planning.scale", s);
            if (a) pl.rates.alpha = *a;
            if (b) pl.rates.beta = *b;
            if (z) pl.rates.zeta = *z;
            if (s) pl.scale = *s;
            if (const auto rule = pr.string("rule", rule_name(pl.rule))) {
                if (*rule == "standard")
                    pl.rule = AllocationRule::Standard;
                else if (*rule == "ensemble-kalman")
                    pl.rule = AllocationRule::EnsembleKalman;
                else
                    errors.push_back("planning.rule: must be 'standard' or 'ensemble-kalman'");
            }
            if (const auto off = pr.integer("level_offset", pl.level_offset)) pl.level_offset = static_cast<int>(*off);
            if (const auto ml = pr.integer("min_level", pl.min_level)) {
                if (*ml < 2 || *ml > 20) errors.push_back("planning.min_level: must be in [2, 20]");
                pl.min_level = static_cast<int>(*ml);
            }
            if (const auto ps = pr.integer("pilot_samples", pl.pilot_samples)) {
                if (*ps < 0 || *ps == 1) errors.push_back("planning.pilot_samples: must be 0 (off) or at least 2");
                if (*ps > 0 && kind_ok && c.kind != ExperimentKind::MlmcSde)
                    errors.push_back("planning.pilot_samples: pilot calibration is only available for mlmc-sde");
                pl.pilot_samples = *ps;
            }
            if (const auto vf = pr.number("variance_fraction", pl.variance_fraction)) {
                if (!(*vf > 0.0 && *vf < 1.0)) errors.push_back("planning.variance_fraction: must be in (0, 1)");
                pl.variance_fraction = *vf;
            }
        }
    }
    if (j.contains("rates")) {
        if (!j.at("rates").is_object()) {
            errors.push_back("rates: must be an object");
        } else {
            const Reader rr{j.at("rates"), errors, "rates"};
            rr.check_keys({"first_level", "last_level", "samples_per_level"});
            auto& rs = c.rates;
            if (const auto v = rr.integer("first_level", rs.first_level)) rs.first_level = static_cast<int>(*v);
            if (const auto v = rr.integer("last_level", rs.last_level)) rs.last_level = static_cast<int>(*v);
            if (const auto v = rr.integer("samples_per_level", rs.samples_per_level)) rs.samples_per_level = *v;
            if (rs.first_level < 1) errors.push_back("rates.first_level: must be at least 1");
            if (rs.last_level > 20) errors.push_back("rates.last_level: must be at most 20");
            if (rs.last_level < rs.first_level + 2)
                errors.push_back("rates.last_level: need at least three levels (last_level >= first_level + 2)");
            if (rs.samples_per_level < 2) errors.push_back("rates.samples_per_level: must be at least 2");
        }
    }
    if (j.contains("record_wall_clock")) {
        if (!j.at("record_wall_clock").is_boolean())
            errors.push_back("record_wall_clock: must be a boolean");
        else
            c.record_wall_clock = j.at("record_wall_clock").get<bool>();
    }

    if (errors.empty()) out.config = std::move(c);
    return out;
}

std::string canonical_text(const ExperimentConfig& c) {
    json j;
    j["kind"] = to_string(c.kind);
    j["model"]["name"] = c.model;
    j["model"]["parameters"] = json::object();
    for (const auto& [k, v] : c.parameters) j["model"]["parameters"][k] = v;
    j["epsilons"] = c.epsilons;
    j["replicates"] = c.replicates;
    j["seed"] = c.seed;
    j["output"] = c.output;
    j["oracle"] = to_string(c.oracle);
    j["planning"] = {{"alpha", c.planning.rates.alpha}, {"beta", c.planning.rates.beta},
                     {"zeta", c.planning.rates.zeta},   {"scale", c.planning.scale},
                     {"rule", rule_name(c.planning.rule)}, {"level_offset", c.planning.level_offset},
                     {"min_level", c.planning.min_level}, {"pilot_samples", c.planning.pilot_samples},
                     {"variance_fraction", c.planning.variance_fraction}};
    j["rates"] = {{"first_level", c.rates.first_level},
                  {"last_level", c.rates.last_level},
                  {"samples_per_level", c.rates.samples_per_level}};
    j["record_wall_clock"] = c.record_wall_clock;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- public: running

ExperimentResult run_experiment(const ExperimentConfig& config) {
    if (config.kind == ExperimentKind::Rates) return run_rates(config);
    if (config.epsilons.empty()) throw std::invalid_argument("run_experiment: empty epsilon grid");
    const Runner runner = make_runner(config);
    const RngStream master(config.seed, 0);

    ExperimentResult result;
    std::vector<double> oracle_steps = runner.oracle_steps;
    std::vector<double> oracle_covs = runner.oracle_step_covariances;
    result.oracle_label = runner.oracle_label;
    std::vector<double> pilot_variances;
    if (config.planning.pilot_samples > 0) {
        if (config.kind != ExperimentKind::MlmcSde)
            throw std::invalid_argument("run_experiment: pilot calibration is only available for SDE experiments");
        const SdeModel m = sde_model(config);
        const int top = plan_level(config.planning, config.epsilons.back() / 2.0);
        const auto stats = pilot_level_stats(coupled_terminal_sampler(m), terminal_sampler(m, 1), 1, top,
                                             config.planning.pilot_samples, master.split(kPilotLane));
        for (const auto& st : stats) {
            pilot_variances.push_back(st.var_diff);
            result.pilot_rows.push_back({st.level, st.abs_mean_diff, st.var_diff, config.planning.pilot_samples});
        }
    }
    if (config.oracle == OracleKind::LongReference) {
        const double eps = config.epsilons.back() / 2.0;
        const auto ref = runner.run(1, make_plan(config.planning, eps, 10.0, pilot_variances),
                                    master.split(kLongReferenceLane));
        result.oracle_value = ref.value;
        oracle_steps = ref.step_means;
        oracle_covs = ref.step_covariances;
        result.oracle_label = "long-reference " + runner.methods[1] + " run at epsilon " + fmt(eps) + " with " +
                              "10x allocation scale";
    } else {
        result.oracle_value = runner.oracle;
    }
    if (!result.oracle_value) throw std::invalid_argument("run_experiment: oracle unavailable for this experiment");

    const std::size_t n_eps = config.epsilons.size();
    const auto reps = static_cast<std::size_t>(config.replicates);
    const std::size_t n_methods = runner.methods.size();
    struct Slot {
        std::vector<ResultRow> rows;
        std::vector<StepRow> steps;
    };
    std::vector<Slot> slots(n_eps * reps);
    std::vector<Plan> plans;
    for (double eps : config.epsilons) plans.push_back(make_plan(config.planning, eps, 1.0, pilot_variances));

    parallel_for(slots.size(), [&](std::size_t t) {
        const std::size_t e = t / reps, rep = t % reps;
        const double eps = config.epsilons[e];
        for (std::size_t m = 0; m < n_methods; ++m) {
            const auto start = std::chrono::steady_clock::now();
            const auto out = runner.run(m, plans[e], master.derive(e, rep, m));
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            ResultRow row;
            row.method = runner.methods[m];
            row.epsilon = eps;
            row.replicate = static_cast<int>(rep);
            row.value = out.value;
            row.oracle_value = result.oracle_value;
            row.squared_error = (out.value - *result.oracle_value) * (out.value - *result.oracle_value);
            row.total_cost = out.total_cost;
            if (config.record_wall_clock) row.wall_seconds = wall;
            row.L = plans[e].L;
            row.seed = config.seed;
            slots[t].rows.push_back(row);
            for (std::size_t k = 0; k < out.step_means.size() && k < oracle_steps.size(); ++k) {
                StepRow s;
                s.method = row.method;
                s.epsilon = eps;
                s.replicate = row.replicate;
                s.k = static_cast<int>(k) + 1;
                s.mean = out.step_means[k];
                s.oracle_mean = oracle_steps[k];
                if (k < out.step_covariances.size() && k < oracle_covs.size()) {
                    s.covariance = out.step_covariances[k];
                    s.oracle_covariance = oracle_covs[k];
                }
                slots[t].steps.push_back(s);
            }
        }
    });
    for (auto& s : slots) {
        result.rows.insert(result.rows.end(), s.rows.begin(), s.rows.end());
        result.step_rows.insert(result.step_rows.end(), s.steps.begin(), s.steps.end());
    }
    result.summaries = summarize(result.rows, config.epsilons);
    return result;
}

ExperimentResult run_rates(const ExperimentConfig& config) {
    const RngStream stream = RngStream(config.seed, 0).split(kRatesLane);
    const auto& rs = config.rates;
    ExperimentResult result;
    std::vector<LevelStat> stats;
    if (config.model == "gbm" || config.model == "ou" || config.model == "langevin") {
        const SdeModel m = sde_model(config);
        stats = pilot_level_stats(coupled_terminal_sampler(m), terminal_sampler(m, 1), rs.first_level, rs.last_level,
                                  rs.samples_per_level, stream);
    } else if (config.model == "linear-gaussian") {
        if (rs.first_level < 2) throw std::invalid_argument("run_rates: filter rates need first_level >= 2");
        const auto ys = linear_gaussian_observations(config);
        const auto hmm = make_linear_gaussian_hmm(p(config, "theta"), p(config, "sigma"), p(config, "x0"),
                                                  p(config, "obs_var"), ys);
        const auto n_pairs = static_cast<std::size_t>(p(config, "particles"));
        for (int l = rs.first_level; l <= rs.last_level; ++l) {
            std::vector<double> diffs(static_cast<std::size_t>(rs.samples_per_level));
            parallel_for(diffs.size(), [&](std::size_t i) {
                diffs[i] = coupled_particle_filter(hmm, LevelIndex(l), n_pairs, first_coordinate,
                                                   stream.derive(static_cast<std::uint64_t>(l), i))
                               .differences.back();
            });
            // Per-pair variance: the estimator variance scales as 1/N.
            stats.push_back({l, std::abs(mean(diffs)), sample_variance(diffs) * static_cast<double>(n_pairs)});
        }
    } else {
        throw std::invalid_argument("run_rates: model '" + config.model + "' has no pilot sampler");
    }
    for (const auto& s : stats) result.level_rows.push_back({s.level, s.abs_mean_diff, s.var_diff, rs.samples_per_level});
    result.fitted_rates = fit_rates(stats);
    return result;
}

// ---------------------------------------------------------------- public: output

std::string format_csv(std::span<const ResultRow> rows) {
    std::string s = "method,epsilon,replicate,value,oracle_value,squared_error,total_cost,wall_seconds,L,seed\n";
    for (const auto& r : rows) {
        s += r.method + "," + fmt(r.epsilon) + "," + std::to_string(r.replicate) + "," + fmt(r.value) + "," +
             fmt(r.oracle_value) + "," + fmt(r.squared_error) + "," + fmt(r.total_cost) + "," + fmt(r.wall_seconds) +
             "," + std::to_string(r.L) + "," + std::to_string(r.seed) + "\n";
    }
    return s;
}

std::string format_step_csv(std::span<const StepRow> rows) {
    std::string s = "method,epsilon,replicate,k,mean,oracle_mean,covariance,oracle_covariance\n";
    for (const auto& r : rows)
        s += r.method + "," + fmt(r.epsilon) + "," + std::to_string(r.replicate) + "," + std::to_string(r.k) + "," +
             fmt(r.mean) + "," + fmt(r.oracle_mean) + "," + fmt(r.covariance) + "," + fmt(r.oracle_covariance) + "\n";
    return s;
}

std::string format_level_csv(std::span<const LevelRow> rows) {
    std::string s = "level,abs_mean_diff,var_diff,samples\n";
    for (const auto& r : rows)
        s += std::to_string(r.level) + "," + fmt(r.abs_mean_diff) + "," + fmt(r.var_diff) + "," +
             std::to_string(r.samples) + "\n";
    return s;
}

std::string summary_table(const ExperimentResult& result) {
    std::ostringstream os;
    char buf[160];
    if (result.fitted_rates) {
        os << "level  abs_mean_diff   var_diff\n";
        for (const auto& r : result.level_rows) {
            std::snprintf(buf, sizeof buf, "%5d  %13.6e  %13.6e\n", r.level, r.abs_mean_diff, r.var_diff);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "alpha_hat = %.4f\nbeta_hat  = %.4f\n", result.fitted_rates->alpha,
                      result.fitted_rates->beta);
        os << buf;
        for (const auto& w : result.fitted_rates->warnings) os << "warning: " << w << "\n";
        return os.str();
    }
    if (result.oracle_value) {
        std::snprintf(buf, sizeof buf, "oracle = %.10g", *result.oracle_value);
        os << buf << " (" << result.oracle_label << ")\n";
    }
    for (const auto& s : result.summaries) {
        os << "method " << s.method << "\n";
        os << "      epsilon      mean_cost            mse\n";
        for (std::size_t i = 0; i < s.epsilons.size(); ++i) {
            std::snprintf(buf, sizeof buf, "  %11.5g  %13.6e  %13.6e\n", s.epsilons[i], s.mean_cost[i], s.mse[i]);
            os << buf;
        }
        std::snprintf(buf, sizeof buf, "  slope log(cost) vs log(eps): %.4f\n  slope log(cost) vs log(mse): %.4f\n",
                      s.cost_vs_eps_slope, s.cost_vs_mse_slope);
        os << buf;
    }
    return os.str();
}

std::string steps_path(const std::string& output) {
    const std::string ext = ".csv";
    if (output.size() >= ext.size() && output.compare(output.size() - ext.size(), ext.size(), ext) == 0)
        return output.substr(0, output.size() - ext.size()) + ".steps.csv";
    return output + ".steps.csv";
}

void write_text_file(const std::string& path, const std::string& text) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

}  // namespace mlmc
