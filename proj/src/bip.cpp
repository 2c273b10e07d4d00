#include "mlmc/bip.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "detail.hpp"
#include "mlmc/mcmc.hpp"
#include "mlmc/parallel.hpp"

namespace mlmc {

double EllipticModel::coefficient(double x, const Vector& u) const {
    double a = mean_field(x);
    for (int k = 0; k < n_modes; ++k) a += u(k) * amplitudes[static_cast<std::size_t>(k)] * mode(k + 1, x);
    return a;
}

void EllipticModel::validate() const {
    if (n_modes < 1) throw std::invalid_argument("EllipticModel: need at least one mode");
    if (static_cast<int>(amplitudes.size()) != n_modes)
        throw std::invalid_argument("EllipticModel: amplitudes must have one entry per mode");
    if (!mean_field || !mode || !forcing) throw std::invalid_argument("EllipticModel: missing function");
    if (n_observations < 1) throw std::invalid_argument("EllipticModel: need at least one observation");
    if (noise_covariance.rows() != n_observations || noise_covariance.cols() != n_observations)
        throw std::invalid_argument("EllipticModel: noise covariance must be M x M");
    if (data.size() != 0 && data.size() != n_observations)
        throw std::invalid_argument("EllipticModel: data must have M entries");
    if (base_elements < 1) throw std::invalid_argument("EllipticModel: base_elements must be >= 1");
    if (!(ellipticity_floor > 0.0)) throw std::invalid_argument("EllipticModel: ellipticity floor must be positive");
    double worst = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 4096; ++i) {
        const double x = i / 4096.0;
        double a = mean_field(x);
        for (int k = 0; k < n_modes; ++k) a -= amplitudes[static_cast<std::size_t>(k)] * std::abs(mode(k + 1, x));
        worst = std::min(worst, a);
    }
    if (worst < ellipticity_floor)
        throw std::invalid_argument("EllipticModel: coefficient can fall below the ellipticity floor");
}

EllipticModel make_default_elliptic_model(int n_modes, double noise_sd) {
    EllipticModel m;
    m.n_modes = n_modes;
    m.mode = [](int k, double x) { return std::cos(k * std::numbers::pi * x); };
    double total = 0.0;
    for (int k = 1; k <= n_modes; ++k) {
        m.amplitudes.push_back(0.2 * std::ldexp(1.0, -k));
        total += m.amplitudes.back();
    }
    m.n_observations = 10;
    m.noise_covariance = noise_sd * noise_sd * Matrix::Identity(10, 10);
    m.ellipticity_floor = 1.0 - total;
    return m;
}

int fem_elements(const EllipticModel& model, int level) {
    if (level < 0 || level > 24) throw std::invalid_argument("fem_elements: level out of range");
    return model.base_elements << level;
}

double FemSolution::operator()(double x) const {
    const auto ne = nodes.size() - 1;
    const double h = 1.0 / static_cast<double>(ne);
    auto e = static_cast<std::size_t>(std::clamp(x / h, 0.0, static_cast<double>(ne - 1)));
    e = std::min(e, ne - 1);
    const double t = (x - nodes[e]) / h;
    return (1.0 - t) * values[e] + t * values[e + 1];
}

double FemSolution::integral(double a, double b) const {
    if (b < a) return -integral(b, a);
    const auto ne = nodes.size() - 1;
    const double h = 1.0 / static_cast<double>(ne);
    double s = 0.0;
    auto e = static_cast<std::size_t>(std::clamp(std::floor(a / h), 0.0, static_cast<double>(ne - 1)));
    for (; e < ne && nodes[e] < b; ++e) {
        const double lo = std::max(a, nodes[e]);
        const double hi = std::min(b, nodes[e + 1]);
        if (hi > lo) s += 0.5 * (hi - lo) * ((*this)(lo) + (*this)(hi));
    }
    return s;
}

FemSolution fem_solve(const EllipticModel& model, const Vector& u, int level) {
    if (u.size() != model.n_modes) throw std::invalid_argument("fem_solve: parameter has wrong dimension");
    const int ne = fem_elements(model, level);
    const double h = 1.0 / ne;
    FemSolution sol;
    sol.nodes.resize(static_cast<std::size_t>(ne) + 1);
    for (int j = 0; j <= ne; ++j) sol.nodes[static_cast<std::size_t>(j)] = j * h;

    std::vector<double> a(static_cast<std::size_t>(ne));
    std::vector<double> load(static_cast<std::size_t>(ne) + 1, 0.0);
    const double g = 0.5 / std::sqrt(3.0);
    for (int e = 0; e < ne; ++e) {
        const double x0 = e * h;
        const double ae = model.coefficient(x0 + 0.5 * h, u);
        if (!(ae > 0.0)) throw std::domain_error("fem_solve: coefficient is not positive");
        a[static_cast<std::size_t>(e)] = ae;
        for (double t : {0.5 - g, 0.5 + g}) {
            const double f = model.forcing(x0 + t * h) * 0.5 * h;
            load[static_cast<std::size_t>(e)] += f * (1.0 - t);
            load[static_cast<std::size_t>(e) + 1] += f * t;
        }
    }

    // Thomas algorithm on interior nodes 1..ne-1.
    const int n = ne - 1;
    sol.values.assign(static_cast<std::size_t>(ne) + 1, 0.0);
    if (n < 1) return sol;
    std::vector<double> c_prime(static_cast<std::size_t>(n)), d_prime(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto j = static_cast<std::size_t>(i) + 1;
        const double diag = (a[j - 1] + a[j]) / h;
        const double lower = i > 0 ? -a[j - 1] / h : 0.0;
        const double upper = -a[j] / h;
        const double denom = diag - (i > 0 ? lower * c_prime[static_cast<std::size_t>(i) - 1] : 0.0);
        c_prime[static_cast<std::size_t>(i)] = upper / denom;
        d_prime[static_cast<std::size_t>(i)] =
            (load[j] - (i > 0 ? lower * d_prime[static_cast<std::size_t>(i) - 1] : 0.0)) / denom;
    }
    for (int i = n - 1; i >= 0; --i) {
        const auto j = static_cast<std::size_t>(i) + 1;
        sol.values[j] = d_prime[static_cast<std::size_t>(i)] - (i + 1 < n ? c_prime[static_cast<std::size_t>(i)] * sol.values[j + 1] : 0.0);
    }
    return sol;
}

Vector observe(const EllipticModel& model, const FemSolution& p) {
    const int m = model.n_observations;
    Vector g(m);
    for (int i = 0; i < m; ++i) g(i) = p.integral(static_cast<double>(i) / m, static_cast<double>(i + 1) / m) * m;
    return g;
}

double log_kappa(const EllipticModel& model, const Vector& u, int level) {
    if (model.data.size() != model.n_observations) throw std::invalid_argument("log_kappa: model has no data");
    for (int k = 0; k < u.size(); ++k)
        if (!(std::abs(u(k)) <= 1.0)) return -std::numeric_limits<double>::infinity();
    const Vector r = observe(model, fem_solve(model, u, level)) - model.data;
    return -0.5 * r.dot(model.noise_covariance.ldlt().solve(r));
}

Vector generate_synthetic_data(const EllipticModel& model, const Vector& true_u, int data_level, RngStream& stream,
                               bool noiseless) {
    Vector y = observe(model, fem_solve(model, true_u, data_level));
    if (noiseless) return y;
    Eigen::LLT<Matrix> llt(model.noise_covariance);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("generate_synthetic_data: noise covariance is not positive definite");
    return y + Matrix(llt.matrixL()) * stream.gaussian_vector(model.n_observations);
}

TargetSequence make_bip_sequence(const EllipticModel& model, int n_levels, int first_level, int burn_in) {
    model.validate();
    if (model.data.size() != model.n_observations) throw std::invalid_argument("make_bip_sequence: model has no data");
    if (n_levels < 1) throw std::invalid_argument("make_bip_sequence: need at least one level");
    TargetSequence seq;
    seq.dim = model.n_modes;
    for (int l = first_level; l < first_level + n_levels; ++l)
        seq.log_kappas.emplace_back([model, l](const Vector& u) { return log_kappa(model, u, l); });
    const LogTarget first{seq.log_kappas.front(), seq.dim};
    const int dim = seq.dim;
    seq.initial_sampler = [first, dim, burn_in](RngStream& s) {
        Vector u(dim);
        for (int k = 0; k < dim; ++k) u(k) = 2.0 * s.uniform() - 1.0;
        const auto prop = RandomWalkProposal::isotropic(dim, 0.5);
        auto st = MhState::start(first, u);
        for (int i = 0; i < burn_in; ++i) st = rwmh_step(first, std::move(st), prop, s);
        return st.current;
    };
    return seq;
}

double l2_error(const FemSolution& p, const std::function<double(double)>& exact) {
    static const double xi[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    static const double wi[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    double s = 0.0;
    for (std::size_t e = 0; e + 1 < p.nodes.size(); ++e) {
        const double lo = p.nodes[e], hi = p.nodes[e + 1];
        const double mid = 0.5 * (lo + hi), half = 0.5 * (hi - lo);
        for (int q = 0; q < 3; ++q) {
            const double x = mid + half * xi[q];
            const double t = (x - lo) / (hi - lo);
            const double d = (1.0 - t) * p.values[e] + t * p.values[e + 1] - exact(x);
            s += wi[q] * half * d * d;
        }
    }
    return std::sqrt(s);
}

GridPosterior grid_posterior(const EllipticModel& model, int level, int points) {
    if (model.n_modes != 2) throw std::invalid_argument("grid_posterior: requires exactly two modes");
    if (points < 2) throw std::invalid_argument("grid_posterior: need at least 2 points per axis");
    const double step = 2.0 / points;
    std::vector<double> logk(static_cast<std::size_t>(points) * static_cast<std::size_t>(points));
    parallel_for(static_cast<std::size_t>(points), [&](std::size_t i) {
        for (int j = 0; j < points; ++j) {
            Vector u(2);
            u << -1.0 + (static_cast<double>(i) + 0.5) * step, -1.0 + (j + 0.5) * step;
            logk[i * static_cast<std::size_t>(points) + static_cast<std::size_t>(j)] = log_kappa(model, u, level);
        }
    });
    GridPosterior out;
    const double lse = detail::log_sum_exp(logk);
    out.log_normalizer = lse + 2.0 * std::log(step);
    out.mean.assign(2, 0.0);
    out.mode = Vector::Zero(2);
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < points; ++i)
        for (int j = 0; j < points; ++j) {
            const double lk = logk[static_cast<std::size_t>(i) * static_cast<std::size_t>(points) + static_cast<std::size_t>(j)];
            const double w = std::exp(lk - lse);
            const double u1 = -1.0 + (i + 0.5) * step, u2 = -1.0 + (j + 0.5) * step;
            out.mean[0] += w * u1;
            out.mean[1] += w * u2;
            if (lk > best) {
                best = lk;
                out.mode << u1, u2;
            }
        }
    return out;
}

}  // namespace mlmc
