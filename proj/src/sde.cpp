#include "mlmc/sde.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mlmc {

void SdeModel::validate() const {
    if (dim < 1) throw std::invalid_argument("SdeModel: dim must be >= 1");
    if (!drift || !diffusion) throw std::invalid_argument("SdeModel: drift and diffusion are required");
    if (initial_state.size() != dim)
        throw std::invalid_argument("SdeModel: initial_state has dimension " +
                                    std::to_string(initial_state.size()) + ", expected " +
                                    std::to_string(dim));
    const double probes[] = {0.0, 1.0, -1.0, 0.5};
    for (double shift : probes) {
        Vector u = initial_state.array() + shift;
        Vector a = Vector::Zero(dim);
        Matrix b = Matrix::Zero(dim, dim);
        drift(u, a);
        diffusion(u, b);
        if (a.size() != dim) throw std::invalid_argument("SdeModel: drift output has wrong dimension");
        if (b.rows() != dim || b.cols() != dim)
            throw std::invalid_argument("SdeModel: diffusion output is not d x d");
    }
}

SdeModel make_gbm(double theta1, double theta2, double x0) {
    SdeModel m;
    m.dim = 1;
    m.name = "gbm";
    m.drift = [theta1](const Vector& u, Vector& out) { out.noalias() = theta1 * u; };
    m.diffusion = [theta2](const Vector& u, Matrix& out) { out(0, 0) = theta2 * u(0); };
    m.initial_state = Vector::Constant(1, x0);
    m.parameter = Vector(2);
    m.parameter << theta1, theta2;
    return m;
}

SdeModel make_ou(double theta1, double theta2, double x0) {
    SdeModel m;
    m.dim = 1;
    m.name = "ou";
    m.drift = [theta1](const Vector& u, Vector& out) { out.noalias() = -theta1 * u; };
    m.diffusion = [theta2](const Vector&, Matrix& out) { out(0, 0) = theta2; };
    m.initial_state = Vector::Constant(1, x0);
    m.parameter = Vector(2);
    m.parameter << theta1, theta2;
    return m;
}

SdeModel make_langevin_like(double theta1, double theta2, double x0) {
    SdeModel m;
    m.dim = 1;
    m.name = "langevin-like";
    m.drift = [theta1](const Vector& u, Vector& out) { out(0) = theta1 * (u(0) - u(0) * u(0) * u(0)); };
    m.diffusion = [theta2](const Vector&, Matrix& out) { out(0, 0) = theta2; };
    m.initial_state = Vector::Constant(1, x0);
    m.parameter = Vector(2);
    m.parameter << theta1, theta2;
    return m;
}

LevelIndex::LevelIndex(int l) : l_(l) {
    if (l < 1 || l > 40) throw std::invalid_argument("LevelIndex: level must be in [1, 40]");
}

double LevelIndex::h() const { return std::ldexp(1.0, -l_); }

EulerWorkspace::EulerWorkspace(int dim)
    : drift(Vector::Zero(dim)),
      diffusion(Matrix::Zero(dim, dim)),
      product(Vector::Zero(dim)),
      noise(Vector::Zero(dim)),
      noise_next(Vector::Zero(dim)),
      noise_coarse(Vector::Zero(dim)) {}

void euler_step_inplace(const SdeModel& model, Vector& state, double h, const Vector& noise,
                        EulerWorkspace& ws) {
    model.drift(state, ws.drift);
    model.diffusion(state, ws.diffusion);
    ws.product.noalias() = ws.diffusion * noise;
    state += h * ws.drift + std::sqrt(h) * ws.product;
}

Vector euler_step(const SdeModel& model, const Vector& state, double h, const Vector& noise) {
    if (!(h > 0.0)) throw std::invalid_argument("euler_step: h must be positive");
    if (state.size() != model.dim || noise.size() != model.dim)
        throw std::invalid_argument("euler_step: state/noise dimension does not match the model");
    EulerWorkspace ws(model.dim);
    Vector out = state;
    euler_step_inplace(model, out, h, noise, ws);
    return out;
}

void simulate_unit_interval_inplace(const SdeModel& model, LevelIndex level, Vector& state,
                                    RngStream& stream, EulerWorkspace& ws) {
    const double h = level.h();
    const std::int64_t steps = level.steps_per_unit();
    const auto d = static_cast<std::size_t>(model.dim);
    for (std::int64_t m = 0; m < steps; ++m) {
        stream.fill_normal(std::span<double>(ws.noise.data(), d));
        euler_step_inplace(model, state, h, ws.noise, ws);
    }
}

Vector simulate_unit_interval(const SdeModel& model, LevelIndex level, const Vector& start,
                              RngStream& stream) {
    if (start.size() != model.dim) throw std::invalid_argument("simulate_unit_interval: bad start dimension");
    EulerWorkspace ws(model.dim);
    Vector state = start;
    simulate_unit_interval_inplace(model, level, state, stream, ws);
    return state;
}

Vector simulate_unit_interval(const SdeModel& model, LevelIndex level, const Vector& start,
                              std::span<const Vector> increments) {
    if (static_cast<std::int64_t>(increments.size()) != level.steps_per_unit())
        throw std::invalid_argument("simulate_unit_interval: expected 2^l increments");
    if (start.size() != model.dim) throw std::invalid_argument("simulate_unit_interval: bad start dimension");
    EulerWorkspace ws(model.dim);
    Vector state = start;
    const double h = level.h();
    for (const Vector& xi : increments) {
        if (xi.size() != model.dim) throw std::invalid_argument("simulate_unit_interval: bad increment dimension");
        euler_step_inplace(model, state, h, xi, ws);
    }
    return state;
}

namespace {

void check_coupled(const SdeModel& model, const CoupledState& state, LevelIndex fine_level) {
    if (fine_level.l() < 2) throw std::invalid_argument("coupled_transition: fine level must be >= 2");
    if (state.fine.size() != model.dim || state.coarse.size() != model.dim)
        throw std::invalid_argument("coupled_transition: state dimension does not match the model");
}

}  // namespace

void coupled_transition_inplace(const SdeModel& model, Vector& fine, Vector& coarse,
                                LevelIndex fine_level, RngStream& stream, EulerWorkspace& ws) {
    const double h_fine = fine_level.h();
    const double h_coarse = 2.0 * h_fine;
    const std::int64_t coarse_steps = fine_level.steps_per_unit() / 2;
    const auto d = static_cast<std::size_t>(model.dim);
    for (std::int64_t m = 0; m < coarse_steps; ++m) {
        stream.fill_normal(std::span<double>(ws.noise.data(), d));
        euler_step_inplace(model, fine, h_fine, ws.noise, ws);
        stream.fill_normal(std::span<double>(ws.noise_next.data(), d));
        euler_step_inplace(model, fine, h_fine, ws.noise_next, ws);
        ws.noise_coarse = (ws.noise + ws.noise_next) / std::sqrt(2.0);
        euler_step_inplace(model, coarse, h_coarse, ws.noise_coarse, ws);
    }
}

CoupledState coupled_transition(const SdeModel& model, const CoupledState& state, LevelIndex fine_level,
                                RngStream& stream, NoiseTape* tape) {
    check_coupled(model, state, fine_level);
    CoupledState out = state;
    EulerWorkspace ws(model.dim);
    if (tape == nullptr) {
        coupled_transition_inplace(model, out.fine, out.coarse, fine_level, stream, ws);
        return out;
    }
    std::vector<Vector> increments(static_cast<std::size_t>(fine_level.steps_per_unit()));
    for (Vector& xi : increments) xi = stream.gaussian_vector(model.dim);
    tape->increments.insert(tape->increments.end(), increments.begin(), increments.end());
    return coupled_transition(model, state, fine_level, increments);
}

CoupledState coupled_transition(const SdeModel& model, const CoupledState& state, LevelIndex fine_level,
                                std::span<const Vector> fine_increments) {
    check_coupled(model, state, fine_level);
    if (static_cast<std::int64_t>(fine_increments.size()) != fine_level.steps_per_unit())
        throw std::invalid_argument("coupled_transition: expected 2^l fine increments");
    CoupledState out = state;
    EulerWorkspace ws(model.dim);
    const double h_fine = fine_level.h();
    const double h_coarse = 2.0 * h_fine;
    for (std::size_t m = 0; m + 1 < fine_increments.size(); m += 2) {
        euler_step_inplace(model, out.fine, h_fine, fine_increments[m], ws);
        euler_step_inplace(model, out.fine, h_fine, fine_increments[m + 1], ws);
        ws.noise_coarse = coarse_increment(fine_increments[m], fine_increments[m + 1]);
        euler_step_inplace(model, out.coarse, h_coarse, ws.noise_coarse, ws);
    }
    return out;
}

}  // namespace mlmc
