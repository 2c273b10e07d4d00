#include "mlmc/mcmc.hpp"

#include <cmath>
#include <stdexcept>

namespace mlmc {

MhState MhState::start(const LogTarget& target, Vector init) {
    if (init.size() != target.dim) throw std::invalid_argument("MhState::start: initial state has wrong dimension");
    MhState s;
    s.log_density_current = target.log_density(init);
    s.current = std::move(init);
    return s;
}

RandomWalkProposal RandomWalkProposal::isotropic(int dim, double scale) {
    if (dim < 1) throw std::invalid_argument("RandomWalkProposal: dim must be >= 1");
    if (!(scale > 0.0)) throw std::invalid_argument("RandomWalkProposal: scale must be positive");
    return RandomWalkProposal(Matrix::Identity(dim, dim), scale);
}

RandomWalkProposal RandomWalkProposal::with_covariance(const Matrix& covariance, double scale) {
    if (covariance.rows() != covariance.cols() || covariance.rows() < 1)
        throw std::invalid_argument("RandomWalkProposal: covariance must be square");
    if (!(scale > 0.0)) throw std::invalid_argument("RandomWalkProposal: scale must be positive");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("RandomWalkProposal: covariance is not positive definite");
    return RandomWalkProposal(llt.matrixL(), scale);
}

void RandomWalkProposal::set_scale(double scale) {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("RandomWalkProposal: bad scale");
    scale_ = scale;
}

Vector RandomWalkProposal::draw(RngStream& stream) const {
    return scale_ * (chol_ * stream.gaussian_vector(dim()));
}

MhState rwmh_step(const LogTarget& target, MhState state, const RandomWalkProposal& proposal, RngStream& stream) {
    Vector candidate = state.current + proposal.draw(stream);
    const double log_candidate = target.log_density(candidate);
    const double log_u = std::log(stream.uniform());
    ++state.proposed_count;
    if (std::isfinite(log_candidate)) {
        const double log_ratio = log_candidate - state.log_density_current;
        if (log_ratio >= 0.0 || log_u < log_ratio) {
            state.current = std::move(candidate);
            state.log_density_current = log_candidate;
            ++state.accepted_count;
        }
    }
    return state;
}

ChainResult rwmh_chain(const LogTarget& target, Vector init, RandomWalkProposal proposal,
                       const ChainOptions& options, RngStream& stream) {
    if (options.n_steps < 1) throw std::invalid_argument("rwmh_chain: n_steps must be >= 1");
    const std::int64_t burn_in =
        options.burn_in >= 0 ? std::min(options.burn_in, options.n_steps) : (options.adapt ? options.n_steps / 2 : 0);

    MhState state = MhState::start(target, std::move(init));
    double log_scale = std::log(proposal.scale());
    ChainResult out;
    out.samples.reserve(static_cast<std::size_t>(options.n_steps - burn_in));

    std::int64_t recorded_accepts = 0;
    for (std::int64_t t = 0; t < options.n_steps; ++t) {
        const std::int64_t accepted_before = state.accepted_count;
        state = rwmh_step(target, std::move(state), proposal, stream);
        const bool accepted = state.accepted_count > accepted_before;
        if (t < burn_in) {
            if (options.adapt) {
                const double gain = 1.0 / std::pow(static_cast<double>(t + 1), 0.6);
                log_scale += gain * ((accepted ? 1.0 : 0.0) - options.target_acceptance);
                proposal.set_scale(std::exp(log_scale));
            }
            continue;
        }
        recorded_accepts += accepted;
        out.samples.push_back(state.current);
    }
    const auto recorded = options.n_steps - burn_in;
    out.acceptance_rate = recorded > 0 ? static_cast<double>(recorded_accepts) / static_cast<double>(recorded) : 0.0;
    out.final_scale = proposal.scale();
    out.final_state = std::move(state);
    return out;
}

}  // namespace mlmc
