#include "seqtrans/vae.hpp"

#include <cmath>
#include <stdexcept>

namespace seqtrans::vae {

GaussianPosterior split_posterior(nn::Tape& tape, nn::Tensor h) {
    const std::size_t d = h.cols();
    if (d % 2 != 0)
        throw std::invalid_argument("split_posterior: hidden width must be even, got " +
                                    std::to_string(d));
    nn::Tensor log_var = tape.slice_cols(h, 0, d / 2);
    nn::Tensor mu = tape.slice_cols(h, d / 2, d);
    nn::Tensor sigma2 = tape.clamp_min(tape.exp(log_var), kVarianceFloor);
    return GaussianPosterior{mu, sigma2};
}

LatentSample reparameterize(nn::Tape& tape, const GaussianPosterior& p, nn::Tensor eps) {
    if (eps.size() != p.mu.size())
        throw std::invalid_argument("reparameterize: eps size " + std::to_string(eps.size()) +
                                    " does not match mu size " + std::to_string(p.mu.size()));
    nn::Tensor z = tape.add(p.mu, tape.mul(tape.sqrt(p.sigma2), eps));
    return LatentSample{z, eps};
}

nn::Tensor kl_standard_normal(nn::Tape& tape, const GaussianPosterior& p) {
    nn::Tensor mu2 = tape.mul(p.mu, p.mu);
    nn::Tensor inner =
        tape.add_scalar(tape.add(mu2, tape.add(p.sigma2, tape.scale(tape.log(p.sigma2), -1.0))),
                        -1.0);
    return tape.scale(tape.row_sum(inner), 0.5);
}

double kl_standard_normal(std::span<const double> mu, std::span<const double> sigma2) {
    double acc = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
        const double s2 = std::max(sigma2[j], kVarianceFloor);
        acc += mu[j] * mu[j] + s2 - std::log(s2) - 1.0;
    }
    return 0.5 * acc;
}

}  // namespace seqtrans::vae
