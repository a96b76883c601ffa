#pragma once

#include "seqtrans/tensor.hpp"

namespace seqtrans::vae {

// floor on sigma^2: exp of a very negative hidden half would otherwise
// underflow and blow up the log term
inline constexpr double kVarianceFloor = 1e-8;

// mu/sigma2 halves of a hidden state, as tape tensors ([B x d/2] or [d/2])
struct GaussianPosterior {
    nn::Tensor mu;
    nn::Tensor sigma2;
};

struct LatentSample {
    nn::Tensor z;
    nn::Tensor eps;
};

// mu = h[d/2:], sigma2 = exp(h[:d/2]) clamped to the floor; d must be even
GaussianPosterior split_posterior(nn::Tape& tape, nn::Tensor h);

// z = mu + sqrt(sigma2) * eps; gradient flows to mu/sigma2, eps is a constant
LatentSample reparameterize(nn::Tape& tape, const GaussianPosterior& p, nn::Tensor eps);

// D_KL(N(mu, diag sigma2) || N(0, I)) per row, always >= 0;
// 0.5 * sum_j (mu_j^2 + sigma2_j - ln sigma2_j - 1)
nn::Tensor kl_standard_normal(nn::Tape& tape, const GaussianPosterior& p);

// closed form on plain values, for callers without a tape
double kl_standard_normal(std::span<const double> mu, std::span<const double> sigma2);

}  // namespace seqtrans::vae
