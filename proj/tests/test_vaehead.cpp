#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "seqtrans/rng.hpp"
#include "seqtrans/vae.hpp"
#include "support/finite_diff.hpp"

using namespace seqtrans;
using nn::Array;
using nn::Tape;
using nn::Tensor;

namespace {

// Monte-Carlo estimate of E_q[ln q - ln p] for q = N(mu, sigma2), p = N(0, 1)
double kl_monte_carlo(double mu, double sigma2, std::size_t samples, std::uint64_t seed) {
    Rng rng(seed);
    const double sigma = std::sqrt(sigma2);
    double acc = 0.0;
    for (std::size_t i = 0; i < samples; ++i) {
        const double z = mu + sigma * rng.normal();
        const double lq = -0.5 * std::log(6.283185307179586 * sigma2) -
                          (z - mu) * (z - mu) / (2.0 * sigma2);
        const double lp = -0.5 * std::log(6.283185307179586) - z * z / 2.0;
        acc += lq - lp;
    }
    return acc / static_cast<double>(samples);
}

}  // namespace

TEST_CASE("split_posterior halves and clamps") {
    Tape tape;
    auto zero = vae::split_posterior(tape, tape.constant(Array({4})));
    for (double v : zero.mu.values()) CHECK(v == 0.0);
    for (double v : zero.sigma2.values()) CHECK(v == 1.0);

    auto hand = vae::split_posterior(
        tape, tape.constant({std::log(4.0), std::log(4.0), 3.0, 5.0}, {4}));
    CHECK(hand.mu.values()[0] == 3.0);
    CHECK(hand.mu.values()[1] == 5.0);
    CHECK(std::abs(hand.sigma2.values()[0] - 4.0) < 1e-12);
    CHECK(std::abs(hand.sigma2.values()[1] - 4.0) < 1e-12);

    // deep-negative log-variance hits the floor instead of underflowing
    auto floored = vae::split_posterior(tape, tape.constant({-1000.0, 0.0, 0.0, 0.0}, {4}));
    CHECK(floored.sigma2.values()[0] == vae::kVarianceFloor);

    CHECK_THROWS_AS((void)vae::split_posterior(tape, tape.constant(Array({3}))),
                    std::invalid_argument);
}

TEST_CASE("split_posterior gradient of sum(sigma2) matches finite differences") {
    Array h({6}, {0.3, -0.8, 1.1, 0.2, -0.4, 0.9});
    auto loss = [&] {
        Tape t(false);
        return t.sum(vae::split_posterior(t, t.constant(h)).sigma2).item();
    };
    std::vector<std::vector<double>> analytic;
    {
        Tape t;
        Tensor th = t.leaf(h);
        t.backward(t.sum(vae::split_posterior(t, th).sigma2));
        analytic = {{th.grad().begin(), th.grad().end()}};
    }
    std::vector<Array*> params = {&h};
    CHECK(testsupport::fd_max_rel_err(params, loss, analytic) < 1e-4);
}

TEST_CASE("reparameterize mean path and unit noise") {
    Tape tape;
    auto p = vae::split_posterior(tape, tape.constant({0.0, 0.0, 1.5, -2.0}, {4}));
    auto mean_path = vae::reparameterize(tape, p, tape.constant(Array({2})));
    CHECK(mean_path.z.values()[0] == 1.5);
    CHECK(mean_path.z.values()[1] == -2.0);

    // mu = 0, sigma2 = 1: z reproduces eps
    auto q = vae::split_posterior(tape, tape.constant(Array({4})));
    auto s = vae::reparameterize(tape, q, tape.constant({0.7, -0.3}, {2}));
    CHECK(s.z.values()[0] == 0.7);
    CHECK(s.z.values()[1] == -0.3);

    CHECK_THROWS_AS((void)vae::reparameterize(tape, q, tape.constant(Array({3}))),
                    std::invalid_argument);
}

TEST_CASE("reparameterize sampling statistics") {
    // one batched draw: rows of h are [ln 4, 1], so mu = 1 and sigma2 = 4
    const std::size_t n = 1000000;
    Array h({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        h.at(i, 0) = std::log(4.0);
        h.at(i, 1) = 1.0;
    }
    Array eps({n, 1});
    Rng rng(4242);
    for (double& e : eps.data) e = rng.normal();

    Tape tape(false);
    auto p = vae::split_posterior(tape, tape.constant(h));
    auto sample = vae::reparameterize(tape, p, tape.constant(eps));
    double sum = 0.0, sq = 0.0;
    for (double z : sample.z.values()) {
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - 1.0) < 0.02 * 4.0);
    CHECK(std::abs(var - 4.0) < 0.02 * 4.0);
}

TEST_CASE("reparameterize differentiates through mu and sigma but not eps") {
    Array h({4}, {0.2, -0.6, 0.9, 1.4});
    Array eps({2}, {0.37, -1.21});
    auto loss = [&] {
        Tape t(false);
        auto p = vae::split_posterior(t, t.constant(h));
        return t.sum(vae::reparameterize(t, p, t.constant(eps)).z).item();
    };
    std::vector<std::vector<double>> analytic;
    {
        Tape t;
        Tensor th = t.leaf(h);
        auto p = vae::split_posterior(t, th);
        Tensor teps = t.constant(eps);
        t.backward(t.sum(vae::reparameterize(t, p, teps).z));
        analytic = {{th.grad().begin(), th.grad().end()}};
        CHECK(teps.grad().empty());  // constants hold no grad
    }
    std::vector<Array*> params = {&h};
    CHECK(testsupport::fd_max_rel_err(params, loss, analytic) < 1e-4);
}

TEST_CASE("kl divergence closed form") {
    Tape tape;
    auto standard = vae::split_posterior(tape, tape.constant(Array({4})));
    CHECK(vae::kl_standard_normal(tape, standard).values()[0] == 0.0);

    // mu = 1, sigma2 = 1 -> 0.5
    auto shifted = vae::split_posterior(tape, tape.constant({0.0, 1.0}, {2}));
    CHECK(std::abs(vae::kl_standard_normal(tape, shifted).values()[0] - 0.5) < 1e-12);

    std::vector<double> mu = {1.0}, s2 = {1.0};
    CHECK(std::abs(vae::kl_standard_normal(mu, s2) - 0.5) < 1e-12);
}

TEST_CASE("kl divergence nonnegative and matches Monte-Carlo") {
    Rng rng(777);
    for (int trial = 0; trial < 3; ++trial) {
        const double mu = rng.uniform(-2.0, 2.0);
        const double log_s2 = rng.uniform(-1.5, 1.5);
        const double s2 = std::exp(log_s2);
        std::vector<double> vmu = {mu}, vs2 = {s2};
        const double closed = vae::kl_standard_normal(vmu, vs2);
        CHECK(closed >= 0.0);
        const double mc = kl_monte_carlo(mu, s2, 1000000, mix_seed(777, trial));
        CHECK(std::abs(closed - mc) <= 0.01 * std::max(closed, 0.05));
    }
    // nonnegativity across a wider sweep
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> vmu = {rng.uniform(-5.0, 5.0)};
        std::vector<double> vs2 = {std::exp(rng.uniform(-6.0, 4.0))};
        CHECK(vae::kl_standard_normal(vmu, vs2) >= 0.0);
    }
}
