#pragma once

#include "sisrnn/rng.hpp"
#include "sisrnn/tensor.hpp"

#include <vector>

namespace sisrnn {

/// Diagonal Gaussian given by per-dimension mean and strictly positive scale.
struct DiagGaussian {
    Tensor mean;
    Tensor scale;
};

/// log N(x; mu, diag(scale^2)), summed over dimensions.
double gaussian_log_density(const Tensor& x, const DiagGaussian& d);

/// Analytic KL(q || p) between diagonal Gaussians. Nonnegative, zero iff q == p.
double gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);

/// z = mean + scale * eps.
Tensor reparam_sample(const DiagGaussian& d, const Tensor& eps);

/// Sum of x_i log p_i + (1 - x_i) log(1 - p_i), with p clamped to
/// [1e-7, 1 - 1e-7] before the logs. x must be exactly 0/1 valued.
double bernoulli_log_likelihood(const Tensor& x, const Tensor& probs);

struct NoiseSpec {
    enum class Kind { kBernoulli, kGaussian };
    Kind kind = Kind::kBernoulli;
    double p = 0.5;  // Bernoulli success probability
    std::vector<Index> dims;

    Index layers() const { return static_cast<Index>(dims.size()); }
    Index total_dims() const;
    void validate() const;
};

/// One noise tensor per layer (rank 1 of dims[l] entries). Advances rng.
std::vector<Tensor> sample_noise(const NoiseSpec& spec, RngState& rng);

/// Batched variant: one rows x dims[l] tensor per layer, filled row-major.
std::vector<Tensor> sample_noise_rows(const NoiseSpec& spec, Index rows, RngState& rng);

}  // namespace sisrnn
