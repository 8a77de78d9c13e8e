#pragma once

#include <vector>

#include "betaprune/nn.hpp"
#include "betaprune/tensor.hpp"

namespace betaprune {

// q_φ(z|x) parameters and the reparameterized draw; z = mu + exp(½·logvar)∘eps
// by construction.
struct LatentSample {
  Tensor mu, logvar, eps, z;
};

struct LossBreakdown {
  double kl = 0.0;
  double recon = 0.0;
  double ce = 0.0;
  double beta = 0.0;
  double total = 0.0;
  std::vector<double> per_dim_kl;
};

// Encoder trunk through the hidden layer (shared by both model kinds).
Tensor encoder_features(const ArchSpec& arch, ModelParams& params, const Tensor& x);
Tensor mu_head(ModelParams& params, const Tensor& features);

// (mu, logvar); requires vae_parts.
std::pair<Tensor, Tensor> encode(const ArchSpec& arch, ModelParams& params, const Tensor& x);

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps);
LatentSample sample_latent(const Tensor& mu, const Tensor& logvar, const Tensor& eps);

struct KlResult {
  Tensor kl;                      // scalar: sum over dims, mean over batch
  std::vector<double> per_dim;    // length L, each ≥ 0, summing to kl
};
// −½(1 + logvar − mu² − exp(logvar)) per element against a standard normal prior.
KlResult kl_divergence(const Tensor& mu, const Tensor& logvar);

// z → x_hat in (0,1) via final sigmoid.
Tensor decode(const ArchSpec& arch, ModelParams& params, const Tensor& z);

// Bernoulli NLL, summed per image and averaged over the batch.
// x must lie in [0,1]; logs are clamped at 1e-7 for f32-saturated x_hat.
Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat);

struct VaeLossParts {
  Tensor kl, recon;
  std::vector<double> per_dim_kl;
};
// Eq: contribution to the minimized total is beta·kl + recon.
VaeLossParts beta_vae_loss(const Tensor& x, const LatentSample& latent, const Tensor& x_hat,
                           double beta);

}  // namespace betaprune
