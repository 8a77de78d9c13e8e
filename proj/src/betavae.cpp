#include "betaprune/betavae.hpp"

#include <cmath>

namespace betaprune {

namespace {
// Log-argument clamp for f32-saturated sigmoid outputs.
constexpr double kEps = 1e-7;
}  // namespace

Tensor encoder_features(const ArchSpec& arch, ModelParams& params, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != arch.in_ch || x.dim(2) != arch.img_h || x.dim(3) != arch.img_w) {
    throw Error(ErrorKind::config, "encoder: input " + shape_str(x.shape()) + " does not match " +
                                       to_string(arch.dataset) + " architecture");
  }
  Tensor h = x;
  for (size_t i = 0; i < arch.enc_convs.size(); ++i) {
    const auto& c = arch.enc_convs[i];
    const std::string name = "encoder.conv" + std::to_string(i + 1);
    h = relu(conv2d(h, params.at(name + ".kernel"), params.at(name + ".bias"), c.stride, c.pad));
  }
  h = reshape(h, {x.dim(0), arch.enc_feat});
  h = relu(affine(h, params.at("encoder.fc.weight"), params.at("encoder.fc.bias")));
  return h;
}

Tensor mu_head(ModelParams& params, const Tensor& features) {
  return affine(features, params.at("encoder.mu.weight"), params.at("encoder.mu.bias"));
}

std::pair<Tensor, Tensor> encode(const ArchSpec& arch, ModelParams& params, const Tensor& x) {
  Tensor h = encoder_features(arch, params, x);
  Tensor mu = mu_head(params, h);
  Tensor logvar = affine(h, params.at("encoder.logvar.weight"), params.at("encoder.logvar.bias"));
  return {std::move(mu), std::move(logvar)};
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  if (mu.shape() != logvar.shape() || mu.shape() != eps.shape()) {
    throw Error(ErrorKind::config, "reparameterize: shape mismatch " + shape_str(mu.shape()) +
                                       " / " + shape_str(logvar.shape()) + " / " +
                                       shape_str(eps.shape()));
  }
  return add(mu, mul(exp(scale(logvar, 0.5)), eps));
}

LatentSample sample_latent(const Tensor& mu, const Tensor& logvar, const Tensor& eps) {
  LatentSample s;
  s.mu = mu;
  s.logvar = logvar;
  s.eps = eps;
  s.z = reparameterize(mu, logvar, eps);
  return s;
}

KlResult kl_divergence(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape() || mu.rank() != 2) {
    throw Error(ErrorKind::config, "kl_divergence: want matching N×L tensors, got " +
                                       shape_str(mu.shape()) + " and " + shape_str(logvar.shape()));
  }
  const int n = mu.dim(0), l = mu.dim(1);
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto& mv = mu.data();
  const auto& lv = logvar.data();

  // ½(mu² + e^lv − lv − 1) per element, in f64; non-negative by construction.
  std::vector<double> per_dim(static_cast<size_t>(l), 0.0);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < l; ++j) {
      const size_t k = static_cast<size_t>(i) * l + j;
      const double m = mv[k];
      const double g = lv[k];
      const double e = 0.5 * (m * m + std::exp(g) - g - 1.0);
      per_dim[static_cast<size_t>(j)] += e;
      total += e;
    }
  }
  for (auto& v : per_dim) v *= inv_n;
  total *= inv_n;

  auto mn = mu.node();
  auto ln = logvar.node();
  Tensor kl = Tensor::make_op(
      "kl_divergence", {1}, {static_cast<float>(total)}, {mu, logvar},
      [mn, ln, n, l, inv_n](Tensor::Node& self) {
        const double g0 = static_cast<double>(self.grad[0]) * inv_n;
        if (mn->requires_grad) {
          mn->ensure_grad();
          const float* m = mn->value.data();
          float* dm = mn->grad.data();
          const size_t count = static_cast<size_t>(n) * l;
          for (size_t k = 0; k < count; ++k) {
            dm[k] += static_cast<float>(static_cast<double>(m[k]) * g0);
          }
        }
        if (ln->requires_grad) {
          ln->ensure_grad();
          const float* g = ln->value.data();
          float* dg = ln->grad.data();
          const size_t count = static_cast<size_t>(n) * l;
          for (size_t k = 0; k < count; ++k) {
            dg[k] += static_cast<float>(0.5 * (std::exp(static_cast<double>(g[k])) - 1.0) * g0);
          }
        }
      });
  kl.node()->has_hi = true;
  kl.node()->hi = total;

  KlResult r;
  r.kl = std::move(kl);
  r.per_dim = std::move(per_dim);
  return r;
}

Tensor decode(const ArchSpec& arch, ModelParams& params, const Tensor& z) {
  if (!arch.vae_parts) {
    throw Error(ErrorKind::config, "decode: architecture has no decoder");
  }
  if (z.rank() != 2 || z.dim(1) != arch.latent) {
    throw Error(ErrorKind::config, "decode: z " + shape_str(z.shape()) + " does not match latent " +
                                       std::to_string(arch.latent));
  }
  Tensor h = relu(affine(z, params.at("decoder.fc.weight"), params.at("decoder.fc.bias")));
  h = reshape(h, {z.dim(0), arch.dec_ch, arch.dec_h, arch.dec_w});
  for (size_t i = 0; i < arch.dec_deconvs.size(); ++i) {
    const auto& c = arch.dec_deconvs[i];
    const std::string name = "decoder.deconv" + std::to_string(i + 1);
    h = conv2d_transpose(h, params.at(name + ".kernel"), params.at(name + ".bias"), c.stride,
                         c.pad);
    if (i + 1 < arch.dec_deconvs.size()) h = relu(h);
  }
  return sigmoid(h);
}

Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw Error(ErrorKind::config, "reconstruction_loss: shape mismatch " + shape_str(x.shape()) +
                                       " vs " + shape_str(x_hat.shape()));
  }
  const auto& xv = x.data();
  const auto& pv = x_hat.data();
  const int batch = x.dim(0);
  const double inv_n = 1.0 / static_cast<double>(batch);
  double total = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) {
    const double t = xv[i];
    if (t < 0.0 || t > 1.0) {
      throw Error(ErrorKind::config,
                  "reconstruction_loss: target pixel " + std::to_string(t) + " outside [0,1]");
    }
    const double p = std::min(1.0 - kEps, std::max(kEps, static_cast<double>(pv[i])));
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  total *= inv_n;

  auto xn = x.node();
  auto pn = x_hat.node();
  Tensor loss = Tensor::make_op(
      "bernoulli_nll", {1}, {static_cast<float>(total)}, {x, x_hat},
      [xn, pn, inv_n](Tensor::Node& self) {
        const double g0 = static_cast<double>(self.grad[0]) * inv_n;
        if (pn->requires_grad) {
          pn->ensure_grad();
          const float* t = xn->value.data();
          const float* p = pn->value.data();
          float* dp = pn->grad.data();
          const size_t count = pn->value.size();
          for (size_t i = 0; i < count; ++i) {
            const double pc = std::min(1.0 - kEps, std::max(kEps, static_cast<double>(p[i])));
            dp[i] += static_cast<float>((pc - static_cast<double>(t[i])) / (pc * (1.0 - pc)) * g0);
          }
        }
        // gradients w.r.t. the target x are never needed
      });
  loss.node()->has_hi = true;
  loss.node()->hi = total;
  return loss;
}

VaeLossParts beta_vae_loss(const Tensor& x, const LatentSample& latent, const Tensor& x_hat,
                           double beta) {
  if (beta < 0.0) {
    throw Error(ErrorKind::config, "beta_vae_loss: beta must be non-negative, got " +
                                       std::to_string(beta));
  }
  KlResult kl = kl_divergence(latent.mu, latent.logvar);
  VaeLossParts parts;
  parts.kl = std::move(kl.kl);
  parts.recon = reconstruction_loss(x, x_hat);
  parts.per_dim_kl = std::move(kl.per_dim);
  return parts;
}

}  // namespace betaprune
