#pragma once

#include <vector>

#include "betaprune/betavae.hpp"
#include "betaprune/nn.hpp"
#include "betaprune/tensor.hpp"

namespace betaprune {

struct ClassifierOutput {
  Tensor logits;              // N × 10
  Tensor log_probs;           // N × 10, rows normalized
  std::vector<int> predicted; // argmax per row, ties to the lowest index
};

// Two-layer head over the latent input (z during training, mu at inference).
ClassifierOutput classify(const ArchSpec& arch, ModelParams& params, const Tensor& latent_input);

// Mean over the batch of −log_probs[i, labels[i]].
Tensor cross_entropy(const std::vector<int>& labels, const Tensor& log_probs);

struct CombinedLoss {
  Tensor total;  // beta·kl + recon + ce
  LossBreakdown breakdown;
};
CombinedLoss combined_loss(const Tensor& x, const LatentSample& latent, const Tensor& x_hat,
                           const std::vector<int>& labels, const Tensor& log_probs, double beta);

// Model kind + architecture + parameters in one handle.
struct Model {
  ModelKind kind;
  ArchSpec arch;
  double beta;
  ModelParams params;
};

// cnn_classif: encoder trunk + mu head + classifier, trained with CE alone.
// beta_vae_classif: full encoder/decoder/classifier topology.
Model build_model(ModelKind kind, DatasetKind dataset, double beta, uint64_t seed);

}  // namespace betaprune
