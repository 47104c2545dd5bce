#pragma once

// Deep-supervised training objective: mask BCE, image L1, and a multi-scale
// feature L1 ("perceptual") term, weighted per supervision depth.

#include <array>
#include <cstdint>
#include <vector>

#include "wmf/network.hpp"
#include "wmf/tensor.hpp"

namespace wmf {

struct LossWeights {
  std::array<double, kDepths> depth{1.0, 1.0, 1.0};
  double mask = 1.0;
  double perceptual = 0.25;

  void validate() const;
};

// Frozen stand-in for pretrained VGG activations: k stages of
// 3x3 conv -> GELU -> 2x space_to_depth with seeded random weights.
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eedfea7;

  explicit FeatureExtractor(std::uint64_t seed = kDefaultSeed, int stages = 3,
                            DType dtype = default_dtype());

  // Activations after each stage; stage k has extent input / 2^k.
  std::vector<Tensor> features(const Tensor& image) const;

  int stages() const { return static_cast<int>(weights_.size()); }
  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  std::vector<Tensor> weights_;
};

// Mean BCE of sigmoid(logits) against a binary mask.
Tensor mask_bce(const Tensor& logits, const Tensor& mask);
Tensor image_l1(const Tensor& prediction, const Tensor& target);
// Sum over stages of mean |phi_k(a) - phi_k(b)|.
Tensor perceptual(const Tensor& prediction, const Tensor& target, const FeatureExtractor& fx);

struct DepthTerms {
  int depth = 0;
  double image = 0.0;
  double mask = 0.0;
  double perceptual = 0.0;
};

struct LossResult {
  Tensor total;
  std::vector<DepthTerms> terms;
};

// sum_d lambda_d * (L_image + lambda_mask * L_mask + lambda_perc * L_perc)
LossResult total_loss(const ForwardOutputs& outputs, const Tensor& background, const Tensor& mask,
                      const LossWeights& weights, const FeatureExtractor& fx);

}  // namespace wmf
