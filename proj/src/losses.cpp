#include "wmf/losses.hpp"

#include <cmath>

#include "wmf/ops.hpp"
#include "wmf/rng.hpp"

namespace wmf {

void LossWeights::validate() const {
  for (double w : depth) require(w >= 0 && std::isfinite(w), ErrorKind::Config, "depth weights must be >= 0");
  require(mask >= 0 && std::isfinite(mask), ErrorKind::Config, "mask weight must be >= 0");
  require(perceptual >= 0 && std::isfinite(perceptual), ErrorKind::Config, "perceptual weight must be >= 0");
}

namespace {
constexpr std::int64_t kStageWidth = 8;
}

FeatureExtractor::FeatureExtractor(std::uint64_t seed, int stages, DType dtype) {
  require(stages >= 1 && stages <= 3, ErrorKind::Config, "feature extractor supports 1..3 stages");
  Rng rng(seed);
  std::int64_t cin = 3;
  for (int k = 0; k < stages; ++k) {
    const double bound = std::sqrt(3.0 / static_cast<double>(cin * 9));
    weights_.push_back(random_uniform({kStageWidth, cin, 3, 3}, rng, -bound, bound, dtype));
    cin = kStageWidth * 4;
  }
}

std::vector<Tensor> FeatureExtractor::features(const Tensor& image) const {
  std::vector<Tensor> out;
  Tensor x = image;
  for (const Tensor& w : weights_) {
    x = ops::space_to_depth(ops::gelu(ops::conv3x3(x, w)), 2);
    out.push_back(x);
  }
  return out;
}

Tensor mask_bce(const Tensor& logits, const Tensor& mask) { return ops::bce_with_logits_mean(logits, mask); }

Tensor image_l1(const Tensor& prediction, const Tensor& target) { return ops::l1_mean(prediction, target); }

Tensor perceptual(const Tensor& prediction, const Tensor& target, const FeatureExtractor& fx) {
  const auto fa = fx.features(prediction);
  const auto fb = fx.features(target);
  Tensor total = ops::l1_mean(fa[0], fb[0]);
  for (std::size_t k = 1; k < fa.size(); ++k) total = ops::add(total, ops::l1_mean(fa[k], fb[k]));
  return total;
}

LossResult total_loss(const ForwardOutputs& outputs, const Tensor& background, const Tensor& mask,
                      const LossWeights& weights, const FeatureExtractor& fx) {
  weights.validate();
  require(!outputs.depths.empty(), ErrorKind::Input, "total_loss: no outputs");
  if (outputs.deep_supervised)
    for (int d = 1; d <= kDepths; ++d)
      require(outputs.find(d) != nullptr, ErrorKind::Input,
              "total_loss: deep supervision is on but depth " + std::to_string(d) + " is missing");

  LossResult result;
  for (const DepthOutput& out : outputs.depths) {
    Tensor li = image_l1(out.image, background);
    Tensor lm = mask_bce(out.mask_logits, mask);
    Tensor lp = perceptual(out.image, background, fx);
    Tensor term = ops::add(ops::add(li, ops::scale(lm, weights.mask)), ops::scale(lp, weights.perceptual));
    term = ops::scale(term, weights.depth[static_cast<std::size_t>(out.depth - 1)]);
    result.total = result.total.defined() ? ops::add(result.total, term) : term;
    result.terms.push_back({out.depth, li.item(), lm.item(), lp.item()});
  }
  return result;
}

}  // namespace wmf
