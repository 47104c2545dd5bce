#include <cmath>

#include "doctest.h"
#include "wmf/losses.hpp"
#include "wmf/network.hpp"
#include "wmf/ops.hpp"

using namespace wmf;

namespace {

Tensor random_mask(Shape s, Rng& rng, double p = 0.3) {
  Tensor m = Tensor::zeros(std::move(s));
  for (std::size_t i = 0; i < static_cast<std::size_t>(m.numel()); ++i) m.set(i, rng.uniform() < p ? 1.0 : 0.0);
  return m;
}

DepthOutput depth_output(int d, const Tensor& image, const Tensor& logits) {
  return {d, image, logits, ops::sigmoid(logits)};
}

ForwardOutputs random_outputs(Rng& rng, std::int64_t s) {
  ForwardOutputs out;
  out.deep_supervised = true;
  for (int d = 1; d <= 3; ++d)
    out.depths.push_back(depth_output(d, random_uniform({1, 3, s, s}, rng, 0, 1), random_uniform({1, 1, s, s}, rng, -3, 3)));
  return out;
}

}  // namespace

TEST_CASE("mask cross-entropy examples") {
  DTypeScope f64(DType::F64);
  Rng rng(1);
  const Tensor M = random_mask({1, 1, 8, 8}, rng);
  Tensor sure = Tensor::zeros(M.shape());
  for (std::size_t i = 0; i < 64; ++i) sure.set(i, M.at(i) == 1.0 ? 40.0 : -40.0);
  CHECK(mask_bce(sure, M).item() <= 1e-10);
  CHECK(std::abs(mask_bce(Tensor::zeros(M.shape()), M).item() - std::log(2.0)) <= 1e-12);

  const Tensor z = random_uniform(M.shape(), rng, -5, 5);
  double naive = 0;
  for (std::size_t i = 0; i < 64; ++i) {
    const double p = std::clamp(1.0 / (1.0 + std::exp(-z.at(i))), 1e-12, 1.0 - 1e-12);
    naive -= M.at(i) * std::log(p) + (1 - M.at(i)) * std::log(1 - p);
  }
  CHECK(std::abs(mask_bce(z, M).item() - naive / 64) <= 1e-6);
}

TEST_CASE("mask cross-entropy is stable in 32-bit at saturation") {
  Tensor z = Tensor::from({4}, {-200.0, 200.0, -90.0, 90.0});
  Tensor m = Tensor::from({4}, {0.0, 1.0, 1.0, 0.0});
  const double v = mask_bce(z, m).item();
  CHECK(std::isfinite(v));
  CHECK(std::abs(v - 45.0) <= 1e-3);
}

TEST_CASE("mask values outside 0 and 1 are rejected") {
  try {
    mask_bce(Tensor::zeros({2}), Tensor::from({2}, {0.0, 0.5}));
    FAIL("expected an input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Input);
  }
}

TEST_CASE("image L1 examples") {
  DTypeScope f64(DType::F64);
  Rng rng(2);
  const Tensor a = random_uniform({2, 3, 4, 4}, rng, 0, 1);
  CHECK(image_l1(a, a).item() == 0.0);
  CHECK(std::abs(image_l1(ops::add(a, Tensor::full(a.shape(), 0.1)), a).item() - 0.1) <= 1e-12);
  const Tensor b = random_uniform(a.shape(), rng, 0, 1);
  double want = 0;
  for (std::size_t i = 0; i < static_cast<std::size_t>(a.numel()); ++i) want += std::abs(a.at(i) - b.at(i));
  CHECK(std::abs(image_l1(a, b).item() - want / static_cast<double>(a.numel())) <= 1e-7);
  CHECK_THROWS_AS(image_l1(a, Tensor::zeros({2, 3, 4, 5}, DType::F64)), Error);
}

TEST_CASE("feature extractor structure") {
  Rng rng(3);
  const FeatureExtractor fx;
  CHECK(fx.stages() == 3);
  const auto feats = fx.features(random_uniform({1, 3, 16, 16}, rng, 0, 1));
  REQUIRE(feats.size() == 3);
  for (int k = 0; k < 3; ++k) {
    CHECK(feats[static_cast<std::size_t>(k)].dim(2) == (16 >> (k + 1)));
    CHECK(feats[static_cast<std::size_t>(k)].dim(3) == (16 >> (k + 1)));
  }
  for (const Tensor& w : fx.weights()) CHECK_FALSE(w.requires_grad());
  CHECK_THROWS_AS(FeatureExtractor(1, 4), Error);
}

TEST_CASE("perceptual loss examples") {
  DTypeScope f64(DType::F64);
  Rng rng(4);
  const FeatureExtractor fx;
  const Tensor a = random_uniform({1, 3, 16, 16}, rng, 0, 1), b = random_uniform({1, 3, 16, 16}, rng, 0, 1);
  CHECK(perceptual(a, a, fx).item() == 0.0);
  CHECK(perceptual(a, b, fx).item() > 0.0);
  CHECK(perceptual(a, b, fx).item() == perceptual(b, a, fx).item());
  const FeatureExtractor again;
  CHECK(perceptual(a, b, again).item() == perceptual(a, b, fx).item());
  const FeatureExtractor other(123);
  CHECK(perceptual(a, b, other).item() != perceptual(a, b, fx).item());
}

TEST_CASE("total loss equals the hand-summed terms") {
  DTypeScope f64(DType::F64);
  Rng rng(5);
  const FeatureExtractor fx;
  const ForwardOutputs out = random_outputs(rng, 8);
  const Tensor I = random_uniform({1, 3, 8, 8}, rng, 0, 1), M = random_mask({1, 1, 8, 8}, rng);
  LossWeights w;
  w.depth = {0.5, 0.75, 1.0};
  w.mask = 1.5;
  w.perceptual = 0.25;
  const LossResult r = total_loss(out, I, M, w, fx);
  double want = 0;
  for (int d = 0; d < 3; ++d) {
    const DepthOutput& o = out.depths[static_cast<std::size_t>(d)];
    const double li = image_l1(o.image, I).item(), lm = mask_bce(o.mask_logits, M).item(),
                 lp = perceptual(o.image, I, fx).item();
    want += w.depth[static_cast<std::size_t>(d)] * (li + w.mask * lm + w.perceptual * lp);
    CHECK(r.terms[static_cast<std::size_t>(d)].image == li);
    CHECK(r.terms[static_cast<std::size_t>(d)].mask == lm);
    CHECK(r.terms[static_cast<std::size_t>(d)].perceptual == lp);
  }
  CHECK(std::abs(r.total.item() - want) <= 1e-6);
  CHECK(r.total.item() >= 0.0);
}

TEST_CASE("perfect predictions give zero loss") {
  DTypeScope f64(DType::F64);
  Rng rng(6);
  const Tensor I = random_uniform({1, 3, 8, 8}, rng, 0, 1), M = random_mask({1, 1, 8, 8}, rng);
  Tensor logits = Tensor::zeros(M.shape());
  for (std::size_t i = 0; i < 64; ++i) logits.set(i, M.at(i) == 1.0 ? 40.0 : -40.0);
  ForwardOutputs out;
  out.deep_supervised = true;
  for (int d = 1; d <= 3; ++d) out.depths.push_back(depth_output(d, I.clone(), logits));
  CHECK(total_loss(out, I, M, {}, FeatureExtractor()).total.item() <= 1e-10);
}

TEST_CASE("zero weights on shallow depths reduce to the final-depth loss") {
  DTypeScope f64(DType::F64);
  Rng rng(7);
  const FeatureExtractor fx;
  const ForwardOutputs out = random_outputs(rng, 8);
  const Tensor I = random_uniform({1, 3, 8, 8}, rng, 0, 1), M = random_mask({1, 1, 8, 8}, rng);
  LossWeights w;
  w.depth = {0, 0, 1};
  ForwardOutputs final_only;
  final_only.depths.push_back(out.depths[2]);
  CHECK(total_loss(out, I, M, w, fx).total.item() == total_loss(final_only, I, M, {}, fx).total.item());
}

TEST_CASE("missing depth under deep supervision is an error") {
  Rng rng(8);
  ForwardOutputs out = random_outputs(rng, 8);
  out.depths.erase(out.depths.begin());
  const Tensor I = random_uniform({1, 3, 8, 8}, rng, 0, 1), M = random_mask({1, 1, 8, 8}, rng);
  try {
    total_loss(out, I, M, {}, FeatureExtractor());
    FAIL("expected an input error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Input);
  }
  LossWeights bad;
  bad.mask = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("scaling depth weights scales loss and gradients") {
  DTypeScope f64(DType::F64);
  Rng rng(9);
  NetworkConfig cfg;
  cfg.base_channels = 4;
  const FeatureExtractor fx;
  const Tensor J = random_uniform({1, 3, 16, 16}, rng, 0, 1), I = random_uniform({1, 3, 16, 16}, rng, 0, 1);
  const Tensor M = random_mask({1, 1, 16, 16}, rng);
  auto run = [&](double c) {
    ModelParams m = init_model(cfg, 3);
    for (auto& [name, t] : m.named_parameters()) t.set_requires_grad(true);
    LossWeights w;
    w.depth = {c * 1.0, c * 0.5, c * 2.0};
    Tape tape;
    TapeScope scope(tape);
    const LossResult r = total_loss(forward(J, m, Mode::Train), I, M, w, fx);
    tape.backward(r.total);
    std::vector<double> g{r.total.item()};
    for (auto& [name, t] : m.named_parameters()) {
      const Tensor gr = t.grad();
      for (std::size_t i = 0; i < static_cast<std::size_t>(gr.numel()); ++i) g.push_back(gr.at(i));
    }
    return g;
  };
  const auto base = run(1.0);
  for (double c : {2.0, 0.25}) {
    const auto scaled = run(c);
    bool exact = true;
    for (std::size_t i = 0; i < base.size(); ++i) exact = exact && scaled[i] == c * base[i];
    CHECK(exact);
  }
  const auto three = run(3.0);
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    diff += (three[i] - 3 * base[i]) * (three[i] - 3 * base[i]);
    norm += 9 * base[i] * base[i];
  }
  CHECK(std::sqrt(diff / norm) <= 1e-12);
}
