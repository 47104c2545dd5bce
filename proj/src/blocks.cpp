#include "wmf/blocks.hpp"

#include <cmath>

#include "wmf/ops.hpp"

namespace wmf {

void BlockConfig::validate() const {
  require(channels > 0, ErrorKind::Config, "block channels must be positive");
  require(heads > 0 && channels % heads == 0, ErrorKind::Config,
          "heads (" + std::to_string(heads) + ") must divide channels (" + std::to_string(channels) + ")");
  require(ffn_expansion > 0, ErrorKind::Config, "ffn expansion must be positive");
}

namespace {

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

ConvProjection make_projection(std::int64_t c, Rng& rng) {
  ConvProjection p;
  p.pointwise = fan_in_uniform({c, c}, c, rng);
  p.depthwise = fan_in_uniform({c, 3, 3}, 9, rng);
  return p;
}

Tensor project(const Tensor& x, const ConvProjection& p) {
  return ops::dconv3x3(ops::conv1x1(x, p.pointwise), p.depthwise);
}

}  // namespace

BlockParams make_block(const BlockConfig& config, Rng& rng) {
  config.validate();
  const std::int64_t c = config.channels, hidden = config.ffn_expansion * c;
  BlockParams b;
  b.gdfn_enabled = config.gdfn_enabled;
  b.norm1_gamma = Tensor::full({c}, 1.0);
  b.norm1_beta = Tensor::zeros({c});
  b.mdta.heads = config.heads;
  b.mdta.query = make_projection(c, rng);
  b.mdta.key = make_projection(c, rng);
  b.mdta.value = make_projection(c, rng);
  b.mdta.project_out = fan_in_uniform({c, c}, c, rng);
  b.mdta.sigma = Tensor::full({config.heads}, 1.0);
  b.norm2_gamma = Tensor::full({c}, 1.0);
  b.norm2_beta = Tensor::zeros({c});
  b.gdfn.expand = fan_in_uniform({2 * hidden, c}, c, rng);
  if (config.gdfn_dconv) b.gdfn.expand_dw = fan_in_uniform({2 * hidden, 3, 3}, 9, rng);
  b.gdfn.reduce = fan_in_uniform({c, hidden}, hidden, rng);
  return b;
}

void visit_params(BlockParams& b, const std::string& prefix, const ParamVisitor& visit) {
  visit(prefix + "norm1.gamma", b.norm1_gamma);
  visit(prefix + "norm1.beta", b.norm1_beta);
  visit(prefix + "mdta.q.pw", b.mdta.query.pointwise);
  visit(prefix + "mdta.q.dw", b.mdta.query.depthwise);
  visit(prefix + "mdta.k.pw", b.mdta.key.pointwise);
  visit(prefix + "mdta.k.dw", b.mdta.key.depthwise);
  visit(prefix + "mdta.v.pw", b.mdta.value.pointwise);
  visit(prefix + "mdta.v.dw", b.mdta.value.depthwise);
  visit(prefix + "mdta.out", b.mdta.project_out);
  visit(prefix + "mdta.sigma", b.mdta.sigma);
  visit(prefix + "norm2.gamma", b.norm2_gamma);
  visit(prefix + "norm2.beta", b.norm2_beta);
  visit(prefix + "gdfn.w1", b.gdfn.expand);
  if (b.gdfn.expand_dw.defined()) visit(prefix + "gdfn.w1.dw", b.gdfn.expand_dw);
  visit(prefix + "gdfn.w2", b.gdfn.reduce);
}

MdtaResult mdta_forward_detailed(const Tensor& x, const MdtaParams& p) {
  require(x.rank() == 4, ErrorKind::Shape, "mdta: input must be (b, c, h, w)");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(p.heads > 0 && C % p.heads == 0, ErrorKind::Config,
          "mdta: heads (" + std::to_string(p.heads) + ") must divide channels (" + std::to_string(C) + ")");
  const std::int64_t d = C / p.heads;

  Tensor q = project(x, p.query);
  Tensor k = project(x, p.key);
  Tensor v = project(x, p.value);

  // (b, c, h, w) -> (b*heads, head_dim, h*w); channels of head i are contiguous.
  const Shape per_head{B * p.heads, d, H * W};
  Tensor qh = ops::l2_normalize(ops::reshape(q, per_head));
  Tensor kh = ops::l2_normalize(ops::reshape(k, per_head));
  Tensor vh = ops::reshape(v, per_head);

  // scores[i][j] = <q_i, k_j> over spatial positions: head_dim x head_dim.
  Tensor scores = ops::bmm(qh, ops::transpose_last2(kh));
  scores = ops::scale_dim1(ops::reshape(scores, {B, p.heads, d, d}), p.sigma);
  Tensor attention = ops::softmax(scores, -1);

  Tensor mixed = ops::bmm(ops::reshape(attention, {B * p.heads, d, d}), vh);
  mixed = ops::reshape(mixed, {B, C, H, W});
  return {ops::conv1x1(mixed, p.project_out), attention, v, mixed};
}

Tensor mdta_forward(const Tensor& x, const MdtaParams& p) { return mdta_forward_detailed(x, p).output; }

Tensor gdfn_branch(const Tensor& x, const GdfnParams& p) {
  Tensor h = ops::conv1x1(x, p.expand);
  if (p.expand_dw.defined()) h = ops::dconv3x3(h, p.expand_dw);
  auto [x1, x2] = ops::split_half_channels(h);
  return ops::conv1x1(ops::mul(ops::gelu(x1), x2), p.reduce);
}

Tensor gdfn_forward(const Tensor& x, const GdfnParams& p) { return ops::add(gdfn_branch(x, p), x); }

Tensor block_forward(const Tensor& x, const BlockParams& p) {
  Tensor y = ops::add(x, mdta_forward(ops::layer_norm(x, p.norm1_gamma, p.norm1_beta), p.mdta));
  if (!p.gdfn_enabled) return y;
  return ops::add(y, gdfn_branch(ops::layer_norm(y, p.norm2_gamma, p.norm2_beta), p.gdfn));
}

}  // namespace wmf
