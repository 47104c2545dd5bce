#pragma once

// Cross-channel multi-head attention (MDTA), gated feed-forward (GDFN), and
// the pre-norm Transformer block composing them.

#include <cstdint>
#include <functional>
#include <string>

#include "wmf/rng.hpp"
#include "wmf/tensor.hpp"

namespace wmf {

struct BlockConfig {
  std::int64_t channels = 16;
  std::int64_t heads = 1;
  std::int64_t ffn_expansion = 2;
  bool gdfn_enabled = true;
  // Adds a 3x3 depthwise conv after the GDFN expansion.
  bool gdfn_dconv = false;

  void validate() const;
};

// 1x1 conv c->c followed by a 3x3 depthwise conv.
struct ConvProjection {
  Tensor pointwise;  // (c, c)
  Tensor depthwise;  // (c, 3, 3)
};

struct MdtaParams {
  std::int64_t heads = 1;
  ConvProjection query, key, value;
  Tensor project_out;  // (c, c)
  Tensor sigma;        // (heads), learnable temperature
};

struct GdfnParams {
  Tensor expand;     // (2*r*c, c)
  Tensor expand_dw;  // (2*r*c, 3, 3), only with gdfn_dconv
  Tensor reduce;     // (c, r*c)
};

struct BlockParams {
  Tensor norm1_gamma, norm1_beta;
  MdtaParams mdta;
  Tensor norm2_gamma, norm2_beta;
  GdfnParams gdfn;
  bool gdfn_enabled = true;
};

using ParamVisitor = std::function<void(const std::string& name, Tensor& tensor)>;

// Fan-in uniform init (bound 1/sqrt(fan_in)), sigma = 1, norm affine = identity.
BlockParams make_block(const BlockConfig& config, Rng& rng);
void visit_params(BlockParams& block, const std::string& prefix, const ParamVisitor& visit);

struct MdtaResult {
  Tensor output;     // (b, c, h, w)
  Tensor attention;  // (b, heads, head_dim, head_dim); rows sum to 1
  Tensor values;     // value projection before attention, (b, c, h, w)
  Tensor mixed;      // heads concatenated, before the output projection
};

MdtaResult mdta_forward_detailed(const Tensor& x, const MdtaParams& p);
Tensor mdta_forward(const Tensor& x, const MdtaParams& p);

// (gelu(X1) * X2) W2 without the residual.
Tensor gdfn_branch(const Tensor& x, const GdfnParams& p);
// gdfn_branch(x) + x
Tensor gdfn_forward(const Tensor& x, const GdfnParams& p);

// y = x + mdta(norm1(x)); z = y + gdfn_branch(norm2(y)), or z = y with GDFN off.
Tensor block_forward(const Tensor& x, const BlockParams& p);

}  // namespace wmf
