#pragma once

// Four-level Transformer encoder, nested (UNet++) decoder with dense same-level
// skips, and one prediction head shared by every supervision depth.
//
// Grid notation: X(i, j) is the node at level i (resolution H/2^i) and column
// j. X(i, 0) is encoder latent L_i; X(i, j>0) fuses X(i, 0..j-1) with the
// upsampled X(i+1, j-1). The refined outputs are F_d = X(0, d), d = 1..3.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wmf/blocks.hpp"
#include "wmf/tensor.hpp"

namespace wmf {

inline constexpr int kLevels = 4;
inline constexpr int kDepths = 3;

struct NetworkConfig {
  std::int64_t base_channels = 16;
  std::array<int, kLevels> blocks_per_level{1, 1, 1, 1};
  std::array<int, kLevels> heads_per_level{1, 2, 4, 8};
  std::int64_t ffn_expansion = 2;
  bool gdfn_enabled = true;
  bool gdfn_dconv = false;
  bool nested_enabled = true;
  bool deep_supervision_enabled = true;

  std::int64_t channels(int level) const { return base_channels << level; }
  BlockConfig block_config(int level) const;
  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

using GridPos = std::pair<int, int>;

struct DecoderNode {
  Tensor up;  // (2*c_{i+1}, c_{i+1}) 1x1 conv before depth_to_space
  Tensor fuse;  // (c_i, arity * c_i)
  int arity = 0;  // number of fused inputs
  std::vector<BlockParams> blocks;
};

struct ModelParams {
  NetworkConfig config;
  Tensor embed_weight, embed_bias;  // (C, 4, 3, 3), (C)
  std::array<std::vector<BlockParams>, kLevels> encoder;
  std::array<Tensor, kLevels - 1> down;  // (2c, 4c) after space_to_depth
  std::map<GridPos, DecoderNode> nodes;
  Tensor head_weight, head_bias;  // (4, C, 3, 3), (4)

  // Stable ordered (name, tensor) view; tensors share storage with the model.
  std::vector<std::pair<std::string, Tensor>> named_parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// Decoder nodes the configuration evaluates, in evaluation order.
std::vector<GridPos> decoder_schedule(const NetworkConfig& config);

ModelParams init_model(const NetworkConfig& config, std::uint64_t seed);

enum class Mode { Train, Infer };

struct DepthOutput {
  int depth = 0;
  Tensor image;        // (b, 3, H, W); clamped to [0,1] in Infer mode
  Tensor mask_logits;  // (b, 1, H, W)
  Tensor mask;         // sigmoid(mask_logits)
};

struct ForwardTrace {
  std::vector<GridPos> decoder_nodes;
  int head_evaluations = 0;
};

struct ForwardOutputs {
  std::vector<DepthOutput> depths;
  bool deep_supervised = false;
  ForwardTrace trace;

  const DepthOutput* find(int depth) const;
  const DepthOutput& final_output() const;
};

// Appends an all-zero plane to J (b, 3, H, W) and applies the 3x3 embedding.
Tensor embed(const Tensor& image, const ModelParams& params);

std::array<Tensor, kLevels> encode(const Tensor& features, const ModelParams& params);

struct DecoderOutputs {
  std::array<Tensor, kDepths> refined;  // F_1..F_3; undefined when not computed
  ForwardTrace trace;
};

DecoderOutputs decode_nested(const std::array<Tensor, kLevels>& latents, const ModelParams& params);

DepthOutput predict(const Tensor& feature, const ModelParams& params, Mode mode, int depth);

ForwardOutputs forward(const Tensor& image, const ModelParams& params, Mode mode);

}  // namespace wmf
