#include "wmf/network.hpp"

#include <cmath>

#include "wmf/ops.hpp"
#include "wmf/rng.hpp"

namespace wmf {

BlockConfig NetworkConfig::block_config(int level) const {
  BlockConfig b;
  b.channels = channels(level);
  b.heads = heads_per_level[static_cast<std::size_t>(level)];
  b.ffn_expansion = ffn_expansion;
  b.gdfn_enabled = gdfn_enabled;
  b.gdfn_dconv = gdfn_dconv;
  return b;
}

void NetworkConfig::validate() const {
  require(base_channels > 0, ErrorKind::Config, "base_channels must be positive");
  for (int i = 0; i < kLevels; ++i) {
    const auto h = heads_per_level[static_cast<std::size_t>(i)];
    require(h > 0 && channels(i) % h == 0, ErrorKind::Config,
            "heads_per_level[" + std::to_string(i) + "]=" + std::to_string(h) +
                " does not divide channels " + std::to_string(channels(i)));
    require(blocks_per_level[static_cast<std::size_t>(i)] >= 0, ErrorKind::Config,
            "blocks_per_level must be non-negative");
  }
  require(ffn_expansion > 0, ErrorKind::Config, "ffn_expansion must be positive");
}

std::vector<GridPos> decoder_schedule(const NetworkConfig& config) {
  std::vector<GridPos> order;
  if (config.nested_enabled) {
    for (int j = 1; j < kLevels; ++j)
      for (int i = 0; i + j < kLevels; ++i) order.emplace_back(i, j);
  } else {
    for (int j = 1; j < kLevels; ++j) order.emplace_back(kLevels - 1 - j, j);
  }
  return order;
}

namespace {

Tensor fan_in_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return random_uniform(std::move(shape), rng, -bound, bound);
}

std::string node_prefix(const GridPos& pos) {
  return "dec" + std::to_string(pos.first) + std::to_string(pos.second) + ".";
}

void check_latent(const Tensor& t, int level, const ModelParams& params, std::int64_t batch,
                  std::int64_t height, std::int64_t width) {
  const Shape want{batch, params.config.channels(level), height >> level, width >> level};
  require(t.shape() == want, ErrorKind::Shape,
          "latent L" + std::to_string(level) + " has shape " + to_string(t.shape()) + ", expected " +
              to_string(want));
}

}  // namespace

ModelParams init_model(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams m;
  m.config = config;
  const std::int64_t C = config.base_channels;
  m.embed_weight = fan_in_uniform({C, 4, 3, 3}, 4 * 9, rng);
  m.embed_bias = Tensor::zeros({C});
  for (int i = 0; i < kLevels; ++i)
    for (int k = 0; k < config.blocks_per_level[static_cast<std::size_t>(i)]; ++k)
      m.encoder[static_cast<std::size_t>(i)].push_back(make_block(config.block_config(i), rng));
  for (int i = 0; i + 1 < kLevels; ++i) {
    const std::int64_t c = config.channels(i);
    m.down[static_cast<std::size_t>(i)] = fan_in_uniform({2 * c, 4 * c}, 4 * c, rng);
  }
  for (const GridPos& pos : decoder_schedule(config)) {
    const auto [i, j] = pos;
    const std::int64_t c = config.channels(i), below = config.channels(i + 1);
    DecoderNode node;
    node.arity = config.nested_enabled ? j + 1 : 2;
    node.up = fan_in_uniform({2 * below, below}, below, rng);
    node.fuse = fan_in_uniform({c, node.arity * c}, node.arity * c, rng);
    for (int k = 0; k < config.blocks_per_level[static_cast<std::size_t>(i)]; ++k)
      node.blocks.push_back(make_block(config.block_config(i), rng));
    m.nodes.emplace(pos, std::move(node));
  }
  m.head_weight = fan_in_uniform({4, C, 3, 3}, C * 9, rng);
  m.head_bias = Tensor::zeros({4});
  return m;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto push = [&](const std::string& name, Tensor& t) { out.emplace_back(name, t); };
  auto& self = const_cast<ModelParams&>(*this);
  push("embed.weight", self.embed_weight);
  push("embed.bias", self.embed_bias);
  for (int i = 0; i < kLevels; ++i) {
    auto& blocks = self.encoder[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < blocks.size(); ++k)
      visit_params(blocks[k], "enc" + std::to_string(i) + ".b" + std::to_string(k) + ".", push);
    if (i + 1 < kLevels) push("down" + std::to_string(i) + ".weight", self.down[static_cast<std::size_t>(i)]);
  }
  for (auto& [pos, node] : self.nodes) {
    const std::string prefix = node_prefix(pos);
    push(prefix + "up", node.up);
    push(prefix + "fuse", node.fuse);
    for (std::size_t k = 0; k < node.blocks.size(); ++k)
      visit_params(node.blocks[k], prefix + "b" + std::to_string(k) + ".", push);
  }
  push("head.weight", self.head_weight);
  push("head.bias", self.head_bias);
  return out;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters() {
  return std::as_const(*this).named_parameters();
}

const DepthOutput* ForwardOutputs::find(int depth) const {
  for (const DepthOutput& d : depths)
    if (d.depth == depth) return &d;
  return nullptr;
}

const DepthOutput& ForwardOutputs::final_output() const {
  const DepthOutput* d = find(kDepths);
  require(d != nullptr, ErrorKind::Graph, "forward outputs lack the final depth");
  return *d;
}

Tensor embed(const Tensor& image, const ModelParams& params) {
  require(image.rank() == 4 && image.dim(1) == 3, ErrorKind::Input,
          "embed expects a (b, 3, H, W) image, got " + to_string(image.shape()));
  require(image.dim(2) % 8 == 0 && image.dim(3) % 8 == 0 && image.dim(2) > 0 && image.dim(3) > 0,
          ErrorKind::Input,
          "image extents " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)) +
              " must be positive multiples of 8");
  Tensor black = Tensor::zeros({image.dim(0), 1, image.dim(2), image.dim(3)}, image.dtype());
  const std::vector<Tensor> parts{image, black};
  return ops::conv3x3(ops::concat_channels(parts), params.embed_weight, params.embed_bias);
}

std::array<Tensor, kLevels> encode(const Tensor& features, const ModelParams& params) {
  const std::int64_t B = features.dim(0), H = features.dim(2), W = features.dim(3);
  std::array<Tensor, kLevels> latents;
  Tensor x = features;
  for (int i = 0; i < kLevels; ++i) {
    for (const BlockParams& b : params.encoder[static_cast<std::size_t>(i)]) x = block_forward(x, b);
    check_latent(x, i, params, B, H, W);
    latents[static_cast<std::size_t>(i)] = x;
    if (i + 1 < kLevels) x = ops::conv1x1(ops::space_to_depth(x, 2), params.down[static_cast<std::size_t>(i)]);
  }
  return latents;
}

DecoderOutputs decode_nested(const std::array<Tensor, kLevels>& latents, const ModelParams& params) {
  std::map<GridPos, Tensor> grid;
  for (int i = 0; i < kLevels; ++i) grid[{i, 0}] = latents[static_cast<std::size_t>(i)];

  DecoderOutputs out;
  for (const GridPos& pos : decoder_schedule(params.config)) {
    const auto [i, j] = pos;
    const DecoderNode& node = params.nodes.at(pos);
    std::vector<Tensor> inputs;
    if (params.config.nested_enabled) {
      for (int s = 0; s < j; ++s) inputs.push_back(grid.at({i, s}));
    } else {
      inputs.push_back(grid.at({i, 0}));
    }
    inputs.push_back(ops::depth_to_space(ops::conv1x1(grid.at({i + 1, j - 1}), node.up), 2));
    require(static_cast<int>(inputs.size()) == node.arity, ErrorKind::Graph, "decoder arity mismatch");
    Tensor x = ops::conv1x1(ops::concat_channels(inputs), node.fuse);
    for (const BlockParams& b : node.blocks) x = block_forward(x, b);
    grid[pos] = x;
    out.trace.decoder_nodes.push_back(pos);
  }
  for (int d = 1; d <= kDepths; ++d) {
    auto it = grid.find({0, d});
    if (it != grid.end()) out.refined[static_cast<std::size_t>(d - 1)] = it->second;
  }
  return out;
}

DepthOutput predict(const Tensor& feature, const ModelParams& params, Mode mode, int depth) {
  Tensor raw = ops::conv3x3(feature, params.head_weight, params.head_bias);
  DepthOutput out;
  out.depth = depth;
  out.image = ops::slice_channels(raw, 0, 3);
  if (mode == Mode::Infer) out.image = ops::clamp01(out.image);
  out.mask_logits = ops::slice_channels(raw, 3, 1);
  out.mask = ops::sigmoid(out.mask_logits);
  return out;
}

ForwardOutputs forward(const Tensor& image, const ModelParams& params, Mode mode) {
  const auto latents = encode(embed(image, params), params);
  DecoderOutputs decoded = decode_nested(latents, params);
  ForwardOutputs out;
  out.trace = std::move(decoded.trace);
  out.deep_supervised = mode == Mode::Train && params.config.deep_supervision_enabled &&
                        params.config.nested_enabled;
  for (int d = 1; d <= kDepths; ++d) {
    if (d < kDepths && !out.deep_supervised) continue;
    const Tensor& feature = decoded.refined[static_cast<std::size_t>(d - 1)];
    require(feature.defined(), ErrorKind::Graph, "refined feature F" + std::to_string(d) + " missing");
    out.depths.push_back(predict(feature, params, mode, d));
    ++out.trace.head_evaluations;
  }
  return out;
}

}  // namespace wmf
