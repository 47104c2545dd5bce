#pragma once

// Synthetic visible-watermark dataset: RGBA marks alpha-blended onto
// backgrounds with random transparency, size, rotation and position.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wmf/image.hpp"

namespace wmf::synth {

struct WatermarkAsset {
  std::string id;
  Image rgba;  // 4 channels, straight (not premultiplied) alpha
};

struct Background {
  std::string id;
  Image rgb;
};

struct SynthesisParams {
  double alpha_min = 0.3, alpha_max = 0.7;
  double scale_min = 0.3, scale_max = 0.6;  // longest mark side / min(H, W)
  double rotation_min = -45.0, rotation_max = 45.0;
  int size = 64;
  std::uint64_t seed = 0;
  double mask_threshold = 0.05;

  void validate() const;
};

// A mark resampled to its placed size and rotation, premultiplied.
struct Raster {
  Image premultiplied;  // 4 channels: alpha * rgb, alpha
};

Raster rasterize(const WatermarkAsset& asset, double longest_side_px, double rotation_deg);

struct Composite {
  Image watermarked;
  Image mask;   // 1 channel, 0 or 1
  Image alpha;  // effective per-pixel alpha
};

// J = alpha_global * premult_rgb + (1 - a) * I with a = alpha_global * mark alpha;
// mask = a > threshold. The raster's top-left sits at (x, y).
Composite composite(const Image& background, const Raster& mark, int x, int y, double alpha_global,
                    double mask_threshold = 0.05);

struct SampleRecord {
  std::int64_t index = 0;
  std::string asset_id;
  std::string background_id;
  double alpha = 0, scale = 0, rotation_deg = 0;
  int x = 0, y = 0;
  std::uint64_t seed = 0;

  bool operator==(const SampleRecord&) const = default;
};

std::string to_json_line(const SampleRecord& r);
SampleRecord parse_json_line(const std::string& line);
std::vector<SampleRecord> read_manifest(const std::filesystem::path& path);

struct Sample {
  SampleRecord record;
  Image background;   // quantized to 8-bit levels before blending
  Composite result;
};

std::vector<WatermarkAsset> load_assets(const std::filesystem::path& dir);
// Loads, resizes to size x size, and quantizes to 8-bit levels.
std::vector<Background> load_backgrounds(const std::filesystem::path& dir, int size);

// Sample `index` depends only on (params.seed, index) and the input sets.
Sample make_sample(const std::vector<Background>& backgrounds, const std::vector<WatermarkAsset>& assets,
                   const SynthesisParams& params, std::int64_t index);
// Rebuilds the blend of a manifest record.
Composite recompose(const SampleRecord& record, const Image& background, const std::vector<WatermarkAsset>& assets,
                    const SynthesisParams& params);

std::string sample_name(std::int64_t index);  // %06d.png

// Writes out_dir/{watermarked,background,mask}/%06d.png and manifest.jsonl.
// `order` optionally permutes generation order (results do not depend on it).
std::vector<SampleRecord> generate_dataset(const std::filesystem::path& backgrounds_dir,
                                           const std::filesystem::path& assets_dir, const SynthesisParams& params,
                                           std::int64_t n, const std::filesystem::path& out_dir,
                                           const std::vector<std::int64_t>& order = {});

// Seeded procedural backgrounds (gradients, stripes, blobs) and RGBA marks
// (rings, bars, glyph-like strokes) for running without external images.
void write_procedural_inputs(const std::filesystem::path& backgrounds_dir, const std::filesystem::path& assets_dir,
                             int n_backgrounds, int n_assets, int size, std::uint64_t seed);

}  // namespace wmf::synth
