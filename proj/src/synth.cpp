#include "wmf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "wmf/kernels.hpp"
#include "wmf/rng.hpp"

namespace wmf::synth {

namespace fs = std::filesystem;

void SynthesisParams::validate() const {
  require(alpha_min > 0 && alpha_min <= alpha_max && alpha_max <= 1, ErrorKind::Config,
          "alpha range must satisfy 0 < min <= max <= 1");
  require(scale_min > 0 && scale_min <= scale_max && scale_max <= 1, ErrorKind::Config,
          "scale range must satisfy 0 < min <= max <= 1");
  require(rotation_min <= rotation_max, ErrorKind::Config, "rotation range is inverted");
  require(size >= 8, ErrorKind::Config, "size must be at least 8");
  require(scale_min * size >= 8, ErrorKind::Config,
          "scale_min * size must keep marks at least 8 px (got " + std::to_string(scale_min * size) + ")");
  require(mask_threshold >= 0 && mask_threshold < 1, ErrorKind::Config, "mask threshold must lie in [0, 1)");
}

namespace {

// Bilinear lookup with zero outside the image.
double sample_zero(const Image& img, int c, double fy, double fx) {
  const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
  const double wy = fy - y0, wx = fx - x0;
  auto px = [&](int y, int x) -> double {
    if (y < 0 || y >= img.height || x < 0 || x >= img.width) return 0.0;
    return img.at(c, y, x);
  };
  return (px(y0, x0) * (1 - wx) + px(y0, x0 + 1) * wx) * (1 - wy) +
         (px(y0 + 1, x0) * (1 - wx) + px(y0 + 1, x0 + 1) * wx) * wy;
}

}  // namespace

Raster rasterize(const WatermarkAsset& asset, double longest_side_px, double rotation_deg) {
  const Image& src = asset.rgba;
  require(src.channels == 4 && src.height > 0 && src.width > 0, ErrorKind::Input,
          "asset " + asset.id + " must be a non-empty RGBA image");
  require(longest_side_px >= 1, ErrorKind::Input, "mark size must be at least one pixel");
  Image pre = src;
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x)
      for (int c = 0; c < 3; ++c) pre.at(c, y, x) = src.at(c, y, x) * src.at(3, y, x);

  const double k = longest_side_px / std::max(src.width, src.height);
  const double sw = src.width * k, sh = src.height * k;
  const double theta = rotation_deg * std::numbers::pi / 180.0, cs = std::cos(theta), sn = std::sin(theta);
  const int out_w = static_cast<int>(std::ceil(std::abs(sw * cs) + std::abs(sh * sn) - 1e-9));
  const int out_h = static_cast<int>(std::ceil(std::abs(sw * sn) + std::abs(sh * cs) - 1e-9));

  Raster r;
  r.premultiplied = Image(4, out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const double dx = x + 0.5 - out_w / 2.0, dy = y + 0.5 - out_h / 2.0;
      const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
      const double fx = u / k + src.width / 2.0 - 0.5, fy = v / k + src.height / 2.0 - 0.5;
      for (int c = 0; c < 4; ++c)
        r.premultiplied.at(c, y, x) = static_cast<float>(std::clamp(sample_zero(pre, c, fy, fx), 0.0, 1.0));
    }
  return r;
}

Composite composite(const Image& background, const Raster& mark, int x, int y, double alpha_global,
                    double mask_threshold) {
  require(background.channels == 3, ErrorKind::Input, "background must be RGB");
  require(alpha_global >= 0 && alpha_global <= 1, ErrorKind::Input, "global alpha must lie in [0, 1]");
  const Image& m = mark.premultiplied;
  require(x >= 0 && y >= 0 && x + m.width <= background.width && y + m.height <= background.height,
          ErrorKind::Placement,
          "mark of " + std::to_string(m.width) + "x" + std::to_string(m.height) + " at (" + std::to_string(x) + ", " +
              std::to_string(y) + ") leaves the " + std::to_string(background.width) + "x" +
              std::to_string(background.height) + " image");
  Composite out{background, Image(1, background.height, background.width), Image(1, background.height, background.width)};
  for (int my = 0; my < m.height; ++my)
    for (int mx = 0; mx < m.width; ++mx) {
      const double a = alpha_global * m.at(3, my, mx);
      const int py = y + my, px = x + mx;
      out.alpha.at(0, py, px) = static_cast<float>(a);
      out.mask.at(0, py, px) = a > mask_threshold ? 1.0f : 0.0f;
      for (int c = 0; c < 3; ++c)
        out.watermarked.at(c, py, px) =
            static_cast<float>(alpha_global * m.at(c, my, mx) + (1 - a) * background.at(c, py, px));
    }
  return out;
}

std::string to_json_line(const SampleRecord& r) {
  const nlohmann::json j{{"index", r.index}, {"asset_id", r.asset_id}, {"background_id", r.background_id},
                         {"alpha", r.alpha}, {"scale", r.scale},       {"rotation_deg", r.rotation_deg},
                         {"x", r.x},         {"y", r.y},               {"seed", r.seed}};
  return j.dump();
}

SampleRecord parse_json_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    SampleRecord r;
    r.index = j.at("index").get<std::int64_t>();
    r.asset_id = j.at("asset_id").get<std::string>();
    r.background_id = j.at("background_id").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.scale = j.at("scale").get<double>();
    r.rotation_deg = j.at("rotation_deg").get<double>();
    r.x = j.at("x").get<int>();
    r.y = j.at("y").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("bad manifest record: ") + e.what());
  }
}

std::vector<SampleRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::Io, "cannot read manifest " + path.string());
  std::vector<SampleRecord> out;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) out.push_back(parse_json_line(line));
  return out;
}

std::vector<WatermarkAsset> load_assets(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorKind::Io, "assets directory not readable: " + dir.string());
  std::vector<WatermarkAsset> out;
  for (const fs::path& p : list_pngs(dir)) {
    Image img = read_png(p);
    if (img.channels != 4) {
      Image rgba(4, img.height, img.width, 1.0f);
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
          for (int c = 0; c < 3; ++c) rgba.at(c, y, x) = img.at(img.channels == 1 ? 0 : c, y, x);
      img = std::move(rgba);
    }
    bool visible = false;
    for (int y = 0; y < img.height && !visible; ++y)
      for (int x = 0; x < img.width && !visible; ++x) visible = img.at(3, y, x) > 0;
    require(visible, ErrorKind::Input, "asset " + p.string() + " is fully transparent");
    out.push_back({p.stem().string(), std::move(img)});
  }
  require(!out.empty(), ErrorKind::Input, "no watermark assets (*.png) in " + dir.string());
  return out;
}

std::vector<Background> load_backgrounds(const fs::path& dir, int size) {
  require(fs::is_directory(dir), ErrorKind::Io, "backgrounds directory not readable: " + dir.string());
  std::vector<Background> out;
  for (const fs::path& p : list_pngs(dir)) {
    const Image img = read_png(p);
    Image rgb(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        for (int c = 0; c < 3; ++c) rgb.at(c, y, x) = img.at(img.channels == 1 ? 0 : c, y, x);
    out.push_back({p.stem().string(), quantized(resize_bilinear(rgb, size, size))});
  }
  require(!out.empty(), ErrorKind::Input, "no background images (*.png) in " + dir.string());
  return out;
}

namespace {

const WatermarkAsset& find_asset(const std::vector<WatermarkAsset>& assets, const std::string& id) {
  for (const WatermarkAsset& a : assets)
    if (a.id == id) return a;
  fail(ErrorKind::Input, "unknown asset id " + id);
}

}  // namespace

Sample make_sample(const std::vector<Background>& backgrounds, const std::vector<WatermarkAsset>& assets,
                   const SynthesisParams& params, std::int64_t index) {
  params.validate();
  require(!backgrounds.empty() && !assets.empty(), ErrorKind::Input, "need at least one background and one asset");
  Sample s;
  SampleRecord& r = s.record;
  r.index = index;
  r.seed = derive_seed(params.seed, static_cast<std::uint64_t>(index));
  Rng rng(r.seed);
  const Background& bg = backgrounds[rng.below(backgrounds.size())];
  const WatermarkAsset& asset = assets[rng.below(assets.size())];
  r.background_id = bg.id;
  r.asset_id = asset.id;
  r.alpha = rng.uniform(params.alpha_min, params.alpha_max);
  r.scale = rng.uniform(params.scale_min, params.scale_max);
  r.rotation_deg = rng.uniform(params.rotation_min, params.rotation_max);
  const Raster mark = rasterize(asset, r.scale * params.size, r.rotation_deg);
  const int room_x = params.size - mark.premultiplied.width, room_y = params.size - mark.premultiplied.height;
  require(room_x >= 0 && room_y >= 0, ErrorKind::Placement,
          "mark " + asset.id + " does not fit a " + std::to_string(params.size) + " px image at scale " +
              std::to_string(r.scale));
  r.x = static_cast<int>(rng.below(static_cast<std::uint64_t>(room_x) + 1));
  r.y = static_cast<int>(rng.below(static_cast<std::uint64_t>(room_y) + 1));
  s.background = bg.rgb;
  s.result = composite(bg.rgb, mark, r.x, r.y, r.alpha, params.mask_threshold);
  return s;
}

Composite recompose(const SampleRecord& record, const Image& background, const std::vector<WatermarkAsset>& assets,
                    const SynthesisParams& params) {
  const Raster mark = rasterize(find_asset(assets, record.asset_id), record.scale * params.size, record.rotation_deg);
  return composite(background, mark, record.x, record.y, record.alpha, params.mask_threshold);
}

std::string sample_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06lld.png", static_cast<long long>(index));
  return buf;
}

std::vector<SampleRecord> generate_dataset(const fs::path& backgrounds_dir, const fs::path& assets_dir,
                                           const SynthesisParams& params, std::int64_t n, const fs::path& out_dir,
                                           const std::vector<std::int64_t>& order) {
  params.validate();
  require(n >= 0, ErrorKind::Config, "sample count must be non-negative");
  const auto assets = load_assets(assets_dir);
  const auto backgrounds = load_backgrounds(backgrounds_dir, params.size);

  std::vector<std::int64_t> schedule = order;
  if (schedule.empty())
    for (std::int64_t i = 0; i < n; ++i) schedule.push_back(i);
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  require(static_cast<std::int64_t>(schedule.size()) == n, ErrorKind::Config, "order must list every index once");
  for (std::int64_t i : schedule) {
    require(i >= 0 && i < n && !seen[static_cast<std::size_t>(i)], ErrorKind::Config,
            "order must list every index once");
    seen[static_cast<std::size_t>(i)] = true;
  }

  fs::create_directories(out_dir);
  std::vector<SampleRecord> records(static_cast<std::size_t>(n));
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) num_threads(kernels::max_threads())
  for (std::int64_t k = 0; k < n; ++k) {
    try {
      const std::int64_t i = schedule[static_cast<std::size_t>(k)];
      const Sample s = make_sample(backgrounds, assets, params, i);
      const std::string name = sample_name(i);
      write_png(out_dir / "watermarked" / name, s.result.watermarked);
      write_png(out_dir / "background" / name, s.background);
      write_png(out_dir / "mask" / name, s.result.mask);
      records[static_cast<std::size_t>(i)] = s.record;
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::binary);
  require(manifest.good(), ErrorKind::Io, "cannot write " + (out_dir / "manifest.jsonl").string());
  for (const SampleRecord& r : records) manifest << to_json_line(r) << '\n';
  return records;
}

namespace {

double smoothstep(double e0, double e1, double v) {
  const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3 - 2 * t);
}

Image procedural_background(Rng& rng, int size) {
  Image img(3, size, size);
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.05, 0.95);
    c1[c] = rng.uniform(0.05, 0.95);
  }
  const double angle = rng.uniform(0, 2 * std::numbers::pi), freq = rng.uniform(2, 9), phase = rng.uniform(0, 6.3);
  const double stripe = rng.uniform(0.0, 0.15);
  struct Blob {
    double x, y, r, color[3];
  };
  std::vector<Blob> blobs(3 + rng.below(4));
  for (Blob& b : blobs) {
    b.x = rng.uniform(0, 1);
    b.y = rng.uniform(0, 1);
    b.r = rng.uniform(0.08, 0.3);
    for (double& v : b.color) v = rng.uniform(0, 1);
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size, v = (y + 0.5) / size;
      const double t = 0.5 + 0.5 * std::sin(std::cos(angle) * u * 3 + std::sin(angle) * v * 3);
      const double s = stripe * std::sin(freq * 2 * std::numbers::pi * (u * std::sin(angle) + v * std::cos(angle)) + phase);
      for (int c = 0; c < 3; ++c) {
        double val = c0[c] * (1 - t) + c1[c] * t + s;
        for (const Blob& b : blobs) {
          const double d = std::hypot(u - b.x, v - b.y);
          const double w = 0.8 * (1 - smoothstep(b.r * 0.7, b.r, d));
          val = val * (1 - w) + b.color[c] * w;
        }
        val += rng.uniform(-0.02, 0.02);
        img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  return img;
}

Image procedural_mark(Rng& rng) {
  const int h = 32 + static_cast<int>(rng.below(33)), w = 32 + static_cast<int>(rng.below(33));
  Image img(4, h, w);
  double color[3];
  for (double& c : color) c = rng.uniform(0, 1);
  const int kind = static_cast<int>(rng.below(4));
  const double opacity = rng.uniform(0.8, 1.0);
  const double edge = 1.0 / std::min(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w * 2 - 1, v = (y + 0.5) / h * 2 - 1;
      double inside = 0;
      switch (kind) {
        case 0: {  // ring with a center dot
          const double r = std::hypot(u, v);
          inside = std::max(smoothstep(0.55 - edge, 0.55 + edge, r) * (1 - smoothstep(0.9 - edge, 0.9 + edge, r)),
                            1 - smoothstep(0.25 - edge, 0.25 + edge, r));
          break;
        }
        case 1: {  // block with horizontal cut-outs
          const double box = (1 - smoothstep(0.85, 0.85 + edge, std::abs(u))) * (1 - smoothstep(0.85, 0.85 + edge, std::abs(v)));
          const double bars = std::sin(v * 3.5 * std::numbers::pi) > 0.3 ? 0.0 : 1.0;
          inside = box * (std::abs(u) > 0.55 ? 1.0 : bars);
          break;
        }
        case 2: {  // plus sign
          const double a = (1 - smoothstep(0.25, 0.25 + edge, std::abs(u))) * (1 - smoothstep(0.9, 0.9 + edge, std::abs(v)));
          const double b = (1 - smoothstep(0.25, 0.25 + edge, std::abs(v))) * (1 - smoothstep(0.9, 0.9 + edge, std::abs(u)));
          inside = std::max(a, b);
          break;
        }
        default: {  // five-point star
          const double r = std::hypot(u, v), t = std::atan2(v, u);
          const double bound = 0.45 + 0.45 * std::pow(std::abs(std::cos(2.5 * t)), 3);
          inside = 1 - smoothstep(bound - edge, bound + edge, r);
        }
      }
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(color[c]);
      img.at(3, y, x) = static_cast<float>(opacity * inside);
    }
  return img;
}

}  // namespace

void write_procedural_inputs(const fs::path& backgrounds_dir, const fs::path& assets_dir, int n_backgrounds,
                             int n_assets, int size, std::uint64_t seed) {
  require(n_backgrounds >= 1 && n_assets >= 1, ErrorKind::Config, "need at least one background and one asset");
  require(size >= 8, ErrorKind::Config, "background size must be at least 8");
  for (int i = 0; i < n_backgrounds; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    write_png(backgrounds_dir / ("bg" + sample_name(i)), procedural_background(rng, size));
  }
  for (int i = 0; i < n_assets; ++i) {
    Rng rng(derive_seed(seed ^ 0xa55e7ULL, static_cast<std::uint64_t>(i)));
    write_png(assets_dir / ("mark" + sample_name(i)), procedural_mark(rng));
  }
}

}  // namespace wmf::synth
