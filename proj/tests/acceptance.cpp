// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "wmf/blocks.hpp"
#include "wmf/metrics.hpp"
#include "wmf/ops.hpp"
#include "wmf/synth.hpp"
#include "wmf/trainer.hpp"
#include "wmf/verify.hpp"

using namespace wmf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct TempDir {
  fs::path root;
  explicit TempDir(const std::string& name) : root(fs::temp_directory_path() / name) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempDir() { fs::remove_all(root); }
};

Tensor random_tensor(Shape shape, Rng& rng, DType dtype = default_dtype()) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(static_cast<std::size_t>(i), rng.uniform(-1, 1));
  return t;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::pair<std::string, std::string>> tree(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), root).string(), file_bytes(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

// 1. Finite-difference gradient suites in 64-bit with eps 1e-5.
void gradients(Outcome& o) {
  const auto t0 = Clock::now();
  struct Suite {
    const char* name;
    std::vector<verify::GradcheckRow> rows;
  };
  const Suite suites[] = {{"ops", verify::gradcheck_ops(DType::F64, 1e-5)},
                          {"block", verify::gradcheck_block(DType::F64, 1e-5)},
                          {"net", verify::gradcheck_net(DType::F64, 1e-5)}};
  const double limits[] = {1e-4, 1e-3, 1e-3};
  for (int s = 0; s < 3; ++s) {
    double worst = 0;
    for (const auto& r : suites[s].rows) {
      worst = std::max(worst, r.max_rel_error);
      o.expect(r.passed() && r.tolerance <= limits[s], std::string(suites[s].name) + "/" + r.name);
    }
    o.expect(!suites[s].rows.empty(), std::string(suites[s].name) + " suite empty");
    o.detail << suites[s].name << " " << suites[s].rows.size() << " rows max " << std::scientific
             << std::setprecision(2) << worst << std::defaultfloat << "; ";
  }
  const double secs = seconds_since(t0);
  o.detail << "runtime " << std::fixed << std::setprecision(1) << secs << " s" << std::defaultfloat;
  o.expect(secs < 120, "runtime over 2 min");
}

// 2. Attention rows, map extent and the single-pixel case.
void attention(Outcome& o) {
  Rng rng(21);
  BlockConfig cfg;
  cfg.channels = 16;
  cfg.heads = 2;
  const BlockParams block = make_block(cfg, rng);
  double worst_row = 0;
  std::vector<Shape> extents;
  for (int hw : {8, 32}) {
    const MdtaResult r = mdta_forward_detailed(random_tensor({2, 16, hw, hw}, rng), block.mdta);
    extents.push_back(r.attention.shape());
    const std::int64_t d = r.attention.dim(3);
    for (std::int64_t row = 0; row < r.attention.numel() / d; ++row) {
      double s = 0;
      for (std::int64_t k = 0; k < d; ++k) s += r.attention.at(static_cast<std::size_t>(row * d + k));
      worst_row = std::max(worst_row, std::abs(s - 1));
    }
  }
  o.expect(worst_row <= 1e-6, "row sums");
  o.expect(extents[0] == extents[1] && extents[0] == Shape({2, 2, 8, 8}), "map extent");

  BlockConfig one;
  one.channels = 1;
  one.heads = 1;
  const BlockParams single = make_block(one, rng);
  const MdtaResult r = mdta_forward_detailed(random_tensor({1, 1, 1, 1}, rng), single.mdta);
  o.expect(r.mixed.values() == r.values.values(), "single pixel head != value projection");
  o.detail << "max |row sum - 1| " << std::scientific << std::setprecision(2) << worst_row << std::defaultfloat
           << "; extent " << extents[0][2] << "x" << extents[0][3] << " at 8x8 and 32x32; single-pixel head == V";
}

// 3. Zero gate is an exact identity; the GDFN switch changes block output.
void gdfn(Outcome& o) {
  Rng rng(31);
  BlockConfig cfg;
  cfg.channels = 8;
  BlockParams block = make_block(cfg, rng);
  const Tensor x = random_tensor({1, 8, 6, 6}, rng);
  GdfnParams gated = block.gdfn;
  gated.expand = block.gdfn.expand.clone();
  const std::int64_t hidden = gated.expand.dim(0) / 2, c = gated.expand.dim(1);
  for (std::int64_t i = 0; i < hidden * c; ++i) gated.expand.set(static_cast<std::size_t>(i), 0.0);
  o.expect(gdfn_forward(x, gated).values() == x.values(), "zero gate output != x");
  const Tensor on = block_forward(x, block);
  block.gdfn_enabled = false;
  const Tensor off = block_forward(x, block);
  o.expect(on.values() != off.values(), "gdfn flag has no effect");
  o.detail << "zero-gate output bit-identical to x; gdfn on/off outputs differ";
}

// 4. Encoder ladder at two resolutions, F_d shapes, single head tensor set.
void shapes(Outcome& o) {
  NetworkConfig n;
  n.base_channels = 8;
  const ModelParams m = init_model(n, 41);
  Rng rng(42);
  for (auto [h, w] : {std::pair{64, 64}, std::pair{32, 48}}) {
    const Tensor x = random_tensor({1, 3, h, w}, rng);
    const auto latents = encode(embed(x, m), m);
    for (int i = 0; i < kLevels; ++i)
      o.expect(latents[static_cast<std::size_t>(i)].shape() == Shape({1, 8 << i, h >> i, w >> i}),
               "latent " + std::to_string(i) + " at " + std::to_string(h) + "x" + std::to_string(w));
    const DecoderOutputs dec = decode_nested(latents, m);
    for (const Tensor& f : dec.refined) o.expect(f.defined() && f.shape() == Shape({1, 8, h, w}), "F_d shape");
  }
  CheckpointFile file;
  store_model(file, m, TrainConfig{});
  int head = 0;
  for (const CheckpointEntry& e : file.entries()) head += e.name.rfind("head.", 0) == 0;
  o.expect(head == 2 && file.contains("head.weight") && file.contains("head.bias"), "head tensor set");
  o.detail << "latents (8*2^i, H/2^i, W/2^i) at 64x64 and 32x48; F1..F3 1x8xHxW; head entries " << head;
}

// 5. Metrics against scalar-loop oracles.
void metric_oracles(Outcome& o) {
  using namespace oracles;
  Rng rng(51);
  const int cases = 24;
  double worst_psnr = 0, worst_ssim = 0, worst_rmse = 0, worst_rmse_w = 0, worst_mask = 0, worst_identity = 0;
  for (int t = 0; t < cases; ++t) {
    const Image a = random_image(rng, 3, 16, 16);
    const Image b = noisy_copy(a, rng, 0.02 + 0.3 * rng.uniform());
    const Image m = rect_mask(rng, 16, 16);
    Image soft(1, 16, 16);
    for (std::size_t i = 0; i < soft.data.size(); ++i)
      soft.data[i] = static_cast<float>(std::clamp(m.data[i] + 0.8 * (rng.uniform() - 0.5), 0.0, 1.0));
    const double mse = oracle_mse(a, b);
    worst_psnr = std::max(worst_psnr, std::abs(metrics::psnr(a, b) - 10 * std::log10(1 / mse)));
    worst_rmse = std::max(worst_rmse, std::abs(metrics::rmse(a, b) - 255 * std::sqrt(mse)));
    worst_rmse_w = std::max(worst_rmse_w, std::abs(*metrics::rmse_w(a, b, m) - oracle_rmse_w(a, b, m)));
    worst_ssim = std::max(worst_ssim, std::abs(metrics::ssim(a, b) - oracle_ssim(a, b)));
    const auto [tp, fp, fn] = oracle_mask_counts(soft, m);
    const auto s = metrics::f1_iou(soft, m);
    worst_mask = std::max({worst_mask, std::abs(s.f1 - 2.0 * tp / double(2 * tp + fp + fn)),
                           std::abs(s.iou - 100.0 * tp / double(tp + fp + fn)) / 100});
    const double iou = s.iou / 100;
    worst_identity = std::max(worst_identity, std::abs(s.f1 - 2 * iou / (1 + iou)));
  }
  o.expect(worst_psnr <= 1e-6, "psnr");
  o.expect(worst_rmse <= 1e-6, "rmse");
  o.expect(worst_rmse_w <= 1e-6, "rmse_w");
  o.expect(worst_ssim <= 1e-5, "ssim");
  o.expect(worst_mask <= 1e-12, "f1/iou");
  o.expect(worst_identity <= 1e-12, "f1 = 2iou/(1+iou)");
  o.detail << cases << " cases; max abs dev psnr " << std::scientific << std::setprecision(1) << worst_psnr
           << " rmse " << worst_rmse << " rmse_w " << worst_rmse_w << " ssim " << worst_ssim << " f1/iou "
           << worst_mask << " identity " << worst_identity << std::defaultfloat;
}

// 6. Manifest recomposition, untouched background, order independence.
void synthesis(Outcome& o) {
  TempDir ws("wmf_accept_synth");
  synth::write_procedural_inputs(ws.root / "bg", ws.root / "assets", 6, 5, 128, 61);
  synth::SynthesisParams params;
  params.seed = 62;
  const std::int64_t n = 32;
  const auto records = synth::generate_dataset(ws.root / "bg", ws.root / "assets", params, n, ws.root / "a");
  const auto assets = synth::load_assets(ws.root / "assets");
  const float quant = 1.0f / 510 + 1e-6f;
  float worst_recompose = 0, worst_outside = 0;
  bool masks_equal = true;
  for (const auto& r : synth::read_manifest(ws.root / "a" / "manifest.jsonl")) {
    const std::string name = synth::sample_name(r.index);
    const Image J = read_png(ws.root / "a" / "watermarked" / name, 3);
    const Image I = read_png(ws.root / "a" / "background" / name, 3);
    const Image M = read_png(ws.root / "a" / "mask" / name, 1);
    const synth::Composite again = synth::recompose(r, I, assets, params);
    masks_equal = masks_equal && again.mask.data == M.data;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < J.height; ++y)
        for (int x = 0; x < J.width; ++x) {
          worst_recompose = std::max(worst_recompose, std::abs(again.watermarked.at(c, y, x) - J.at(c, y, x)));
          if (M.at(0, y, x) == 0.0f) worst_outside = std::max(worst_outside, std::abs(J.at(c, y, x) - I.at(c, y, x)));
        }
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = (i * 13 + 5) % n;
  synth::generate_dataset(ws.root / "bg", ws.root / "assets", params, n, ws.root / "b", order);
  const bool same_tree = tree(ws.root / "a") == tree(ws.root / "b");
  o.expect(records.size() == static_cast<std::size_t>(n), "sample count");
  o.expect(worst_recompose <= quant, "recomposition");
  o.expect(masks_equal, "mask recomposition");
  o.expect(worst_outside <= 0.05f + quant, "J != I outside mask");
  o.expect(same_tree, "order dependence");
  o.detail << n << " records; max |recomposed - J| " << worst_recompose << "; max |J - I| outside mask "
           << worst_outside << "; permuted order tree identical: " << (same_tree ? "yes" : "no");
}

// 7. Overfit eight samples with the tiny model.
constexpr std::int64_t kOverfitSteps = 2000;
constexpr std::int64_t kOverfitBatch = 4;
constexpr int kTailSteps = 20;

void overfit(Outcome& o) {
  const auto t0 = Clock::now();
  TempDir ws("wmf_accept_overfit");
  synth::write_procedural_inputs(ws.root / "bg", ws.root / "assets", 8, 6, 128, 1);
  synth::SynthesisParams sp;
  sp.size = 64;
  sp.seed = 7;
  synth::generate_dataset(ws.root / "bg", ws.root / "assets", sp, 8, ws.root / "data");
  NetworkConfig n;
  n.base_channels = 8;
  TrainConfig t;
  t.steps = kOverfitSteps;
  t.batch = kOverfitBatch;
  t.seed = 1;
  t.optim.lr = 3e-4;
  Trainer trainer(n, t, load_dataset(ws.root / "data"));
  std::vector<double> losses;
  trainer.run([&](const StepLog& l) { losses.push_back(l.loss_total); }, {});
  double tail = 0;
  for (int i = 0; i < kTailSteps; ++i) tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)] / kTailSteps;
  const double drop = 1 - tail / losses.front();
  const EvalSummary e = trainer.evaluate();
  const double secs = seconds_since(t0);
  o.expect(drop >= 0.8, "loss drop < 80%");
  o.expect(e.iou / 100 > 0.8, "mask IoU <= 0.8");
  o.expect(e.psnr >= e.psnr_identity + 3, "PSNR gain < 3 dB");
  o.expect(secs < 1800, "runtime over 30 min");
  o.detail << std::fixed << std::setprecision(3) << kOverfitSteps << " steps batch " << kOverfitBatch
           << "; loss step1 " << losses.front() << " -> last-" << kTailSteps << " mean " << tail << " (drop "
           << std::setprecision(1) << 100 * drop << "%); IoU " << std::setprecision(3) << e.iou / 100 << "; PSNR "
           << std::setprecision(2) << e.psnr << " dB vs identity " << e.psnr_identity << " dB; runtime "
           << std::setprecision(0) << secs << " s" << std::defaultfloat;
}

// 8. Same-seed determinism and split-run equivalence.
void determinism(Outcome& o) {
  TempDir ws("wmf_accept_determinism");
  synth::write_procedural_inputs(ws.root / "bg", ws.root / "assets", 4, 3, 64, 81);
  synth::SynthesisParams sp;
  sp.size = 32;
  sp.seed = 82;
  synth::generate_dataset(ws.root / "bg", ws.root / "assets", sp, 6, ws.root / "data");
  const Dataset data = load_dataset(ws.root / "data");
  NetworkConfig n;
  n.base_channels = 4;
  TrainConfig t;
  t.steps = 5;
  t.batch = 4;
  t.seed = 83;
  t.optim.lr = 1e-3;

  auto run = [&](Trainer& tr, std::vector<std::string>& logs) {
    tr.run([&](const StepLog& l) { logs.push_back(l.to_json()); }, {});
  };
  std::vector<std::string> la, lb, split;
  Trainer a(n, t, data), b(n, t, data);
  run(a, la);
  run(b, lb);
  const auto ca = a.checkpoint().serialize();
  o.expect(la == lb && ca == b.checkpoint().serialize(), "same-seed runs differ");

  TrainConfig head = t;
  head.steps = 2;
  Trainer first(n, head, data);
  run(first, split);
  const fs::path mid = ws.root / "mid.wmfk";
  first.checkpoint().save(mid);
  Trainer rest = Trainer::resume(CheckpointFile::load(mid), data, t.steps);
  run(rest, split);
  o.expect(split == la, "split-run logs differ");
  o.expect(rest.checkpoint().serialize() == ca, "split-run checkpoint differs");
  o.detail << "two same-seed runs: identical logs and " << ca.size() << "-byte checkpoints; 2+3 resumed == 5 uninterrupted";
}

// 9. Plain decoder node set; deep supervision off equals the d=3-only loss.
void ablations(Outcome& o) {
  NetworkConfig n;
  n.base_channels = 4;
  n.nested_enabled = false;
  Rng rng(91);
  const Tensor x = random_tensor({1, 3, 16, 16}, rng);
  const ModelParams plain = init_model(n, 92);
  const ForwardOutputs f = forward(x, plain, Mode::Train);
  const std::vector<GridPos> diagonal{{2, 1}, {1, 2}, {0, 3}};
  o.expect(f.trace.decoder_nodes == diagonal, "plain decoder node set");
  o.expect(f.trace.head_evaluations == 1, "plain head evaluations");

  n.nested_enabled = true;
  const ForwardOutputs nested = forward(x, init_model(n, 92), Mode::Train);
  o.expect(nested.trace.decoder_nodes.size() == 6 && nested.trace.head_evaluations == 3, "nested node count");

  const Tensor bg = random_tensor({1, 3, 16, 16}, rng);
  Tensor mask = Tensor::zeros({1, 1, 16, 16});
  for (std::int64_t i = 0; i < 40; ++i) mask.set(static_cast<std::size_t>(i * 3), 1.0);
  const FeatureExtractor fx;
  auto grads = [&](bool deep_sup, const LossWeights& w) {
    NetworkConfig c = n;
    c.deep_supervision_enabled = deep_sup;
    ModelParams m = init_model(c, 93);
    for (auto& [name, p] : m.named_parameters()) p.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    const LossResult r = total_loss(forward(x, m, Mode::Train), bg, mask, w, fx);
    tape.backward(r.total);
    std::vector<double> g;
    for (const auto& [name, p] : m.named_parameters()) {
      const std::vector<double> v = p.has_grad() ? p.grad().values() : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
      g.insert(g.end(), v.begin(), v.end());
    }
    return g;
  };
  LossWeights only_final;
  only_final.depth = {0, 0, 1};
  const auto off = grads(false, LossWeights{});
  const auto d3 = grads(true, only_final);
  o.expect(off == d3, "deep-sup-off gradients differ from d=3-only");
  o.detail << "plain decoder evaluates (2,1) (1,2) (0,3) with 1 head call vs 6 nodes / 3 heads nested; " << off.size()
           << " gradient entries bit-identical with deep supervision off vs lambda=(0,0,1)";
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
      {"gradient suite", gradients},       {"attention invariants", attention},
      {"GDFN invariants", gdfn},           {"shape ladder", shapes},
      {"metric oracles", metric_oracles},  {"synthesis correctness", synthesis},
      {"training sanity (overfit-8)", overfit}, {"determinism and resume", determinism},
      {"ablation structure", ablations}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (int i = 0; i < 9; ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << "CRITERION " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": "
              << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
