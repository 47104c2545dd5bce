#include "wmf/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace wmf::metrics {

namespace {

void check_pair(const Image& a, const Image& b, const char* what) {
  require(a.same_shape(b), ErrorKind::Shape,
          std::string(what) + ": shape mismatch " + std::to_string(a.channels) + "x" + std::to_string(a.height) + "x" +
              std::to_string(a.width) + " vs " + std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
              std::to_string(b.width));
  require(!a.data.empty(), ErrorKind::Shape, std::string(what) + ": empty image");
}

void check_mask(const Image& img, const Image& mask, const char* what) {
  require(mask.channels == 1 && mask.height == img.height && mask.width == img.width, ErrorKind::Shape,
          std::string(what) + ": mask must be single-channel with the image extent");
}

std::vector<double> luma(const Image& img) {
  std::vector<double> out(img.pixels());
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      if (img.channels >= 3)
        out[i] = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
      else
        out[i] = img.at(0, y, x);
    }
  return out;
}

constexpr int kWindow = 11;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double s = 0;
  for (int i = 0; i < kWindow; ++i) s += g[i] = std::exp(-((i - 5) * (i - 5)) / (2 * 1.5 * 1.5));
  for (double& v : g) v /= s;
  return g;
}

// Valid-region separable filter of a (h, w) plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w) {
  static const auto g = gaussian_window();
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * in[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWindow; ++k) acc += g[k] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

double mse(const Image& a, const Image& b) {
  check_pair(a, b, "mse");
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / m));
}

double ssim(const Image& a, const Image& b) {
  check_pair(a, b, "ssim");
  require(a.height >= kWindow && a.width >= kWindow, ErrorKind::Input,
          "ssim needs images of at least 11x11, got " + std::to_string(a.height) + "x" + std::to_string(a.width));
  const int h = a.height, w = a.width;
  const std::vector<double> x = luma(a), y = luma(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
  const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double va = sxx[i] - mx[i] * mx[i], vb = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mx.size());
}

double rmse(const Image& a, const Image& b) { return 255.0 * std::sqrt(mse(a, b)); }

std::optional<double> rmse_w(const Image& a, const Image& b, const Image& mask) {
  check_pair(a, b, "rmse_w");
  check_mask(a, mask, "rmse_w");
  double acc = 0;
  std::size_t count = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(0, y, x) < 0.5f) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = static_cast<double>(a.at(c, y, x)) - b.at(c, y, x);
        acc += d * d;
      }
      count += static_cast<std::size_t>(a.channels);
    }
  if (count == 0) return std::nullopt;
  return 255.0 * std::sqrt(acc / static_cast<double>(count));
}

MaskScores f1_iou(const Image& pred, const Image& truth, double threshold) {
  require(threshold > 0 && threshold < 1, ErrorKind::Config, "mask threshold must lie in (0, 1)");
  check_pair(pred, truth, "f1_iou");
  require(pred.channels == 1, ErrorKind::Shape, "f1_iou expects single-channel masks");
  MaskScores s;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] >= threshold, t = truth.data[i] >= 0.5f;
    s.tp += p && t;
    s.fp += p && !t;
    s.fn += !p && t;
  }
  const std::size_t uni = s.tp + s.fp + s.fn;
  if (uni == 0) {
    s.f1 = 1.0;
    s.iou = 100.0;
    return s;
  }
  s.f1 = 2.0 * static_cast<double>(s.tp) / static_cast<double>(2 * s.tp + s.fp + s.fn);
  s.iou = 100.0 * static_cast<double>(s.tp) / static_cast<double>(uni);
  return s;
}

EvalRow evaluate_pair(const std::string& name, const Image& pred, const Image& truth, const Image* gt_mask,
                      const Image* pred_mask, double threshold) {
  EvalRow row;
  row.path = name;
  row.psnr = psnr(pred, truth);
  row.ssim = ssim(pred, truth);
  row.rmse = rmse(pred, truth);
  if (gt_mask) row.rmse_w = rmse_w(pred, truth, *gt_mask);
  if (gt_mask && pred_mask) {
    const MaskScores s = f1_iou(*pred_mask, *gt_mask, threshold);
    row.f1 = s.f1;
    row.iou = s.iou;
  }
  return row;
}

EvalReport aggregate(std::vector<EvalRow> rows) {
  EvalReport report;
  report.rows = std::move(rows);
  report.mean.path = "MEAN";
  if (report.rows.empty()) return report;
  auto mean_of = [&](auto field) -> std::optional<double> {
    double s = 0;
    std::size_t n = 0;
    for (const EvalRow& r : report.rows)
      if (const std::optional<double> v = field(r)) {
        s += *v;
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / static_cast<double>(n);
  };
  report.mean.psnr = *mean_of([](const EvalRow& r) { return std::optional<double>(r.psnr); });
  report.mean.ssim = *mean_of([](const EvalRow& r) { return std::optional<double>(r.ssim); });
  report.mean.rmse = *mean_of([](const EvalRow& r) { return std::optional<double>(r.rmse); });
  report.mean.rmse_w = mean_of([](const EvalRow& r) { return r.rmse_w; });
  report.mean.f1 = mean_of([](const EvalRow& r) { return r.f1; });
  report.mean.iou = mean_of([](const EvalRow& r) { return r.iou; });
  return report;
}

EvalReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                         const std::filesystem::path& gt_mask_dir, const std::filesystem::path& pred_mask_dir,
                         double threshold) {
  const auto preds = list_pngs(pred_dir), gts = list_pngs(gt_dir);
  require(preds.size() == gts.size(), ErrorKind::Input,
          "file count mismatch: " + std::to_string(preds.size()) + " in " + pred_dir.string() + " vs " +
              std::to_string(gts.size()) + " in " + gt_dir.string());
  auto check_count = [&](const std::filesystem::path& dir) {
    if (dir.empty()) return;
    const auto n = list_pngs(dir).size();
    require(n == preds.size(), ErrorKind::Input,
            "file count mismatch: " + std::to_string(n) + " in " + dir.string() + " vs " +
                std::to_string(preds.size()) + " predictions");
  };
  check_count(gt_mask_dir);
  check_count(pred_mask_dir);
  std::vector<EvalRow> rows;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::string name = preds[i].filename().string();
    require(gts[i].filename() == preds[i].filename(), ErrorKind::Input,
            "no ground truth named " + name + " in " + gt_dir.string());
    const Image pred = read_png(preds[i], 3), truth = read_png(gts[i], 3);
    std::optional<Image> gm, pm;
    if (!gt_mask_dir.empty()) gm = read_png(gt_mask_dir / name, 1);
    if (!pred_mask_dir.empty()) pm = read_png(pred_mask_dir / name, 1);
    rows.push_back(evaluate_pair(name, pred, truth, gm ? &*gm : nullptr, pm ? &*pm : nullptr, threshold));
  }
  return aggregate(std::move(rows));
}

std::string to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "# psnr: dB, peak 1.0 on [0,1], capped at 100; ssim: luma, 11x11 gaussian; "
        "rmse, rmse_w: 0-255 scale; rmse_w: ground-truth mask pixels; f1: [0,1]; iou: percent\n";
  os << "path,psnr,ssim,rmse,rmse_w,f1,iou\n";
  auto line = [&](const EvalRow& r) {
    os << r.path << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ',' << fmt(r.rmse) << ',' << fmt(r.rmse_w) << ','
       << fmt(r.f1) << ',' << fmt(r.iou) << '\n';
  };
  for (const EvalRow& r : report.rows) line(r);
  line(report.mean);
  return os.str();
}

}  // namespace wmf::metrics
