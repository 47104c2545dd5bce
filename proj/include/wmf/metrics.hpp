#pragma once

// Restoration and localization metrics.
//
// Scales: PSNR uses peak 1.0 on [0, 1] values and is capped at 100 dB.
// RMSE and RMSEw are reported on the 0-255 scale. IoU is a percentage.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wmf/image.hpp"

namespace wmf::metrics {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kMaskThreshold = 0.5;

double mse(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);

// Luma (0.299, 0.587, 0.114) SSIM with an 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, L = 1, averaged over the valid window positions.
double ssim(const Image& a, const Image& b);

double rmse(const Image& a, const Image& b);
// RMSE over pixels where mask >= 0.5; absent when the mask is empty.
std::optional<double> rmse_w(const Image& a, const Image& b, const Image& mask);

struct MaskScores {
  double f1 = 0.0;
  double iou = 0.0;  // percent
  std::size_t tp = 0, fp = 0, fn = 0;
};
// Binarizes pred at `threshold` (>=) and truth at 0.5. When both masks are
// empty the prediction is perfect: f1 = 1, iou = 100.
MaskScores f1_iou(const Image& pred, const Image& truth, double threshold = kMaskThreshold);

struct EvalRow {
  std::string path;
  double psnr = 0, ssim = 0, rmse = 0;
  std::optional<double> rmse_w, f1, iou;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow mean;  // optional fields average only the rows that have them
};

EvalRow evaluate_pair(const std::string& name, const Image& pred, const Image& truth, const Image* gt_mask,
                      const Image* pred_mask, double threshold = kMaskThreshold);
EvalReport aggregate(std::vector<EvalRow> rows);

// Matches files by name across directories. gt_mask_dir enables RMSEw;
// pred_mask_dir (together with gt_mask_dir) enables F1/IoU.
EvalReport evaluate_dirs(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                         const std::filesystem::path& gt_mask_dir, const std::filesystem::path& pred_mask_dir,
                         double threshold = kMaskThreshold);

std::string to_csv(const EvalReport& report);

}  // namespace wmf::metrics
