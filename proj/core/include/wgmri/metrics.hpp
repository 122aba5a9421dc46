#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "wgmri/phantom.hpp"

namespace wgmri {

// 10 log10(max |y|^2 / mean |y - x|^2) with the peak taken from the
// reference. Complex inputs use the complex modulus of the error. Returns
// +infinity when the error is exactly zero.
double psnr(const torch::Tensor& reference, const torch::Tensor& estimate);

// Mean local SSIM over every 7x7 uniform window fully inside the image.
// Complex inputs are converted to magnitudes. C1 = (0.01 L)^2,
// C2 = (0.03 L)^2 with L = data_range, or max |reference| when unset.
double ssim(const torch::Tensor& reference, const torch::Tensor& estimate,
            std::optional<double> data_range = std::nullopt, int64_t window = 7);

// Centred crop of the last two dimensions; offsets are floor((H - h) / 2).
torch::Tensor center_crop(const torch::Tensor& image, int64_t crop_h, int64_t crop_w);

// 320x256 -> 272x216 scaled to (height, width), rounded to nearest.
std::pair<int64_t, int64_t> evaluation_crop_size(int64_t height, int64_t width);

struct ImageScore {
  std::string id;
  double psnr = 0;
  double ssim = 0;
};

struct EvalReport {
  std::vector<ImageScore> per_image;
  double mean_psnr = 0;
  double mean_ssim = 0;
  int64_t count = 0;
  std::string psnr_domain = "complex";
  std::string ssim_domain = "magnitude";

  void recompute_aggregate();
  void write_csv(const std::filesystem::path& path) const;
  void write_json(const std::filesystem::path& path) const;
};

// Maps one held-out input to its [H, W] complex reconstruction.
using Reconstructor = std::function<torch::Tensor(const InputRecord&)>;

struct EvalOptions {
  bool complex_psnr = true;
  bool apply_crop = true;
};

// Windows estimate and reference with the reference's window, crops both,
// and scores PSNR and SSIM against the hidden ground truth.
EvalReport evaluate_model(const Reconstructor& reconstruct, const DatasetSplit& heldout,
                          const EvalOptions& options = {});

}  // namespace wgmri
