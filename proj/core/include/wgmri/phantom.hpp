#pragma once

// Synthetic complex phantoms and the paired / partial / disjoint training
// splits built from them.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "wgmri/kspace.hpp"

namespace wgmri {

struct PhantomMeta {
  uint64_t seed = 0;
  int n_ellipses = 0;
};

struct Phantom {
  ComplexImage image;  // complex128, max |image| == 1
  PhantomMeta meta;
};

// Overlapping random ellipses (4-12, intensities in [0.2, 1]) with a smooth
// quadratic phase. Requires height, width >= 16.
Phantom make_phantom(int64_t height, int64_t width, uint64_t seed);

// Clips magnitudes at the 99th percentile and rescales them to [0, 1],
// keeping the phase. Monotone in magnitude.
torch::Tensor window_image(const torch::Tensor& image);
// Applies the window computed from `reference` to `image`.
torch::Tensor window_like(const torch::Tensor& image, const torch::Tensor& reference);
double window_level(const torch::Tensor& reference);

enum class Regime { paired, partial, disjoint };
enum class LabelMode { complex, magnitude };

std::string to_string(Regime r);
std::string to_string(LabelMode m);
Regime regime_from_string(const std::string& s);
LabelMode label_mode_from_string(const std::string& s);

struct InputRecord {
  KSpaceData kspace;           // samples complex64, mask float32, maps complex64
  torch::Tensor x_zf;          // [H, W] complex64
  torch::Tensor ground_truth;  // [H, W] complex64; evaluation only
  uint64_t seed = 0;           // phantom seed
};

struct DatasetSplit {
  Regime regime = Regime::paired;
  LabelMode label_mode = LabelMode::complex;
  std::vector<InputRecord> inputs;
  std::vector<torch::Tensor> labels;        // complex64 [H, W] or float32 [H, W] (magnitude)
  std::vector<uint64_t> label_seeds;        // phantom seed of each label
  std::vector<int64_t> label_source;        // input index whose ground truth it is, or -1
  double acceleration = 3.0;
  int64_t coils = 1;
  int64_t height = 64;
  int64_t width = 64;
  uint64_t seed = 0;

  int64_t input_count() const { return static_cast<int64_t>(inputs.size()); }
  int64_t label_count() const { return static_cast<int64_t>(labels.size()); }
};

struct SplitParams {
  int64_t inputs = 10;
  int64_t labels = 10;
  Regime regime = Regime::paired;
  LabelMode label_mode = LabelMode::complex;
  double acceleration = 3.0;
  int64_t coils = 1;
  int64_t height = 64;
  int64_t width = 64;
  std::array<int64_t, 2> calib_size{8, 8};
  double noise_sigma = 0.0;
  uint64_t seed = 0;
};

// Ground truths are windowed phantoms; labels are windowed phantoms (or
// their magnitude). Each input gets its own mask realization.
DatasetSplit build_split(const SplitParams& params);

// Held-out evaluation set drawn from a seed range reserved for evaluation.
// Always paired; only ground truths are used.
DatasetSplit build_heldout(const SplitParams& params, int64_t count);

// Throws ParameterError when a regime invariant fails.
void validate_split(const DatasetSplit& split);

void save_split(const DatasetSplit& split, const std::filesystem::path& path);
DatasetSplit load_split(const std::filesystem::path& path);

}  // namespace wgmri
