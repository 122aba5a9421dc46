#pragma once

// Cartesian multi-coil MRI acquisition model.
//
// Every k-space array uses the natural DFT index order (DC at [0, 0]); the
// transforms are the orthonormal 2-D DFT, so forward and adjoint are exact
// inverses on fully sampled single-coil data. `SamplingMask::centered()`
// gives the display order with DC in the middle.

#include <array>
#include <cstdint>

#include <torch/torch.h>

namespace wgmri {

// 2-D complex image [H, W].
struct ComplexImage {
  torch::Tensor data;

  int64_t height() const { return data.size(-2); }
  int64_t width() const { return data.size(-1); }
};

struct SamplingMask {
  torch::Tensor mask;  // [H, W] float32 in {0, 1}, DFT order
  double acceleration = 1.0;
  std::array<int64_t, 2> calib_size{0, 0};

  int64_t height() const { return mask.size(0); }
  int64_t width() const { return mask.size(1); }
  // Mask with DC moved to the centre, as usually displayed.
  torch::Tensor centered() const;
  double sampled_fraction() const;
};

struct CoilSensitivities {
  torch::Tensor maps;  // [C, H, W] complex

  int64_t count() const { return maps.size(0); }
};

struct KSpaceData {
  torch::Tensor samples;  // [C, H, W] complex, zero where mask == 0
  SamplingMask mask;
  CoilSensitivities coils;
};

// Orthonormal 2-D DFT over the last two dimensions.
torch::Tensor fft2c(const torch::Tensor& x);
torch::Tensor ifft2c(const torch::Tensor& k);

// Batched, differentiable operators. Shapes broadcast over leading
// dimensions:
//   x, x_zf  [..., H, W]        complex image
//   maps     [..., C, H, W]     complex coil sensitivities
//   mask     [..., H, W]        real {0, 1}; shared by all coils
//   samples  [..., C, H, W]     complex k-space
namespace ops {

torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& maps, const torch::Tensor& mask);
// Sum_i IFFT2(samples_i) * conj(s_i).
torch::Tensor adjoint(const torch::Tensor& samples, const torch::Tensor& maps);
// Per-coil k-space before the coil combine: Y_i + (1 - mask) * FFT2(x * s_i).
torch::Tensor hard_dc_coil_kspace(const torch::Tensor& x, const torch::Tensor& samples, const torch::Tensor& maps,
                                  const torch::Tensor& mask);
// Sum_i IFFT2(Y_i + (1 - mask) * FFT2(x * s_i)) * conj(s_i).
torch::Tensor hard_dc(const torch::Tensor& x, const torch::Tensor& samples, const torch::Tensor& maps,
                      const torch::Tensor& mask);
// x + mu * (Sum_i IFFT2(mask * FFT2(x * s_i)) * conj(s_i) - x_zf).
// `mu` is a scalar tensor or one value per leading batch entry.
torch::Tensor soft_dc(const torch::Tensor& x, const torch::Tensor& x_zf, const torch::Tensor& maps,
                      const torch::Tensor& mask, const torch::Tensor& mu);

}  // namespace ops

// Throws DimensionError unless `x` is a finite 2-D complex array.
void validate_image(const torch::Tensor& x);
// Throws ParameterError/DimensionError when the invariants of the type fail.
void validate_mask(const SamplingMask& mask);
void validate_coils(const CoilSensitivities& coils, double tolerance = 1e-6);
void validate_kspace(const KSpaceData& k);

// Per coil: mask * (FFT2(x * s_i) + u_i), u_i circular complex Gaussian with
// E|u|^2 = noise_sigma^2.
KSpaceData apply_forward(const ComplexImage& x, const CoilSensitivities& coils, const SamplingMask& mask,
                         double noise_sigma = 0.0, uint64_t noise_seed = 0);
ComplexImage zero_filled_recon(const KSpaceData& k);
ComplexImage hard_dc(const ComplexImage& x, const KSpaceData& k);
ComplexImage soft_dc(const ComplexImage& x, const ComplexImage& x_zf, const KSpaceData& k, double mu);

// Variable-density Poisson-disc mask. The exclusion radius grows linearly
// with normalized k-space radius; its base value is bisected until the
// sampled fraction is within 20% of 1/acceleration. The centred calibration
// block is always fully sampled. acceleration == 1 returns a full mask.
SamplingMask generate_poisson_mask(int64_t height, int64_t width, double acceleration,
                                   std::array<int64_t, 2> calib_size, uint64_t seed);

// Smooth Gaussian-profile coil maps centred on the image border, jointly
// normalized so that sum_i |s_i|^2 == 1 at every pixel. complex128.
CoilSensitivities generate_coil_maps(int64_t height, int64_t width, int64_t coils);

}  // namespace wgmri
