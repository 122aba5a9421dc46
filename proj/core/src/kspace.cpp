#include "wgmri/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "wgmri/errors.hpp"
#include "wgmri/rng.hpp"

namespace wgmri {

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_same_grid(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.dim() < 2 || b.dim() < 2 || a.size(-2) != b.size(-2) || a.size(-1) != b.size(-1)) {
    throw DimensionError(std::string(what) + ": grid mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// The mask is shared by all coils: [..., H, W] -> [..., 1, H, W].
torch::Tensor coil_broadcast(const torch::Tensor& mask) { return mask.unsqueeze(-3); }

}  // namespace

torch::Tensor fft2c(const torch::Tensor& x) {
  return torch::fft::fft2(x, c10::nullopt, {-2, -1}, "ortho");
}

torch::Tensor ifft2c(const torch::Tensor& k) {
  return torch::fft::ifft2(k, c10::nullopt, {-2, -1}, "ortho");
}

torch::Tensor SamplingMask::centered() const { return torch::fft::fftshift(mask, std::vector<int64_t>{-2, -1}); }

double SamplingMask::sampled_fraction() const { return mask.to(torch::kFloat64).mean().item<double>(); }

namespace ops {

torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& maps, const torch::Tensor& mask) {
  require_same_grid(x, maps, "forward");
  require_same_grid(x, mask, "forward");
  return coil_broadcast(mask) * fft2c(x.unsqueeze(-3) * maps);
}

torch::Tensor adjoint(const torch::Tensor& samples, const torch::Tensor& maps) {
  require_same_grid(samples, maps, "adjoint");
  return (ifft2c(samples) * maps.conj()).sum(-3);
}

torch::Tensor hard_dc_coil_kspace(const torch::Tensor& x, const torch::Tensor& samples, const torch::Tensor& maps,
                                  const torch::Tensor& mask) {
  require_same_grid(x, samples, "hard_dc");
  require_same_grid(x, maps, "hard_dc");
  require_same_grid(x, mask, "hard_dc");
  auto kx = fft2c(x.unsqueeze(-3) * maps);
  return samples + (1 - coil_broadcast(mask)) * kx;
}

torch::Tensor hard_dc(const torch::Tensor& x, const torch::Tensor& samples, const torch::Tensor& maps,
                      const torch::Tensor& mask) {
  return (ifft2c(hard_dc_coil_kspace(x, samples, maps, mask)) * maps.conj()).sum(-3);
}

torch::Tensor soft_dc(const torch::Tensor& x, const torch::Tensor& x_zf, const torch::Tensor& maps,
                      const torch::Tensor& mask, const torch::Tensor& mu) {
  require_same_grid(x, x_zf, "soft_dc");
  auto normal = adjoint(forward(x, maps, mask), maps);
  auto step = mu;
  if (mu.dim() > 0) {
    auto shape = mu.sizes().vec();
    shape.push_back(1);
    shape.push_back(1);
    step = mu.reshape(shape);
  }
  return x + step * (normal - x_zf);
}

}  // namespace ops

void validate_image(const torch::Tensor& x) {
  if (!x.defined() || x.dim() != 2 || !x.is_complex()) {
    throw DimensionError("image must be a 2-D complex array, got " + (x.defined() ? shape_str(x) : "undefined"));
  }
  if (!torch::isfinite(x).all().item<bool>()) {
    throw ParameterError("image contains non-finite entries");
  }
}

void validate_mask(const SamplingMask& m) {
  if (!m.mask.defined() || m.mask.dim() != 2) throw DimensionError("mask must be 2-D");
  auto binary = (m.mask == 0) | (m.mask == 1);
  if (!binary.all().item<bool>()) throw ParameterError("mask entries must be exactly 0 or 1");
  auto [ch, cw] = m.calib_size;
  if (ch > 0 && cw > 0) {
    auto c = m.centered();
    int64_t r0 = m.height() / 2 - ch / 2;
    int64_t c0 = m.width() / 2 - cw / 2;
    if (r0 < 0 || c0 < 0 || r0 + ch > m.height() || c0 + cw > m.width()) {
      throw ParameterError("calibration region does not fit the grid");
    }
    if (!(c.slice(0, r0, r0 + ch).slice(1, c0, c0 + cw) == 1).all().item<bool>()) {
      throw ParameterError("calibration region is not fully sampled");
    }
  }
}

void validate_coils(const CoilSensitivities& coils, double tolerance) {
  if (!coils.maps.defined() || coils.maps.dim() != 3 || !coils.maps.is_complex() || coils.maps.size(0) < 1) {
    throw DimensionError("coil maps must be [C, H, W] complex with C >= 1");
  }
  auto energy = (coils.maps.abs().to(torch::kFloat64).square()).sum(0);
  double dev = (energy - 1).abs().max().item<double>();
  if (dev > tolerance) {
    throw ParameterError("coil maps are not normalized: max |sum |s_i|^2 - 1| = " + std::to_string(dev));
  }
}

void validate_kspace(const KSpaceData& k) {
  validate_mask(k.mask);
  if (!k.samples.defined() || k.samples.dim() != 3) throw DimensionError("k-space samples must be [C, H, W]");
  require_same_grid(k.samples, k.mask.mask, "kspace");
  require_same_grid(k.samples, k.coils.maps, "kspace");
  if (k.samples.size(0) != k.coils.count()) throw DimensionError("coil count of samples and maps differ");
  auto leak = k.samples * (1 - k.mask.mask).unsqueeze(0);
  if (!(leak == 0).all().item<bool>()) throw ParameterError("k-space has nonzero unsampled entries");
}

KSpaceData apply_forward(const ComplexImage& x, const CoilSensitivities& coils, const SamplingMask& mask,
                         double noise_sigma, uint64_t noise_seed) {
  if (noise_sigma < 0 || !std::isfinite(noise_sigma)) throw ParameterError("noise_sigma must be >= 0");
  if (x.data.dim() != 2) throw DimensionError("image must be 2-D, got " + shape_str(x.data));
  if (coils.maps.dim() != 3) throw DimensionError("coil maps must be [C, H, W]");
  require_same_grid(x.data, coils.maps, "apply_forward");
  require_same_grid(x.data, mask.mask, "apply_forward");

  auto full = fft2c(x.data.unsqueeze(0) * coils.maps);
  if (noise_sigma > 0) {
    auto gen = make_torch_generator(noise_seed);
    // Complex randn has unit total variance split evenly across re/im.
    full = full + noise_sigma * torch::randn(full.sizes(), gen, full.options());
  }
  return KSpaceData{full * mask.mask.unsqueeze(0), mask, coils};
}

ComplexImage zero_filled_recon(const KSpaceData& k) {
  return ComplexImage{ops::adjoint(k.samples, k.coils.maps)};
}

ComplexImage hard_dc(const ComplexImage& x, const KSpaceData& k) {
  return ComplexImage{ops::hard_dc(x.data, k.samples, k.coils.maps, k.mask.mask)};
}

ComplexImage soft_dc(const ComplexImage& x, const ComplexImage& x_zf, const KSpaceData& k, double mu) {
  if (!std::isfinite(mu)) throw ParameterError("mu must be finite");
  auto step = torch::tensor(mu, torch::TensorOptions().dtype(torch::kFloat64));
  return ComplexImage{ops::soft_dc(x.data, x_zf.data, k.coils.maps, k.mask.mask, step)};
}

namespace {

constexpr double kDensitySlope = 2.0;
constexpr double kDensityTolerance = 0.2;

// Dart throwing over a fixed candidate order. Returns the mask in centred
// order and its sampled count (calibration block included).
std::vector<uint8_t> throw_darts(int64_t h, int64_t w, double base_radius, const std::vector<int64_t>& order,
                                 const std::vector<double>& radius_scale) {
  std::vector<uint8_t> taken(static_cast<size_t>(h * w), 0);
  for (int64_t p : order) {
    const double r = base_radius * radius_scale[static_cast<size_t>(p)];
    const int64_t py = p / w, px = p % w;
    bool free = true;
    if (r > 1.0) {
      const int64_t reach = static_cast<int64_t>(std::ceil(r));
      const double r2 = r * r;
      for (int64_t y = std::max<int64_t>(0, py - reach); free && y <= std::min(h - 1, py + reach); ++y) {
        for (int64_t x = std::max<int64_t>(0, px - reach); x <= std::min(w - 1, px + reach); ++x) {
          if (!taken[static_cast<size_t>(y * w + x)]) continue;
          const double dy = static_cast<double>(y - py), dx = static_cast<double>(x - px);
          if (dy * dy + dx * dx < r2) {
            free = false;
            break;
          }
        }
      }
    }
    if (free) taken[static_cast<size_t>(p)] = 1;
  }
  return taken;
}

}  // namespace

SamplingMask generate_poisson_mask(int64_t height, int64_t width, double acceleration,
                                   std::array<int64_t, 2> calib_size, uint64_t seed) {
  if (height < 1 || width < 1) throw ParameterError("mask grid must be positive");
  if (!(acceleration >= 1.0) || !std::isfinite(acceleration)) throw ParameterError("acceleration must be >= 1");
  auto [ch, cw] = calib_size;
  if (ch < 0 || cw < 0 || ch > height || cw > width) throw ParameterError("calibration region does not fit the grid");

  const int64_t n = height * width;
  const int64_t r0 = height / 2 - ch / 2;
  const int64_t c0 = width / 2 - cw / 2;
  auto stamp_calib = [&](std::vector<uint8_t>& m) {
    for (int64_t y = r0; y < r0 + ch; ++y)
      for (int64_t x = c0; x < c0 + cw; ++x) m[static_cast<size_t>(y * width + x)] = 1;
  };
  auto fraction = [&](const std::vector<uint8_t>& m) {
    return static_cast<double>(std::accumulate(m.begin(), m.end(), int64_t{0})) / static_cast<double>(n);
  };

  std::vector<uint8_t> best(static_cast<size_t>(n), 1);
  if (acceleration > 1.0) {
    const double target = 1.0 / acceleration;
    if (static_cast<double>(ch * cw) / static_cast<double>(n) > target * (1.0 + kDensityTolerance)) {
      throw ParameterError("acceleration infeasible: calibration block alone exceeds the sampling budget");
    }

    std::vector<double> scale(static_cast<size_t>(n));
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        const double ky = (static_cast<double>(y) - height / 2) / (height / 2.0);
        const double kx = (static_cast<double>(x) - width / 2) / (width / 2.0);
        scale[static_cast<size_t>(y * width + x)] = 1.0 + kDensitySlope * std::sqrt(ky * ky + kx * kx);
      }
    }
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    auto engine = make_engine(derive_seed(seed, SeedStream::mask));
    for (int64_t i = n - 1; i > 0; --i) {
      auto j = static_cast<int64_t>(engine() % static_cast<uint64_t>(i + 1));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double lo = 0.0, hi = static_cast<double>(std::max(height, width));
    double best_err = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 48; ++iter) {
      const double mid = 0.5 * (lo + hi);
      auto m = throw_darts(height, width, mid, order, scale);
      stamp_calib(m);
      const double f = fraction(m);
      const double err = std::abs(f - target) / target;
      if (err < best_err) {
        best_err = err;
        best = std::move(m);
      }
      if (f > target) lo = mid; else hi = mid;
    }
    if (best_err > kDensityTolerance) {
      throw ParameterError("acceleration infeasible for a " + std::to_string(height) + "x" + std::to_string(width) +
                           " grid (closest sampled fraction off by " + std::to_string(best_err * 100) + "%)");
    }
  }

  auto centered = torch::from_blob(best.data(), {height, width}, torch::kUInt8).to(torch::kFloat32);
  SamplingMask out;
  out.mask = torch::fft::ifftshift(centered, std::vector<int64_t>{-2, -1}).contiguous();
  out.acceleration = acceleration;
  out.calib_size = calib_size;
  return out;
}

CoilSensitivities generate_coil_maps(int64_t height, int64_t width, int64_t coils) {
  if (coils < 1) throw ParameterError("coil count must be >= 1");
  if (height < 1 || width < 1) throw ParameterError("coil map grid must be positive");
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ys = torch::arange(height, opts).sub_(height / 2.0).view({height, 1});
  auto xs = torch::arange(width, opts).sub_(width / 2.0).view({1, width});
  const double ring = 0.5 * static_cast<double>(std::min(height, width));
  const double sigma = 0.6 * static_cast<double>(std::min(height, width));

  std::vector<torch::Tensor> raw;
  raw.reserve(static_cast<size_t>(coils));
  for (int64_t i = 0; i < coils; ++i) {
    const double theta = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(coils);
    const double cy = ring * std::sin(theta), cx = ring * std::cos(theta);
    auto d2 = (ys - cy).square() + (xs - cx).square();
    auto magnitude = torch::exp(-d2 / (2.0 * sigma * sigma));
    auto phase = torch::polar(torch::ones_like(magnitude), torch::full_like(magnitude, theta));
    raw.push_back(magnitude * phase);
  }
  auto maps = torch::stack(raw);
  auto norm = maps.abs().square().sum(0, /*keepdim=*/true).sqrt();
  return CoilSensitivities{maps / norm};
}

}  // namespace wgmri
