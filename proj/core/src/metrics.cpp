#include "wgmri/metrics.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "wgmri/errors.hpp"

namespace wgmri {

double psnr(const torch::Tensor& reference, const torch::Tensor& estimate) {
  if (!reference.sizes().equals(estimate.sizes())) throw DimensionError("psnr: shapes differ");
  auto y = reference.is_complex() ? reference.to(torch::kComplexDouble) : reference.to(torch::kFloat64);
  auto x = estimate.is_complex() ? estimate.to(torch::kComplexDouble) : estimate.to(torch::kFloat64);
  const double peak = y.abs().square().max().item<double>();
  if (peak == 0) throw ParameterError("psnr: reference is identically zero");
  const double mse = (y - x).abs().square().mean().item<double>();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak / mse);
}

double ssim(const torch::Tensor& reference, const torch::Tensor& estimate, std::optional<double> data_range,
            int64_t window) {
  if (!reference.sizes().equals(estimate.sizes())) throw DimensionError("ssim: shapes differ");
  if (reference.dim() != 2) throw DimensionError("ssim: expects 2-D images");
  if (window > reference.size(0) || window > reference.size(1)) throw ParameterError("ssim: window larger than image");
  auto y = reference.abs().to(torch::kFloat64).view({1, 1, reference.size(0), reference.size(1)});
  auto x = estimate.abs().to(torch::kFloat64).view({1, 1, estimate.size(0), estimate.size(1)});
  const double range = data_range.value_or(y.max().item<double>());
  if (!(range > 0)) throw ParameterError("ssim: data range must be positive");
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);

  namespace F = torch::nn::functional;
  auto pool = [window](const torch::Tensor& t) { return F::avg_pool2d(t, F::AvgPool2dFuncOptions(window).stride(1)); };
  auto mu_x = pool(x), mu_y = pool(y);
  auto var_x = pool(x * x) - mu_x * mu_x;
  auto var_y = pool(y * y) - mu_y * mu_y;
  auto cov = pool(x * y) - mu_x * mu_y;
  auto num = (2 * mu_x * mu_y + c1) * (2 * cov + c2);
  auto den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
  return (num / den).mean().item<double>();
}

torch::Tensor center_crop(const torch::Tensor& image, int64_t crop_h, int64_t crop_w) {
  const auto h = image.size(-2), w = image.size(-1);
  if (crop_h < 1 || crop_w < 1 || crop_h > h || crop_w > w) throw ParameterError("center_crop: crop exceeds image");
  const auto top = (h - crop_h) / 2, left = (w - crop_w) / 2;
  return image.slice(-2, top, top + crop_h).slice(-1, left, left + crop_w);
}

std::pair<int64_t, int64_t> evaluation_crop_size(int64_t height, int64_t width) {
  return {std::llround(static_cast<double>(height) * 272.0 / 320.0),
          std::llround(static_cast<double>(width) * 216.0 / 256.0)};
}

void EvalReport::recompute_aggregate() {
  count = static_cast<int64_t>(per_image.size());
  double sp = 0, ss = 0;
  for (const auto& s : per_image) {
    sp += s.psnr;
    ss += s.ssim;
  }
  mean_psnr = count ? sp / static_cast<double>(count) : 0.0;
  mean_ssim = count ? ss / static_cast<double>(count) : 0.0;
}

namespace {

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << "id,psnr_db,ssim\n";
  for (const auto& s : per_image) out << s.id << ',' << fmt(s.psnr) << ',' << fmt(s.ssim) << '\n';
  out << "mean," << fmt(mean_psnr) << ',' << fmt(mean_ssim) << '\n';
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["psnr_domain"] = psnr_domain;
  j["ssim_domain"] = ssim_domain;
  j["per_image"] = nlohmann::json::array();
  for (const auto& s : per_image) j["per_image"].push_back({{"id", s.id}, {"psnr", number_or_inf(s.psnr)}, {"ssim", s.ssim}});
  j["aggregate"] = {{"mean_psnr", number_or_inf(mean_psnr)}, {"mean_ssim", mean_ssim}, {"count", count}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

EvalReport evaluate_model(const Reconstructor& reconstruct, const DatasetSplit& heldout, const EvalOptions& options) {
  EvalReport report;
  report.psnr_domain = options.complex_psnr ? "complex" : "magnitude";
  for (size_t i = 0; i < heldout.inputs.size(); ++i) {
    const auto& rec = heldout.inputs[i];
    torch::Tensor estimate;
    {
      torch::NoGradGuard no_grad;
      estimate = reconstruct(rec).detach().to(torch::kComplexDouble);
    }
    auto truth = rec.ground_truth.to(torch::kComplexDouble);
    auto ref = window_like(truth, truth);
    auto est = window_like(estimate, truth);
    if (options.apply_crop) {
      auto [ch, cw] = evaluation_crop_size(ref.size(-2), ref.size(-1));
      ref = center_crop(ref, ch, cw);
      est = center_crop(est, ch, cw);
    }
    ImageScore score;
    score.id = std::to_string(i);
    score.psnr = options.complex_psnr ? psnr(ref, est) : psnr(ref.abs(), est.abs());
    score.ssim = ssim(ref.abs(), est.abs());
    report.per_image.push_back(score);
  }
  report.recompute_aggregate();
  return report;
}

}  // namespace wgmri
