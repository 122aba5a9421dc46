#include "wgmri/objectives.hpp"

#include <cmath>

#include "wgmri/errors.hpp"

namespace wgmri {

std::string to_string(ObjectiveFamily f) {
  switch (f) {
    case ObjectiveFamily::wgan_gp: return "wgan_gp";
    case ObjectiveFamily::egan: return "egan";
    case ObjectiveFamily::lsgan: return "lsgan";
    case ObjectiveFamily::l1_only: return "l1_only";
  }
  return "?";
}

ObjectiveFamily objective_family_from_string(const std::string& s) {
  if (s == "wgan_gp") return ObjectiveFamily::wgan_gp;
  if (s == "egan") return ObjectiveFamily::egan;
  if (s == "lsgan") return ObjectiveFamily::lsgan;
  if (s == "l1_only") return ObjectiveFamily::l1_only;
  throw ParameterError("unknown objective family '" + s + "'");
}

void ObjectiveConfig::validate() const {
  if (family == ObjectiveFamily::wgan_gp && !(eta > 0)) throw ParameterError("wgan_gp requires eta > 0");
  if (eta < 0) throw ParameterError("eta must be >= 0");
  if (critic_steps_per_gen_step < 1) throw ParameterError("critic_steps_per_gen_step must be >= 1");
  const auto& s = lambda_schedule;
  if (s.pure_l1_steps < 0 || s.ramp_end_step < s.pure_l1_steps) throw ParameterError("lambda schedule steps out of order");
  if (!(s.final_lambda >= 0 && s.final_lambda <= 1)) throw ParameterError("final_lambda must lie in [0, 1]");
}

double lambda_at(const LambdaSchedule& s, int64_t step) {
  if (step <= s.pure_l1_steps) return 1.0;
  if (step >= s.ramp_end_step) return s.final_lambda;
  const double t = static_cast<double>(step - s.pure_l1_steps) / static_cast<double>(s.ramp_end_step - s.pure_l1_steps);
  return 1.0 + t * (s.final_lambda - 1.0);
}

double l1_weight(const ObjectiveConfig& config, int64_t step) {
  if (config.family == ObjectiveFamily::l1_only) return 1.0;
  return config.hybrid ? lambda_at(config.lambda_schedule, step) : 0.0;
}

torch::Tensor interpolate(const torch::Tensor& fake, const torch::Tensor& real, const torch::Tensor& alphas) {
  if (!fake.sizes().equals(real.sizes())) throw DimensionError("interpolate: fake and real batches differ in shape");
  if (alphas.dim() != 1 || alphas.size(0) != fake.size(0)) throw DimensionError("interpolate: need one alpha per sample");
  auto shape = std::vector<int64_t>(static_cast<size_t>(fake.dim()), 1);
  shape[0] = fake.size(0);
  auto a = alphas.to(fake.scalar_type()).view(shape);
  return a * fake + (1 - a) * real;
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& fake, const torch::Tensor& real,
                               const torch::Tensor& alphas, double eta) {
  auto x_hat = interpolate(fake.detach(), real.detach(), alphas).requires_grad_(true);
  auto scores = critic(x_hat);
  auto grad = torch::autograd::grad({scores.sum()}, {x_hat}, {}, /*retain_graph=*/true, /*create_graph=*/true)[0];
  auto norms = grad.flatten(1).norm(2, 1);
  return eta * (norms - 1).square().mean();
}

torch::Tensor critic_loss(const torch::Tensor& fake_scores, const torch::Tensor& real_scores, const torch::Tensor& gp) {
  if (fake_scores.numel() == 0 || real_scores.numel() == 0) throw ParameterError("critic_loss: empty batch");
  if (fake_scores.numel() != real_scores.numel()) throw DimensionError("critic_loss: score vectors differ in length");
  return fake_scores.mean() - real_scores.mean() + gp;
}

torch::Tensor generator_loss_wgan(const torch::Tensor& fake_scores) {
  if (fake_scores.numel() == 0) throw ParameterError("generator_loss_wgan: empty batch");
  return -fake_scores.mean();
}

torch::Tensor l1_distance(const torch::Tensor& output, const torch::Tensor& label) {
  if (!output.sizes().equals(label.sizes())) throw DimensionError("l1_distance: output and label shapes differ");
  auto diff = output - label;
  auto abs_parts = diff.is_complex() ? torch::view_as_real(diff).abs().sum(-1) : diff.abs();
  const int64_t pixels = output.size(-1) * output.size(-2);
  return abs_parts.flatten(1).sum(1).div(static_cast<double>(pixels)).mean();
}

torch::Tensor hybrid_generator_loss(const torch::Tensor& fake_scores, const torch::Tensor& output,
                                    const torch::Tensor& label, double lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw ParameterError("hybrid loss requires lambda in [0, 1]");
  if (lambda == 1.0) return l1_distance(output, label);
  auto adversarial = generator_loss_wgan(fake_scores);
  if (lambda == 0.0) return adversarial;
  return (1 - lambda) * adversarial + lambda * l1_distance(output, label);
}

GanLosses egan_losses(const torch::Tensor& fake_scores, const torch::Tensor& real_scores) {
  namespace F = torch::nn::functional;
  auto bce = [](const torch::Tensor& logits, double target) {
    return F::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
  };
  return GanLosses{bce(real_scores, 1.0) + bce(fake_scores, 0.0), bce(fake_scores, 1.0)};
}

GanLosses lsgan_losses(const torch::Tensor& fake_scores, const torch::Tensor& real_scores) {
  return GanLosses{0.5 * (real_scores - 1).square().mean() + 0.5 * fake_scores.square().mean(),
                   0.5 * (fake_scores - 1).square().mean()};
}

}  // namespace wgmri
