#pragma once

// Ground-truth Wasserstein-1 distances on small problems, and the
// gradient-penalized critic estimate they are used to check.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace wgmri {

struct DiscreteMeasure {
  std::vector<std::vector<double>> atoms;  // points in R^k
  std::vector<double> weights;             // nonnegative, summing to 1

  static constexpr size_t kMaxAtoms = 512;

  size_t size() const { return atoms.size(); }
  size_t dim() const { return atoms.empty() ? 0 : atoms.front().size(); }
  // Throws ParameterError on bad weights or ragged atoms.
  void validate() const;

  static DiscreteMeasure uniform(std::vector<std::vector<double>> atoms);
  static DiscreteMeasure dirac(std::vector<double> point);
};

// Transportation LP min sum J_ij c_ij over couplings with marginals a and b,
// solved with a transportation simplex (MODI pricing over a spanning-tree
// basis). `cost` is row-major m x n. Returns the optimal objective.
double transport_lp(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& cost);

// W1 with the Euclidean ground metric via transport_lp.
double w1_lp(const DiscreteMeasure& p, const DiscreteMeasure& q);
// Integral of |F_p - F_q| for 1-D measures.
double w1_1d(const DiscreteMeasure& p, const DiscreteMeasure& q);
// Exact W1. 1-D measures use the CDF integral, cross-checked against the LP
// when the problem is small.
double w1_exact(const DiscreteMeasure& p, const DiscreteMeasure& q);

// W1 between N(mu1, sigma1^2) and N(mu2, sigma2^2). Equal sigmas return
// |mu1 - mu2|; otherwise the CDF difference is integrated adaptively.
double w1_gaussian_1d(double mu1, double sigma1, double mu2, double sigma2);

// Quantile discretization of a 1-D Gaussian with `atoms` equal weights.
DiscreteMeasure gaussian_quantiles(double mu, double sigma, size_t atoms);

// Draws n points as an [n, k] float64 tensor.
using PointSampler = std::function<torch::Tensor(int64_t n, std::mt19937_64& engine)>;

PointSampler gaussian_sampler(double mu, double sigma);
PointSampler measure_sampler(DiscreteMeasure measure);

struct CriticBudget {
  int64_t steps = 3000;
  int64_t batch = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
  // The two-sided penalty inflates the estimate by about W / (2 eta); 10
  // already overshoots by 15% at W = 3.
  double eta = 50.0;
  int64_t hidden = 64;
  int64_t eval_samples = 20000;
  uint64_t seed = 0;
};

// Trains a point critic with the gradient-penalized objective (p plays the
// label role, q the generated role) and returns mean D(p) - mean D(q) on
// fresh samples.
double critic_w1_estimate(const PointSampler& p, const PointSampler& q, int64_t dim, const CriticBudget& budget = {});

struct CalibrationCase {
  std::string name;
  PointSampler p;
  PointSampler q;
  int64_t dim = 1;
  double exact = 0;
  double lower_ratio = 0.7;  // estimate / exact must lie in [lower, upper]
  double upper_ratio = 1.1;
};

// One shifted Gaussian pair plus five discrete 4-atom cases.
std::vector<CalibrationCase> calibration_suite();

struct CalibrationRow {
  std::string name;
  double exact = 0;
  double estimate = 0;
  double relative_error = 0;
  bool pass = false;
};

std::vector<CalibrationRow> run_calibration(const std::vector<CalibrationCase>& cases, const CriticBudget& budget = {});

}  // namespace wgmri
