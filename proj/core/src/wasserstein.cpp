#include "wgmri/wasserstein.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "wgmri/errors.hpp"
#include "wgmri/networks.hpp"
#include "wgmri/objectives.hpp"
#include "wgmri/rng.hpp"

namespace wgmri {

void DiscreteMeasure::validate() const {
  if (atoms.empty()) throw ParameterError("measure has no atoms");
  if (atoms.size() > kMaxAtoms) throw ParameterError("measure exceeds " + std::to_string(kMaxAtoms) + " atoms");
  if (weights.size() != atoms.size()) throw ParameterError("measure has " + std::to_string(weights.size()) +
                                                           " weights for " + std::to_string(atoms.size()) + " atoms");
  const auto k = atoms.front().size();
  if (k == 0) throw ParameterError("measure atoms must have dimension >= 1");
  double total = 0;
  for (size_t i = 0; i < atoms.size(); ++i) {
    if (atoms[i].size() != k) throw ParameterError("measure atoms have mixed dimensions");
    if (!(weights[i] >= 0) || !std::isfinite(weights[i])) throw ParameterError("measure weights must be nonnegative");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw ParameterError("measure weights sum to " + std::to_string(total) + ", not 1");
}

DiscreteMeasure DiscreteMeasure::uniform(std::vector<std::vector<double>> atoms) {
  DiscreteMeasure m;
  m.weights.assign(atoms.size(), 1.0 / static_cast<double>(atoms.size()));
  m.atoms = std::move(atoms);
  return m;
}

DiscreteMeasure DiscreteMeasure::dirac(std::vector<double> point) {
  return DiscreteMeasure{{std::move(point)}, {1.0}};
}

namespace {

struct Cell {
  int row;
  int col;
  double flow;
};

}  // namespace

double transport_lp(const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& cost) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  if (m == 0 || n == 0) throw ParameterError("transport_lp: empty marginal");
  if (cost.size() != static_cast<size_t>(m) * static_cast<size_t>(n)) throw DimensionError("transport_lp: cost is not m x n");
  auto c = [&](int i, int j) { return cost[static_cast<size_t>(i) * static_cast<size_t>(n) + static_cast<size_t>(j)]; };

  // Northwest-corner start: exactly m + n - 1 basic cells forming a tree.
  std::vector<Cell> basis;
  {
    std::vector<double> ra(a), rb(b);
    int i = 0, j = 0;
    while (true) {
      const double x = std::min(ra[static_cast<size_t>(i)], rb[static_cast<size_t>(j)]);
      basis.push_back({i, j, x});
      ra[static_cast<size_t>(i)] -= x;
      rb[static_cast<size_t>(j)] -= x;
      if (i == m - 1 && j == n - 1) break;
      if (j == n - 1 || (i < m - 1 && ra[static_cast<size_t>(i)] <= rb[static_cast<size_t>(j)])) ++i; else ++j;
    }
  }

  const int nodes = m + n;
  std::vector<double> pot(static_cast<size_t>(nodes));
  std::vector<int> parent_edge(static_cast<size_t>(nodes)), parent(static_cast<size_t>(nodes)), depth(static_cast<size_t>(nodes));
  std::vector<std::vector<int>> adj(static_cast<size_t>(nodes));
  double scale = 1.0;
  for (double v : cost) scale = std::max(scale, std::abs(v));
  const double tol = 1e-12 * scale;
  const long max_iter = 200L * (m + n) + 10000L;

  for (long iter = 0;; ++iter) {
    if (iter > max_iter) throw std::runtime_error("transport_lp: iteration limit reached");
    for (auto& lst : adj) lst.clear();
    for (size_t e = 0; e < basis.size(); ++e) {
      adj[static_cast<size_t>(basis[e].row)].push_back(static_cast<int>(e));
      adj[static_cast<size_t>(m + basis[e].col)].push_back(static_cast<int>(e));
    }
    // Potentials u_i (nodes < m) and v_j (nodes >= m) with u_i + v_j = c_ij on the tree.
    std::fill(parent.begin(), parent.end(), -2);
    std::deque<int> queue{0};
    parent[0] = -1;
    parent_edge[0] = -1;
    depth[0] = 0;
    pot[0] = 0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop_front();
      for (int e : adj[static_cast<size_t>(u)]) {
        const auto& cell = basis[static_cast<size_t>(e)];
        const int other = u < m ? m + cell.col : cell.row;
        if (parent[static_cast<size_t>(other)] != -2) continue;
        parent[static_cast<size_t>(other)] = u;
        parent_edge[static_cast<size_t>(other)] = e;
        depth[static_cast<size_t>(other)] = depth[static_cast<size_t>(u)] + 1;
        pot[static_cast<size_t>(other)] = c(cell.row, cell.col) - pot[static_cast<size_t>(u)];
        queue.push_back(other);
      }
    }

    int ei = -1, ej = -1;
    double best = -tol;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        const double r = c(i, j) - pot[static_cast<size_t>(i)] - pot[static_cast<size_t>(m + j)];
        if (r < best) {
          best = r;
          ei = i;
          ej = j;
        }
      }
    }
    if (ei < 0) break;

    // Tree path from column node ej to row node ei; edges alternate -, +, -, ...
    std::vector<int> from_col, from_row;
    int x = m + ej, y = ei;
    while (x != y) {
      if (depth[static_cast<size_t>(x)] >= depth[static_cast<size_t>(y)]) {
        from_col.push_back(parent_edge[static_cast<size_t>(x)]);
        x = parent[static_cast<size_t>(x)];
      } else {
        from_row.push_back(parent_edge[static_cast<size_t>(y)]);
        y = parent[static_cast<size_t>(y)];
      }
    }
    std::vector<int> path(from_col);
    path.insert(path.end(), from_row.rbegin(), from_row.rend());

    double theta = std::numeric_limits<double>::infinity();
    size_t leave = 0;
    for (size_t k = 0; k < path.size(); k += 2) {
      const double f = basis[static_cast<size_t>(path[k])].flow;
      if (f < theta) {
        theta = f;
        leave = k;
      }
    }
    for (size_t k = 0; k < path.size(); ++k) {
      auto& cell = basis[static_cast<size_t>(path[k])];
      cell.flow += (k % 2 == 0) ? -theta : theta;
    }
    basis[static_cast<size_t>(path[leave])] = Cell{ei, ej, theta};
  }

  double total = 0;
  for (const auto& cell : basis) total += cell.flow * c(cell.row, cell.col);
  return total;
}

namespace {

double euclid(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void check_pair(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  p.validate();
  q.validate();
  if (p.dim() != q.dim()) throw ParameterError("measures live in different dimensions");
}

}  // namespace

double w1_lp(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  check_pair(p, q);
  std::vector<double> cost;
  cost.reserve(p.size() * q.size());
  for (const auto& a : p.atoms)
    for (const auto& b : q.atoms) cost.push_back(euclid(a, b));
  return transport_lp(p.weights, q.weights, cost);
}

double w1_1d(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  check_pair(p, q);
  if (p.dim() != 1) throw ParameterError("w1_1d requires 1-D measures");
  struct Event {
    double x;
    double dp;
    double dq;
  };
  std::vector<Event> ev;
  for (size_t i = 0; i < p.size(); ++i) ev.push_back({p.atoms[i][0], p.weights[i], 0});
  for (size_t i = 0; i < q.size(); ++i) ev.push_back({q.atoms[i][0], 0, q.weights[i]});
  std::sort(ev.begin(), ev.end(), [](const Event& l, const Event& r) { return l.x < r.x; });
  double fp = 0, fq = 0, total = 0;
  for (size_t k = 0; k + 1 < ev.size(); ++k) {
    fp += ev[k].dp;
    fq += ev[k].dq;
    total += std::abs(fp - fq) * (ev[k + 1].x - ev[k].x);
  }
  return total;
}

double w1_exact(const DiscreteMeasure& p, const DiscreteMeasure& q) {
  check_pair(p, q);
  if (p.dim() != 1) return w1_lp(p, q);
  const double closed = w1_1d(p, q);
  if (p.size() * q.size() <= 4096) {
    const double lp = w1_lp(p, q);
    if (std::abs(lp - closed) > 1e-9 * std::max(1.0, closed)) {
      throw std::logic_error("w1_exact: 1-D closed form and LP disagree");
    }
  }
  return closed;
}

double w1_gaussian_1d(double mu1, double sigma1, double mu2, double sigma2) {
  if (!(sigma1 > 0) || !(sigma2 > 0)) throw ParameterError("w1_gaussian_1d: sigmas must be positive");
  if (sigma1 == sigma2) return std::abs(mu1 - mu2);
  auto cdf = [](double x, double mu, double s) { return 0.5 * std::erfc(-(x - mu) / (s * M_SQRT2)); };
  auto f = [&](double x) { return std::abs(cdf(x, mu1, sigma1) - cdf(x, mu2, sigma2)); };
  const double s = std::max(sigma1, sigma2);
  const double lo = std::min(mu1, mu2) - 12 * s, hi = std::max(mu1, mu2) + 12 * s;
  // Split at the CDF crossings so each panel is smooth.
  std::vector<double> knots{lo};
  const double cross = (mu2 * sigma1 - mu1 * sigma2) / (sigma1 - sigma2);
  if (cross > lo && cross < hi) knots.push_back(cross);
  knots.push_back(hi);
  double total = 0;
  for (size_t i = 0; i + 1 < knots.size(); ++i) {
    total += boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, knots[i], knots[i + 1], 15, 1e-10);
  }
  return total;
}

DiscreteMeasure gaussian_quantiles(double mu, double sigma, size_t atoms) {
  std::vector<std::vector<double>> pts;
  for (size_t i = 0; i < atoms; ++i) {
    const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(atoms);
    pts.push_back({mu + sigma * M_SQRT2 * boost::math::erf_inv(2 * u - 1)});
  }
  return DiscreteMeasure::uniform(std::move(pts));
}

PointSampler gaussian_sampler(double mu, double sigma) {
  return [mu, sigma](int64_t n, std::mt19937_64& engine) {
    std::normal_distribution<double> dist(mu, sigma);
    auto out = torch::empty({n, 1}, torch::kFloat64);
    auto* d = out.data_ptr<double>();
    for (int64_t i = 0; i < n; ++i) d[i] = dist(engine);
    return out;
  };
}

PointSampler measure_sampler(DiscreteMeasure measure) {
  measure.validate();
  return [m = std::move(measure)](int64_t n, std::mt19937_64& engine) {
    std::discrete_distribution<size_t> pick(m.weights.begin(), m.weights.end());
    const auto k = static_cast<int64_t>(m.dim());
    auto out = torch::empty({n, k}, torch::kFloat64);
    auto* d = out.data_ptr<double>();
    for (int64_t i = 0; i < n; ++i) {
      const auto& a = m.atoms[pick(engine)];
      std::copy(a.begin(), a.end(), d + i * k);
    }
    return out;
  };
}

double critic_w1_estimate(const PointSampler& p, const PointSampler& q, int64_t dim, const CriticBudget& budget) {
  if (dim < 1 || budget.steps < 1 || budget.batch < 1) throw ParameterError("critic_w1_estimate: invalid budget");
  torch::manual_seed(budget.seed);
  PointCritic critic(dim, budget.hidden);
  critic->to(torch::kFloat64);
  torch::optim::Adam opt(critic->parameters(),
                         torch::optim::AdamOptions(budget.learning_rate).betas({budget.beta1, budget.beta2}));
  auto engine = make_engine(derive_seed(budget.seed, SeedStream::training_step));
  auto fn = [&](const torch::Tensor& x) { return critic->forward(x); };

  for (int64_t step = 0; step < budget.steps; ++step) {
    auto real = p(budget.batch, engine);
    auto fake = q(budget.batch, engine);
    auto alphas = torch::empty({budget.batch}, torch::kFloat64);
    for (int64_t i = 0; i < budget.batch; ++i) alphas[i] = uniform01(engine);
    opt.zero_grad();
    auto gp = gradient_penalty(fn, fake, real, alphas, budget.eta);
    auto loss = critic_loss(critic->forward(fake), critic->forward(real), gp);
    if (!std::isfinite(loss.item<double>())) {
      throw TrainingError("critic_w1_estimate: non-finite loss at step " + std::to_string(step));
    }
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard no_grad;
  auto real = p(budget.eval_samples, engine);
  auto fake = q(budget.eval_samples, engine);
  return (critic->forward(real).mean() - critic->forward(fake).mean()).item<double>();
}

std::vector<CalibrationCase> calibration_suite() {
  std::vector<CalibrationCase> cases;
  cases.push_back({"gaussian_0_1_vs_3_1", gaussian_sampler(3.0, 1.0), gaussian_sampler(0.0, 1.0), 1,
                   w1_gaussian_1d(0.0, 1.0, 3.0, 1.0), 0.85, 1.15});

  auto discrete = [&](std::string name, DiscreteMeasure a, DiscreteMeasure b) {
    const double exact = w1_exact(a, b);
    const auto k = static_cast<int64_t>(a.dim());
    cases.push_back({std::move(name), measure_sampler(a), measure_sampler(b), k, exact, 0.7, 1.1});
  };
  discrete("line_shift", DiscreteMeasure::uniform({{0}, {1}, {2}, {3}}), DiscreteMeasure::uniform({{1.5}, {2.5}, {3.5}, {4.5}}));
  discrete("square_vs_diamond", DiscreteMeasure::uniform({{0, 0}, {2, 0}, {0, 2}, {2, 2}}),
           DiscreteMeasure::uniform({{1, -1}, {3, 1}, {-1, 1}, {1, 3}}));
  discrete("weighted_2d", DiscreteMeasure{{{0, 0}, {1, 0}, {0, 1}, {1, 1}}, {0.4, 0.3, 0.2, 0.1}},
           DiscreteMeasure{{{2, 2}, {3, 2}, {2, 3}, {3, 3}}, {0.1, 0.2, 0.3, 0.4}});
  discrete("spread_vs_cluster", DiscreteMeasure::uniform({{-2, 0}, {2, 0}, {0, -2}, {0, 2}}),
           DiscreteMeasure::uniform({{0.5, 0.5}, {-0.5, 0.5}, {0.5, -0.5}, {-0.5, -0.5}}));
  discrete("three_d", DiscreteMeasure::uniform({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}}),
           DiscreteMeasure::uniform({{2, 2, 2}, {3, 2, 2}, {2, 3, 2}, {2, 2, 3}}));
  return cases;
}

std::vector<CalibrationRow> run_calibration(const std::vector<CalibrationCase>& cases, const CriticBudget& budget) {
  std::vector<CalibrationRow> rows;
  for (const auto& c : cases) {
    CalibrationRow row;
    row.name = c.name;
    row.exact = c.exact;
    row.estimate = critic_w1_estimate(c.p, c.q, c.dim, budget);
    row.relative_error = std::abs(row.estimate - row.exact) / row.exact;
    const double ratio = row.estimate / row.exact;
    row.pass = ratio >= c.lower_ratio && ratio <= c.upper_ratio;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace wgmri
