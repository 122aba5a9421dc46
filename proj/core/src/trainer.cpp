#include "wgmri/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wgmri/archive.hpp"
#include "wgmri/errors.hpp"
#include "wgmri/rng.hpp"

namespace wgmri {

using nlohmann::json;

void TrainerConfig::validate() const {
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  // Zero is admitted so that a run can exercise the bookkeeping without moving parameters.
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) throw ParameterError("learning_rate must be >= 0");
  if (critic_learning_rate && (!(*critic_learning_rate >= 0) || !std::isfinite(*critic_learning_rate))) {
    throw ParameterError("critic_learning_rate must be >= 0");
  }
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) throw ParameterError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) throw ParameterError("adam_beta2 must lie in [0, 1)");
  if (total_gen_steps < 0) throw ParameterError("total_gen_steps must be >= 0");
  if (eval_every < 1) throw ParameterError("eval_every must be >= 1");
  objective.validate();
  if ((objective.hybrid || objective.family == ObjectiveFamily::l1_only) && !paired_batches) {
    throw ParameterError("the l1 term needs paired_batches = true");
  }
}

namespace {

std::string generator_kind_name(GeneratorKind k) { return k == GeneratorKind::plain ? "plain" : "unrolled"; }

GeneratorKind generator_kind_from(const std::string& s) {
  if (s == "plain") return GeneratorKind::plain;
  if (s == "unrolled") return GeneratorKind::unrolled;
  throw ParameterError("unknown generator kind '" + s + "'");
}

json to_json(const TrainerConfig& c) {
  const auto& o = c.objective;
  const auto& g = c.generator;
  const auto& d = c.critic;
  return json{
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"critic_learning_rate", c.critic_learning_rate ? json(*c.critic_learning_rate) : json(nullptr)},
      {"adam_beta1", c.adam_beta1},
      {"adam_beta2", c.adam_beta2},
      {"total_gen_steps", c.total_gen_steps},
      {"seed", c.seed},
      {"eval_every", c.eval_every},
      {"paired_batches", c.paired_batches},
      {"objective",
       {{"family", to_string(o.family)},
        {"eta", o.eta},
        {"hybrid", o.hybrid},
        {"critic_steps_per_gen_step", o.critic_steps_per_gen_step},
        {"lambda_schedule",
         {{"pure_l1_steps", o.lambda_schedule.pure_l1_steps},
          {"ramp_end_step", o.lambda_schedule.ramp_end_step},
          {"final_lambda", o.lambda_schedule.final_lambda}}}}},
      {"generator",
       {{"kind", generator_kind_name(g.kind)},
        {"residual_blocks", g.residual_blocks},
        {"tail_convs", g.tail_convs},
        {"unroll_iterations", g.unroll_iterations},
        {"feature_width", g.feature_width},
        {"mu_init", g.mu_init}}},
      {"critic",
       {{"input_channels", d.input_channels},
        {"base_features", d.base_features},
        {"strided_layers", d.strided_layers},
        {"tail_features", d.tail_features},
        {"leaky_slope", d.leaky_slope}}},
  };
}

// Reads the keys of `obj` into fields registered with `field`; anything
// unregistered is an error naming the full key path.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ParameterError("config: '" + path_ + "' must be an object");
  }

  template <typename T>
  Reader& field(const std::string& key, T& target) {
    known_.push_back(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return *this;
    try {
      target = it->get<T>();
    } catch (const json::exception&) {
      throw ParameterError("config: '" + name(key) + "' has the wrong type");
    }
    return *this;
  }

  template <typename T>
  Reader& field(const std::string& key, std::optional<T>& target) {
    auto it = obj_.find(key);
    if (it != obj_.end() && it->is_null()) {
      known_.push_back(key);
      target.reset();
      return *this;
    }
    T value{};
    field(key, value);
    if (it != obj_.end()) target = value;
    return *this;
  }

  template <typename F>
  Reader& object(const std::string& key, F&& fn) {
    known_.push_back(key);
    auto it = obj_.find(key);
    if (it != obj_.end()) fn(Reader(*it, name(key)));
    return *this;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (std::find(known_.begin(), known_.end(), it.key()) == known_.end()) {
        throw ParameterError("config: unknown key '" + name(it.key()) + "'");
      }
    }
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string> known_;
};

TrainerConfig from_json(const json& j) {
  TrainerConfig c;
  std::string family = to_string(c.objective.family), kind = generator_kind_name(c.generator.kind);
  Reader r(j, "");
  std::optional<double> critic_lr;
  r.field("batch_size", c.batch_size)
      .field("learning_rate", c.learning_rate)
      .field("critic_learning_rate", critic_lr)
      .field("adam_beta1", c.adam_beta1)
      .field("adam_beta2", c.adam_beta2)
      .field("total_gen_steps", c.total_gen_steps)
      .field("seed", c.seed)
      .field("eval_every", c.eval_every)
      .field("paired_batches", c.paired_batches)
      .object("objective",
              [&](Reader o) {
                o.field("family", family)
                    .field("eta", c.objective.eta)
                    .field("hybrid", c.objective.hybrid)
                    .field("critic_steps_per_gen_step", c.objective.critic_steps_per_gen_step)
                    .object("lambda_schedule",
                            [&](Reader s) {
                              s.field("pure_l1_steps", c.objective.lambda_schedule.pure_l1_steps)
                                  .field("ramp_end_step", c.objective.lambda_schedule.ramp_end_step)
                                  .field("final_lambda", c.objective.lambda_schedule.final_lambda)
                                  .finish();
                            })
                    .finish();
              })
      .object("generator",
              [&](Reader g) {
                g.field("kind", kind)
                    .field("residual_blocks", c.generator.residual_blocks)
                    .field("tail_convs", c.generator.tail_convs)
                    .field("unroll_iterations", c.generator.unroll_iterations)
                    .field("feature_width", c.generator.feature_width)
                    .field("mu_init", c.generator.mu_init)
                    .finish();
              })
      .object("critic",
              [&](Reader d) {
                d.field("input_channels", c.critic.input_channels)
                    .field("base_features", c.critic.base_features)
                    .field("strided_layers", c.critic.strided_layers)
                    .field("tail_features", c.critic.tail_features)
                    .field("leaky_slope", c.critic.leaky_slope)
                    .finish();
              })
      .finish();
  c.critic_learning_rate = critic_lr;
  c.objective.family = objective_family_from_string(family);
  c.generator.kind = generator_kind_from(kind);
  return c;
}

}  // namespace

std::string trainer_config_to_json(const TrainerConfig& config) { return to_json(config).dump(2); }

TrainerConfig trainer_config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: not valid JSON: ") + e.what());
  }
  return from_json(j);
}

Batch sample_unpaired_batch(const DatasetSplit& split, int64_t b, std::mt19937_64& engine, bool paired) {
  if (split.inputs.empty() || split.labels.empty()) throw ParameterError("cannot sample from an empty split");
  if (b < 1) throw ParameterError("batch size must be >= 1");
  if (paired && split.regime != Regime::paired) throw ParameterError("paired batches need the paired regime");
  const auto m = static_cast<uint64_t>(split.input_count());
  const auto n = static_cast<uint64_t>(split.label_count());

  Batch batch;
  batch.paired = paired;
  std::vector<torch::Tensor> x_zf, samples, masks, labels;
  for (int64_t i = 0; i < b; ++i) {
    const auto j = static_cast<int64_t>(engine() % m);
    const auto l = paired ? j : static_cast<int64_t>(engine() % n);
    batch.input_index.push_back(j);
    batch.label_index.push_back(l);
    const auto& rec = split.inputs[static_cast<size_t>(j)];
    x_zf.push_back(rec.x_zf);
    samples.push_back(rec.kspace.samples);
    masks.push_back(rec.kspace.mask.mask);
    labels.push_back(split.labels[static_cast<size_t>(l)]);
  }
  batch.x_zf = torch::stack(x_zf);
  batch.kspace.samples = torch::stack(samples);
  batch.kspace.mask = torch::stack(masks);
  batch.kspace.maps = split.inputs.front().kspace.coils.maps;
  batch.labels = torch::stack(labels);
  return batch;
}

torch::Tensor critic_input(const torch::Tensor& images, LabelMode mode) {
  if (mode == LabelMode::magnitude) return magnitude_view(images);
  return complex_to_channels(images);
}

TrainState make_train_state(const TrainerConfig& config, LabelMode label_mode) {
  config.validate();
  TrainState s;
  s.config = config;
  s.label_mode = label_mode;
  s.config.critic.input_channels = label_mode == LabelMode::complex ? 2 : 1;
  torch::manual_seed(derive_seed(config.seed, SeedStream::init));
  s.generator = Generator(s.config.generator);
  s.critic = Critic(s.config.critic);
  s.generator->train();
  s.critic->train();
  auto adam = [&](std::vector<torch::Tensor> params, double lr) {
    return std::make_unique<torch::optim::Adam>(params,
                                                torch::optim::AdamOptions(lr).betas({config.adam_beta1, config.adam_beta2}));
  };
  s.opt_g = adam(s.generator->parameters(), config.learning_rate);
  s.opt_d = adam(s.critic->parameters(), config.critic_learning_rate.value_or(config.learning_rate));
  return s;
}

namespace {

double grad_norm(const std::vector<torch::Tensor>& params) {
  double total = 0;
  for (const auto& p : params) {
    if (p.grad().defined()) total += p.grad().to(torch::kFloat64).square().sum().item<double>();
  }
  return std::sqrt(total);
}

std::string snapshot(const TrainState& s, const std::string& what, double loss, double gp, double gnorm) {
  std::ostringstream os;
  os << "non-finite " << what << " at generator step " << s.step << " (critic steps " << s.critic_steps
     << "): loss=" << loss << " gp=" << gp << " grad_norm=" << gnorm;
  return os.str();
}

// Restores module buffers (normalization statistics) on scope exit.
class BufferGuard {
 public:
  explicit BufferGuard(torch::nn::Module& m) : buffers_(m.buffers()) {
    for (const auto& b : buffers_) saved_.push_back(b.clone());
  }
  ~BufferGuard() {
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < buffers_.size(); ++i) buffers_[i].copy_(saved_[i]);
  }
  BufferGuard(const BufferGuard&) = delete;
  BufferGuard& operator=(const BufferGuard&) = delete;

 private:
  std::vector<torch::Tensor> buffers_;
  std::vector<torch::Tensor> saved_;
};

torch::Tensor generator_output_for_label_space(const torch::Tensor& out, LabelMode mode) {
  return mode == LabelMode::magnitude ? out.abs() : out;
}

}  // namespace

CriticStepResult critic_step(TrainState& s, const Batch& batch, std::mt19937_64& engine) {
  const auto& obj = s.config.objective;
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    BufferGuard keep(*s.generator);
    fake = s.generator->forward(batch.x_zf, batch.kspace);
  }
  auto fake_in = critic_input(fake, s.label_mode);
  auto real_in = critic_input(batch.labels, s.label_mode).to(fake_in.scalar_type());
  const auto b = fake_in.size(0);
  auto alphas = torch::empty({b}, torch::kFloat64);
  for (int64_t i = 0; i < b; ++i) alphas[i] = uniform01(engine);

  s.opt_d->zero_grad();
  auto fake_scores = s.critic->forward(fake_in);
  auto real_scores = s.critic->forward(real_in);
  s.critic_evaluations += 2;
  torch::Tensor loss, gp = torch::zeros({}, fake_scores.options());
  switch (obj.family) {
    case ObjectiveFamily::wgan_gp: {
      auto fn = [&](const torch::Tensor& x) { return s.critic->forward(x); };
      gp = gradient_penalty(fn, fake_in, real_in, alphas, obj.eta);
      ++s.critic_evaluations;
      loss = critic_loss(fake_scores, real_scores, gp);
      break;
    }
    case ObjectiveFamily::egan: loss = egan_losses(fake_scores, real_scores).critic; break;
    case ObjectiveFamily::lsgan: loss = lsgan_losses(fake_scores, real_scores).critic; break;
    case ObjectiveFamily::l1_only: throw ParameterError("critic_step called for the l1_only objective");
  }
  loss.backward();
  CriticStepResult r;
  r.loss = loss.item<double>();
  r.gp = gp.item<double>();
  r.score_gap = (real_scores.mean() - fake_scores.mean()).item<double>();
  const double gnorm = grad_norm(s.critic->parameters());
  if (!std::isfinite(r.loss) || !std::isfinite(r.score_gap) || !std::isfinite(gnorm)) {
    throw TrainingError(snapshot(s, "critic loss", r.loss, r.gp, gnorm));
  }
  s.opt_d->step();
  ++s.critic_steps;
  return r;
}

GeneratorStepResult generator_step(TrainState& s, const Batch& batch) {
  const auto& obj = s.config.objective;
  const double lambda = l1_weight(obj, s.step);
  s.opt_g->zero_grad();
  auto out = s.generator->forward(batch.x_zf, batch.kspace);
  auto l1_term = [&] {
    if (!batch.paired) throw ParameterError("the l1 term needs a paired batch");
    return l1_distance(generator_output_for_label_space(out, s.label_mode), batch.labels.to(out.device()));
  };

  torch::Tensor loss;
  if (lambda == 1.0) {
    loss = l1_term();
  } else {
    auto scores = s.critic->forward(critic_input(out, s.label_mode));
    ++s.critic_evaluations;
    switch (obj.family) {
      case ObjectiveFamily::wgan_gp:
        loss = lambda > 0 ? hybrid_generator_loss(scores, generator_output_for_label_space(out, s.label_mode),
                                                  batch.labels, lambda)
                          : generator_loss_wgan(scores);
        break;
      case ObjectiveFamily::egan:
      case ObjectiveFamily::lsgan: {
        auto adv = obj.family == ObjectiveFamily::egan ? egan_losses(scores, scores).generator
                                                       : lsgan_losses(scores, scores).generator;
        loss = lambda > 0 ? (1 - lambda) * adv + lambda * l1_term() : adv;
        break;
      }
      case ObjectiveFamily::l1_only: loss = l1_term(); break;
    }
  }
  loss.backward();
  GeneratorStepResult r;
  r.loss = loss.item<double>();
  r.lambda = lambda;
  const double gnorm = grad_norm(s.generator->parameters());
  if (!std::isfinite(r.loss) || !std::isfinite(gnorm)) throw TrainingError(snapshot(s, "generator loss", r.loss, 0, gnorm));
  s.opt_g->step();
  return r;
}

torch::Tensor reconstruct(Generator& generator, const InputRecord& record) {
  KSpaceBatch k{record.kspace.samples.unsqueeze(0), record.kspace.mask.mask.unsqueeze(0), record.kspace.coils.maps};
  return generator->forward(record.x_zf.unsqueeze(0), k).squeeze(0);
}

EvalReport evaluate_generator(Generator& generator, const DatasetSplit& heldout) {
  const bool was_training = generator->is_training();
  generator->eval();
  auto report = evaluate_model([&](const InputRecord& r) { return reconstruct(generator, r); }, heldout);
  generator->train(was_training);
  return report;
}

namespace {

std::string cell(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string cell(const std::optional<double>& v) { return v ? cell(*v) : std::string(); }

}  // namespace

MetricLog::MetricLog(const std::filesystem::path& path) : path_(path) {
  bool has_header = false;
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    std::string first;
    has_header = std::getline(in, first) && first == kHeader;
  }
  out_ = std::make_unique<std::ofstream>(path, has_header ? std::ios::app : std::ios::trunc);
  if (!*out_) throw IoError("cannot open metric log '" + path.string() + "'");
  if (!has_header) *out_ << kHeader << '\n' << std::flush;
}

void MetricLog::write(const MetricRow& r) {
  *out_ << r.step << ',' << cell(r.lambda) << ',' << cell(r.loss_d) << ',' << cell(r.loss_g) << ',' << cell(r.gp) << ','
        << cell(r.eval_psnr) << ',' << cell(r.eval_ssim) << '\n'
        << std::flush;
}

std::vector<MetricRow> read_metric_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metric log '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != MetricLog::kHeader) throw IoError("metric log '" + path.string() + "' has a bad header");
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    while (f.size() < 7) f.emplace_back();
    MetricRow r;
    try {
      r.step = std::stoll(f[0]);
      r.lambda = std::stod(f[1]);
      r.loss_d = std::stod(f[2]);
      r.loss_g = std::stod(f[3]);
      r.gp = std::stod(f[4]);
      if (!f[5].empty()) r.eval_psnr = std::stod(f[5]);
      if (!f[6].empty()) r.eval_ssim = std::stod(f[6]);
    } catch (const std::exception&) {
      throw IoError("metric log '" + path.string() + "' has a malformed row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

void train_until(TrainState& s, const DatasetSplit& split, int64_t until_step, const TrainOptions& options) {
  const auto& cfg = s.config;
  std::unique_ptr<MetricLog> log;
  if (!options.metrics_csv.empty()) log = std::make_unique<MetricLog>(options.metrics_csv);

  for (int64_t t = s.step; t < until_step; ++t) {
    auto engine = make_engine(derive_seed(cfg.seed, SeedStream::training_step, static_cast<uint64_t>(t)));
    MetricRow row;
    row.step = t;
    row.lambda = l1_weight(cfg.objective, t);
    if (cfg.objective.adversarial()) {
      for (int r = 0; r < cfg.objective.critic_steps_per_gen_step; ++r) {
        auto batch = sample_unpaired_batch(split, cfg.batch_size, engine, cfg.paired_batches);
        auto cr = critic_step(s, batch, engine);
        row.loss_d = cr.loss;
        row.gp = cr.gp;
      }
    }
    auto batch = sample_unpaired_batch(split, cfg.batch_size, engine, cfg.paired_batches);
    row.loss_g = generator_step(s, batch).loss;
    s.step = t + 1;

    if (options.heldout && ((t + 1) % cfg.eval_every == 0 || t + 1 == until_step)) {
      auto report = evaluate_generator(s.generator, *options.heldout);
      row.eval_psnr = report.mean_psnr;
      row.eval_ssim = report.mean_ssim;
    }
    s.history.push_back(row);
    if (log) log->write(row);
    if (options.on_row) options.on_row(row);
    if (!options.checkpoint_path.empty() && options.checkpoint_every > 0 && s.step % options.checkpoint_every == 0) {
      save_checkpoint(s, options.checkpoint_path);
    }
  }
  if (!options.checkpoint_path.empty()) save_checkpoint(s, options.checkpoint_path);
}

TrainState train(const TrainerConfig& config, const DatasetSplit& split, const TrainOptions& options) {
  auto state = make_train_state(config, split.label_mode);
  train_until(state, split, config.total_gen_steps, options);
  return state;
}

namespace {

void put_module(ArrayArchive& ar, const std::string& prefix, const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters()) ar.put(prefix + "/param/" + p.key(), p.value());
  for (const auto& b : m.named_buffers()) ar.put(prefix + "/buffer/" + b.key(), b.value());
}

void put_optimizer(ArrayArchive& ar, json& meta, const std::string& prefix, torch::optim::Adam& opt) {
  json steps = json::object();
  const auto& params = opt.param_groups().at(0).params();
  for (size_t i = 0; i < params.size(); ++i) {
    auto it = opt.state().find(params[i].unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
    ar.put(prefix + "/" + std::to_string(i) + "/exp_avg", st.exp_avg());
    ar.put(prefix + "/" + std::to_string(i) + "/exp_avg_sq", st.exp_avg_sq());
    steps[std::to_string(i)] = st.step();
  }
  meta[prefix + "_steps"] = steps;
}

void copy_checked(const ArrayArchive& ar, const std::string& name, torch::Tensor& target) {
  const auto& src = ar.get(name);
  if (!src.sizes().equals(target.sizes())) {
    std::ostringstream os;
    os << "checkpoint array '" << name << "' has shape " << src.sizes() << " but the model expects " << target.sizes();
    throw DimensionError(os.str());
  }
  torch::NoGradGuard no_grad;
  target.copy_(src);
}

void load_module(const ArrayArchive& ar, const std::string& prefix, torch::nn::Module& m) {
  for (auto& p : m.named_parameters()) copy_checked(ar, prefix + "/param/" + p.key(), p.value());
  for (auto& b : m.named_buffers()) copy_checked(ar, prefix + "/buffer/" + b.key(), b.value());
}

void load_optimizer(const ArrayArchive& ar, const json& meta, const std::string& prefix, torch::optim::Adam& opt) {
  opt.state().clear();
  const auto& params = opt.param_groups().at(0).params();
  const auto& steps = meta.at(prefix + "_steps");
  for (auto it = steps.begin(); it != steps.end(); ++it) {
    const auto i = std::stoul(it.key());
    if (i >= params.size()) throw DimensionError("checkpoint optimizer state '" + prefix + "/" + it.key() + "' has no parameter");
    auto st = std::make_unique<torch::optim::AdamParamState>();
    st->step(it.value().get<int64_t>());
    auto avg = torch::zeros_like(params[i]);
    auto avg_sq = torch::zeros_like(params[i]);
    copy_checked(ar, prefix + "/" + it.key() + "/exp_avg", avg);
    copy_checked(ar, prefix + "/" + it.key() + "/exp_avg_sq", avg_sq);
    st->exp_avg(avg);
    st->exp_avg_sq(avg_sq);
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
  }
}

json history_to_json(const std::vector<MetricRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"step", r.step}, {"lambda", r.lambda}, {"loss_d", r.loss_d}, {"loss_g", r.loss_g}, {"gp", r.gp}};
    if (r.eval_psnr) j["eval_psnr"] = std::isinf(*r.eval_psnr) ? json("inf") : json(*r.eval_psnr);
    if (r.eval_ssim) j["eval_ssim"] = *r.eval_ssim;
    out.push_back(j);
  }
  return out;
}

std::vector<MetricRow> history_from_json(const json& j) {
  std::vector<MetricRow> rows;
  for (const auto& e : j) {
    MetricRow r;
    r.step = e.at("step").get<int64_t>();
    r.lambda = e.at("lambda").get<double>();
    r.loss_d = e.at("loss_d").get<double>();
    r.loss_g = e.at("loss_g").get<double>();
    r.gp = e.at("gp").get<double>();
    if (e.contains("eval_psnr")) {
      const auto& v = e.at("eval_psnr");
      r.eval_psnr = v.is_string() ? std::numeric_limits<double>::infinity() : v.get<double>();
    }
    if (e.contains("eval_ssim")) r.eval_ssim = e.at("eval_ssim").get<double>();
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

void save_checkpoint(const TrainState& s, const std::filesystem::path& path) {
  ArrayArchive ar;
  json meta;
  meta["kind"] = "checkpoint";
  meta["step"] = s.step;
  meta["critic_steps"] = s.critic_steps;
  meta["critic_evaluations"] = s.critic_evaluations;
  meta["label_mode"] = to_string(s.label_mode);
  meta["config"] = to_json(s.config);
  meta["history"] = history_to_json(s.history);
  put_module(ar, "generator", *s.generator);
  put_module(ar, "critic", *s.critic);
  put_optimizer(ar, meta, "opt_g", *s.opt_g);
  put_optimizer(ar, meta, "opt_d", *s.opt_d);
  ar.set_metadata(meta.dump());
  // Write-then-rename keeps the previous checkpoint intact if writing fails.
  auto tmp = path;
  tmp += ".tmp";
  ar.save(tmp);
  std::filesystem::rename(tmp, path);
}

void restore_checkpoint(TrainState& s, const std::filesystem::path& path) {
  auto ar = ArrayArchive::load(path);
  try {
    auto meta = json::parse(ar.metadata());
    if (meta.value("kind", "") != "checkpoint") throw IoError("'" + path.string() + "' is not a checkpoint");
    load_module(ar, "generator", *s.generator);
    load_module(ar, "critic", *s.critic);
    load_optimizer(ar, meta, "opt_g", *s.opt_g);
    load_optimizer(ar, meta, "opt_d", *s.opt_d);
    s.step = meta.at("step").get<int64_t>();
    s.critic_steps = meta.at("critic_steps").get<int64_t>();
    s.critic_evaluations = meta.at("critic_evaluations").get<int64_t>();
    s.history = history_from_json(meta.at("history"));
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has corrupt metadata: " + e.what());
  }
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  auto ar = ArrayArchive::load(path);
  TrainerConfig config;
  LabelMode mode = LabelMode::complex;
  try {
    auto meta = json::parse(ar.metadata());
    if (meta.value("kind", "") != "checkpoint") throw IoError("'" + path.string() + "' is not a checkpoint");
    config = from_json(meta.at("config"));
    mode = label_mode_from_string(meta.at("label_mode").get<std::string>());
  } catch (const json::exception& e) {
    throw IoError("checkpoint '" + path.string() + "' has corrupt metadata: " + e.what());
  }
  auto state = make_train_state(config, mode);
  restore_checkpoint(state, path);
  return state;
}

}  // namespace wgmri
