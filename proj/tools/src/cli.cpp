#include "wgmri_cli/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wgmri/errors.hpp"
#include "wgmri/metrics.hpp"
#include "wgmri/wasserstein.hpp"

#ifndef WGMRI_VERSION
#define WGMRI_VERSION "0.0.0"
#endif

namespace wgmri::cli {

using nlohmann::json;

const char* version() { return WGMRI_VERSION; }

namespace {

constexpr const char* kResolvedConfig = "resolved_config.json";
constexpr const char* kMetrics = "metrics.csv";
constexpr const char* kCheckpoint = "checkpoint.wgc";

template <class T>
void read_key(json& obj, const std::string& section, const char* key, T& target) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    target = it->get<T>();
  } catch (const json::exception&) {
    throw ParameterError("config: '" + section + key + "' has the wrong type");
  }
  obj.erase(it);
}

void reject_leftovers(const json& obj, const std::string& section) {
  if (!obj.empty()) throw ParameterError("config: unknown key '" + section + obj.begin().key() + "'");
}

json dataset_to_json(const DatasetConfig& d) {
  const auto& s = d.split;
  return json{{"inputs", s.inputs},
              {"labels", s.labels},
              {"regime", to_string(s.regime)},
              {"label_mode", to_string(s.label_mode)},
              {"acceleration", s.acceleration},
              {"coils", s.coils},
              {"height", s.height},
              {"width", s.width},
              {"calib_size", s.calib_size},
              {"noise_sigma", s.noise_sigma},
              {"heldout", d.heldout},
              {"archive", d.archive.string()}};
}

DatasetConfig dataset_from_json(json obj) {
  if (!obj.is_object()) throw ParameterError("config: 'dataset' must be an object");
  DatasetConfig d;
  auto& s = d.split;
  std::string regime = to_string(s.regime), mode = to_string(s.label_mode), archive;
  const std::string sec = "dataset.";
  read_key(obj, sec, "inputs", s.inputs);
  read_key(obj, sec, "labels", s.labels);
  read_key(obj, sec, "regime", regime);
  read_key(obj, sec, "label_mode", mode);
  read_key(obj, sec, "acceleration", s.acceleration);
  read_key(obj, sec, "coils", s.coils);
  read_key(obj, sec, "height", s.height);
  read_key(obj, sec, "width", s.width);
  read_key(obj, sec, "calib_size", s.calib_size);
  read_key(obj, sec, "noise_sigma", s.noise_sigma);
  read_key(obj, sec, "heldout", d.heldout);
  read_key(obj, sec, "archive", archive);
  if (obj.contains("seed")) throw ParameterError("config: 'dataset.seed' is not allowed; set the top-level seed");
  reject_leftovers(obj, sec);
  try {
    s.regime = regime_from_string(regime);
    s.label_mode = label_mode_from_string(mode);
  } catch (const ParameterError& e) {
    throw ParameterError(std::string("config: dataset: ") + e.what());
  }
  if (d.heldout < 0) throw ParameterError("config: 'dataset.heldout' must be >= 0");
  d.archive = archive;
  return d;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  auto trainer = json::parse(trainer_config_to_json(c.trainer));
  trainer.erase("seed");
  json j{{"seed", c.seed},
         {"output_dir", c.output_dir.string()},
         {"checkpoint_every", c.checkpoint_every},
         {"dataset", dataset_to_json(c.dataset)},
         {"trainer", trainer}};
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParameterError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParameterError("config: top level must be an object");
  RunConfig c;
  std::string out = c.output_dir.string();
  read_key(j, "", "seed", c.seed);
  read_key(j, "", "output_dir", out);
  read_key(j, "", "checkpoint_every", c.checkpoint_every);
  std::string tool_version;
  read_key(j, "", "tool_version", tool_version);
  c.output_dir = out;
  if (auto it = j.find("dataset"); it != j.end()) {
    c.dataset = dataset_from_json(*it);
    j.erase(it);
  }
  if (auto it = j.find("trainer"); it != j.end()) {
    if (it->is_object() && it->contains("seed")) {
      throw ParameterError("config: 'trainer.seed' is not allowed; set the top-level seed");
    }
    try {
      c.trainer = trainer_config_from_json(it->dump());
    } catch (const ParameterError& e) {
      throw ParameterError(std::string("in 'trainer': ") + e.what());
    }
    j.erase(it);
  }
  reject_leftovers(j, "");
  if (c.checkpoint_every < 0) throw ParameterError("config: 'checkpoint_every' must be >= 0");
  c.dataset.split.seed = c.seed;
  c.trainer.seed = c.seed;
  c.trainer.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::filesystem::path output_path(const std::filesystem::path& p) {
  if (p.is_absolute()) return p;
  const char* root = std::getenv("WGMRI_OUTPUT_ROOT");
  if (root && *root) return std::filesystem::path(root) / p;
  return p;
}

void write_panel(const std::filesystem::path& path, const torch::Tensor& input, const torch::Tensor& reconstruction,
                 const torch::Tensor& reference) {
  auto ref = reference.to(torch::kComplexDouble);
  auto tile = [&](const torch::Tensor& x) { return window_like(x.to(torch::kComplexDouble), ref).abs(); };
  auto strip = torch::cat({tile(input), tile(reconstruction), tile(ref)}, 1);
  auto bytes = (strip.clamp(0, 1) * 255).round().to(torch::kUInt8).contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write panel '" + path.string() + "'");
  out << "P5\n" << bytes.size(1) << ' ' << bytes.size(0) << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), bytes.numel());
}

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text << '\n';
}

DatasetSplit training_split(const RunConfig& c) {
  if (!c.dataset.archive.empty()) return load_split(c.dataset.archive);
  return build_split(c.dataset.split);
}

std::string resolved_json(const RunConfig& c) {
  auto j = json::parse(run_config_to_json(c));
  j["tool_version"] = version();
  return j.dump(2);
}

struct DatasetArgs {
  std::string config;
  std::string out;
  std::string heldout_out;
  std::optional<int64_t> inputs, labels, heldout, coils, height, width;
  std::optional<uint64_t> seed;
  std::optional<double> acceleration, noise_sigma;
  std::optional<std::string> regime, label_mode;
};

int cmd_dataset_make(const DatasetArgs& a, std::ostream& out) {
  RunConfig c = a.config.empty() ? RunConfig{} : load_run_config(a.config);
  auto& s = c.dataset.split;
  if (a.seed) c.seed = *a.seed;
  s.seed = c.seed;
  if (a.inputs) s.inputs = *a.inputs;
  if (a.labels) s.labels = *a.labels;
  if (a.heldout) c.dataset.heldout = *a.heldout;
  if (a.coils) s.coils = *a.coils;
  if (a.height) s.height = *a.height;
  if (a.width) s.width = *a.width;
  if (a.acceleration) s.acceleration = *a.acceleration;
  if (a.noise_sigma) s.noise_sigma = *a.noise_sigma;
  if (a.regime) s.regime = regime_from_string(*a.regime);
  if (a.label_mode) s.label_mode = label_mode_from_string(*a.label_mode);

  const auto path = output_path(a.out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto split = build_split(s);
  save_split(split, path);
  out << "wrote " << split.input_count() << " inputs and " << split.label_count() << " labels ("
      << to_string(s.regime) << ") to " << path.string() << '\n';
  if (!a.heldout_out.empty()) {
    const auto hpath = output_path(a.heldout_out);
    if (hpath.has_parent_path()) std::filesystem::create_directories(hpath.parent_path());
    auto held = build_heldout(s, c.dataset.heldout);
    save_split(held, hpath);
    out << "wrote " << held.input_count() << " held-out images to " << hpath.string() << '\n';
  }
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string output_dir;
  std::optional<int64_t> steps;
  std::optional<uint64_t> seed;
  bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  auto c = load_run_config(a.config);
  if (!a.output_dir.empty()) c.output_dir = a.output_dir;
  if (a.steps) c.trainer.total_gen_steps = *a.steps;
  if (a.seed) {
    c.seed = *a.seed;
    c.dataset.split.seed = *a.seed;
    c.trainer.seed = *a.seed;
  }
  c.trainer.validate();
  const auto dir = output_path(c.output_dir);
  std::filesystem::create_directories(dir);
  const bool existing = std::filesystem::exists(dir / kMetrics);
  if (existing && !a.resume) {
    throw ParameterError("'" + dir.string() + "' already holds a run; pass --resume or choose another output_dir");
  }

  auto split = training_split(c);
  DatasetSplit held;
  TrainOptions opts;
  if (c.dataset.heldout > 0) {
    held = build_heldout(c.dataset.split, c.dataset.heldout);
    opts.heldout = &held;
  }
  opts.metrics_csv = dir / kMetrics;
  opts.checkpoint_path = dir / kCheckpoint;
  opts.checkpoint_every = c.checkpoint_every;
  opts.on_row = [&](const MetricRow& r) {
    if (!r.eval_psnr) return;
    out << "step " << r.step + 1 << "  loss_d " << r.loss_d << "  loss_g " << r.loss_g << "  psnr "
        << *r.eval_psnr << "  ssim " << *r.eval_ssim << '\n';
  };

  TrainState state;
  if (existing) {
    state = load_checkpoint(dir / kCheckpoint);
    auto saved = state.config;
    saved.total_gen_steps = c.trainer.total_gen_steps;
    if (trainer_config_to_json(saved) != trainer_config_to_json(c.trainer)) {
      throw ParameterError("--resume: the checkpoint was trained with a different trainer configuration");
    }
    state.config.total_gen_steps = c.trainer.total_gen_steps;
    out << "resuming at step " << state.step << '\n';
  } else {
    write_text(dir / kResolvedConfig, resolved_json(c));
    state = make_train_state(c.trainer, split.label_mode);
  }
  train_until(state, split, c.trainer.total_gen_steps, opts);

  if (opts.heldout) {
    auto report = evaluate_generator(state.generator, held);
    report.write_csv(dir / "eval.csv");
    report.write_json(dir / "eval.json");
    out << "held-out mean psnr " << report.mean_psnr << " dB, ssim " << report.mean_ssim << '\n';
  }
  out << "run written to " << dir.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string checkpoint;
  std::string passthrough;
  std::string dataset;
  std::string out;
  int64_t panels = 3;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.passthrough.empty()) {
    throw ParameterError("eval needs exactly one of --checkpoint and --passthrough");
  }
  auto data = load_split(a.dataset);
  Reconstructor recon;
  TrainState state;
  if (!a.checkpoint.empty()) {
    state = load_checkpoint(a.checkpoint);
    state.generator->eval();
    recon = [&](const InputRecord& r) { return wgmri::reconstruct(state.generator, r); };
  } else if (a.passthrough == "ground-truth") {
    recon = [](const InputRecord& r) { return r.ground_truth; };
  } else if (a.passthrough == "zero-filled") {
    recon = [](const InputRecord& r) { return r.x_zf; };
  } else {
    throw ParameterError("unknown passthrough '" + a.passthrough + "'");
  }

  const auto dir = output_path(a.out);
  std::filesystem::create_directories(dir);
  auto report = evaluate_model(recon, data);
  report.write_csv(dir / "report.csv");
  report.write_json(dir / "report.json");
  const auto panels = std::min<int64_t>(a.panels, data.input_count());
  for (int64_t i = 0; i < panels; ++i) {
    const auto& rec = data.inputs[static_cast<size_t>(i)];
    torch::NoGradGuard no_grad;
    write_panel(dir / ("panel_" + std::to_string(i) + ".pgm"), rec.x_zf, recon(rec), rec.ground_truth);
  }
  out << "images " << report.count << "  mean psnr " << report.mean_psnr << " dB  mean ssim " << report.mean_ssim
      << '\n';
  return kOk;
}

struct OracleArgs {
  std::string out = "oracle_check.csv";
  std::optional<int64_t> steps;
  uint64_t seed = 0;
  double max_relative_error = 0.15;
};

int cmd_oracle_check(const OracleArgs& a, std::ostream& out) {
  CriticBudget budget;
  if (a.steps) budget.steps = *a.steps;
  budget.seed = a.seed;
  auto rows = run_calibration(calibration_suite(), budget);
  const auto path = output_path(a.out);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream csv(path);
  if (!csv) throw IoError("cannot write '" + path.string() + "'");
  csv << "case,exact_w1,critic_estimate,relative_error,pass\n";
  bool all = true;
  out << std::left << std::setw(22) << "case" << std::setw(12) << "exact" << std::setw(12) << "estimate"
      << "rel.err\n";
  for (const auto& r : rows) {
    const bool pass = r.pass && r.relative_error <= a.max_relative_error;
    all = all && pass;
    csv << r.name << ',' << std::setprecision(10) << r.exact << ',' << r.estimate << ',' << r.relative_error << ','
        << (pass ? "true" : "false") << '\n';
    out << std::setw(22) << r.name << std::setw(12) << std::setprecision(5) << r.exact << std::setw(12)
        << r.estimate << r.relative_error << (pass ? "" : "  FAIL") << '\n';
  }
  out << (all ? "all cases within bounds" : "calibration failed") << '\n';
  return all ? kOk : kFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Unpaired adversarial MRI reconstruction toolkit", "wgmri"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);

  DatasetArgs da;
  auto* dataset = app.add_subcommand("dataset", "Synthetic phantom datasets");
  dataset->require_subcommand(1);
  auto* make = dataset->add_subcommand("make", "Generate a training split archive");
  make->add_option("--config", da.config, "Run config; its dataset section and seed are used");
  make->add_option("--out", da.out, "Archive to write")->required();
  make->add_option("--heldout-out", da.heldout_out, "Also write a held-out evaluation archive here");
  make->add_option("--heldout", da.heldout, "Held-out image count");
  make->add_option("--inputs", da.inputs, "Input count M");
  make->add_option("--labels", da.labels, "Label count N");
  make->add_option("--regime", da.regime, "paired | partial | disjoint");
  make->add_option("--label-mode", da.label_mode, "complex | magnitude");
  make->add_option("--acceleration", da.acceleration, "Undersampling factor");
  make->add_option("--coils", da.coils, "Receive coil count");
  make->add_option("--height", da.height);
  make->add_option("--width", da.width);
  make->add_option("--noise-sigma", da.noise_sigma);
  make->add_option("--seed", da.seed);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a generator from a run config");
  train_cmd->add_option("--config", ta.config, "Run config (JSON)")->required();
  train_cmd->add_option("--output-dir", ta.output_dir, "Overrides output_dir");
  train_cmd->add_option("--steps", ta.steps, "Overrides trainer.total_gen_steps");
  train_cmd->add_option("--seed", ta.seed, "Overrides seed");
  train_cmd->add_flag("--resume", ta.resume, "Continue the run in output_dir from its checkpoint");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a model on a dataset archive");
  eval->add_option("--checkpoint", ea.checkpoint, "Trained checkpoint");
  eval->add_option("--passthrough", ea.passthrough, "ground-truth | zero-filled instead of a model");
  eval->add_option("--dataset", ea.dataset, "Dataset archive")->required();
  eval->add_option("--out", ea.out, "Report directory")->required();
  eval->add_option("--panels", ea.panels, "Comparison strips to write")->capture_default_str();

  OracleArgs oa;
  auto* oracle = app.add_subcommand("oracle-check", "Calibrate the critic against exact Wasserstein-1");
  oracle->add_option("--out", oa.out, "Calibration CSV")->capture_default_str();
  oracle->add_option("--steps", oa.steps, "Critic training steps per case");
  oracle->add_option("--seed", oa.seed)->capture_default_str();
  oracle->add_option("--max-relative-error", oa.max_relative_error)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (make->parsed()) return cmd_dataset_make(da, out);
    if (train_cmd->parsed()) return cmd_train(ta, out);
    if (eval->parsed()) return cmd_eval(ea, out);
    if (oracle->parsed()) return cmd_oracle_check(oa, out);
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace wgmri::cli
