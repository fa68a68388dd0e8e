#include "aloe/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"

#include "aloe/checkpoint.hpp"
#include "aloe/datasets.hpp"
#include "aloe/evaluation.hpp"
#include "aloe/oracles.hpp"
#include "aloe/trainers.hpp"

namespace aloe::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value configuration: defaults, then an optional config file, then
// command-line flags, each layer overriding the previous one. Unknown keys
// are rejected everywhere.
class Config {
 public:
  void define(const std::string& key, const std::string& default_value) {
    values_[key] = default_value;
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) {
    if (!has(key)) throw UsageError("unknown configuration key: " + key);
    values_[key] = value;
  }
  void load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) {
      const size_t comment = line.find('#');
      if (comment != std::string::npos) line = line.substr(0, comment);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const size_t eq = line.find('=');
      if (eq == std::string::npos) throw UsageError("config line is not key=value: " + line);
      set(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown configuration key: " + key);
    return it->second;
  }
  int64_t integer(const std::string& key) const {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(str(key), &pos);
      if (pos != str(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("configuration key " + key + " wants an integer, got '" + str(key) + "'");
    }
  }
  uint64_t unsigned_integer(const std::string& key) const {
    try {
      size_t pos = 0;
      const uint64_t v = std::stoull(str(key), &pos);
      if (pos != str(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("configuration key " + key + " wants an unsigned integer");
    }
  }
  double real(const std::string& key) const {
    try {
      size_t pos = 0;
      const double v = std::stod(str(key), &pos);
      if (pos != str(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw UsageError("configuration key " + key + " wants a real number");
    }
  }
  bool onoff(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "on") return true;
    if (v == "off") return false;
    throw UsageError("configuration key " + key + " wants on|off");
  }
  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw UsageError("configuration key " + key + " wants a comma-separated integer list");
      }
    }
    if (out.empty()) throw UsageError("configuration key " + key + " must not be empty");
    return out;
  }

  void write_echo(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& [k, v] : values_) out << k << "=" << v << "\n";
  }

  const std::map<std::string, std::string>& all() const { return values_; }

 private:
  std::map<std::string, std::string> values_;  // ordered, so echoes are sorted
};

// Registers one --key flag per configuration key on a CLI11 subcommand and
// resolves the layering after parsing.
class ConfigBinding {
 public:
  ConfigBinding(CLI::App* app, Config& config) : config_(config) {
    app->add_option("--config", config_path_, "key=value configuration file");
    for (const auto& [key, value] : config.all()) {
      holders_[key] = value;
      options_[key] = app->add_option("--" + key, holders_[key]);
    }
  }
  void resolve() {
    if (!config_path_.empty()) config_.load_file(config_path_);
    for (const auto& [key, opt] : options_)
      if (opt->count() > 0) config_.set(key, holders_[key]);
  }

 private:
  Config& config_;
  std::string config_path_;
  std::map<std::string, std::string> holders_;
  std::map<std::string, CLI::Option*> options_;
};

void define_common(Config& c) {
  c.define("seed", "0");
  c.define("threads", "1");
  c.define("codec_lo", "-5");
  c.define("codec_hi", "5");
}

void define_eval(Config& c) {
  c.define("eval_samples", "4000");
  c.define("eval_sweeps", "20");
  c.define("heldout", "4000");
}

void define_train(Config& c) {
  define_common(c);
  define_eval(c);
  c.define("method", "aloe");
  c.define("data", "");
  c.define("out", "");
  c.define("steps", "2000");
  c.define("batch_size", "128");
  c.define("f_lr", "0.001");
  c.define("q_lr", "0.001");
  c.define("q0", "autoregressive");
  c.define("editor", "on");
  c.define("T", "16");
  c.define("n_snis", "5");
  c.define("n_power_iter", "1");
  c.define("q_batch", "32");
  c.define("proposal", "inverse");
  c.define("geo_p", "0.8");
  c.define("gibbs_sweeps", "1");
  c.define("pcd_sweeps", "10");
  c.define("restart_prob", "0.1");
  c.define("buffer_capacity", "0");
  c.define("ade_lr_ratio", "1");
  c.define("ade_update_ratio", "1:1");
  c.define("ade_baseline_decay", "0.99");
  c.define("d", "32");
  c.define("K", "2");
  c.define("f_hidden", "256,256,256");
  c.define("editor_hidden", "512,512");
  c.define("stop_hidden", "512,512");
  c.define("q0_embed_hidden", "512,512");
  c.define("q0_embed_dim", "256");
  c.define("q0_head_hidden", "512");
  c.define("checkpoint_every", "0");
  c.define("metrics_every", "10");
  c.define("nll_every", "0");
  c.define("nll_is", "2000");
  c.define("nll_points", "512");
  c.define("grad_variance_every", "0");
}

GrayCodec codec_from(const Config& c) {
  GrayCodec codec;
  codec.lo = c.real("codec_lo");
  codec.hi = c.real("codec_hi");
  codec.validate();
  return codec;
}

void ensure_outdir(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
}

std::string artifact(const std::string& out, const std::string& name) {
  return (fs::path(out) / name).string();
}

void write_samples_csv(const std::string& path, std::span<const BitVector> xs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& x : xs) {
    for (int i = 0; i < x.d; ++i) out << (i ? "," : "") << int(x.values[size_t(i)]);
    out << "\n";
  }
}

// A deterministic metrics sink; timing goes to a separate sidecar because
// wall-clock values are not reproducible.
struct MetricsWriter {
  std::ofstream out;
  explicit MetricsWriter(const std::string& path) : out(path) {
    if (!out) throw std::runtime_error("cannot write " + path);
  }
  void write(const ordered_json& record) { out << record.dump() << "\n"; }
};

struct TrainArtifacts {
  double final_mmd_x1e3 = 0.0;
};

double eval_mmd_x1e3(const EnergyModel& f, Dataset2D dataset, const GrayCodec& codec,
                     const Config& c, Rng& root) {
  EvalProtocol proto;
  proto.n_samples = int(c.integer("eval_samples"));
  proto.sweeps = int(c.integer("eval_sweeps"));
  Rng eval_rng = root.split(0xe7a1);
  const std::vector<BitVector> model_samples =
      sample_model_gibbs(f, proto, eval_rng, int(c.integer("threads")));
  Rng heldout_rng = root.split(0x4e1d);
  const std::vector<BitVector> truth =
      sample_encoded(dataset, int(c.integer("heldout")), codec, heldout_rng);
  return 1e3 * mmd_hamming(model_samples, truth, MmdEstimator::unbiased);
}

TrainArtifacts run_train(const Config& c) {
  const std::string method = c.str("method");
  if (method != "aloe" && method != "pcd" && method != "ade")
    throw UsageError("unknown method: " + method + " (want aloe|pcd|ade)");
  const Dataset2D dataset = [&] {
    try {
      return dataset_from_name(c.str("data"));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }();
  const std::string out = c.str("out");
  ensure_outdir(out);
  c.write_echo(artifact(out, "config.echo"));

  const GrayCodec codec = codec_from(c);
  const int d = int(c.integer("d"));
  const int K = int(c.integer("K"));
  const int threads = int(c.integer("threads"));
  const int batch = int(c.integer("batch_size"));
  const int64_t steps = c.integer("steps");
  if (d != 32 && c.str("data") != "")
    ; // non-default d still trains; the codec always emits 32 bits
  if (batch < 1 || steps < 0) throw UsageError("batch_size >= 1 and steps >= 0 required");

  Rng root(c.unsigned_integer("seed"));
  Rng init_rng = root.split(0x1417);

  Rng f_rng = init_rng.split(0);
  EnergyModel f = EnergyModel::make(d, K, c.int_list("f_hidden"), f_rng);
  AdamConfig f_adam;
  f_adam.learning_rate = c.real("f_lr");
  OptimizerState f_opt(param_count(f.spec), f_adam);

  MetricsWriter metrics(artifact(out, "metrics.jsonl"));
  std::ofstream timing(artifact(out, "timing.log"));
  const auto t_start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count(); };

  // Fixed evaluation points for the likelihood trace.
  std::vector<BitVector> nll_points;
  if (c.integer("nll_every") > 0) {
    Rng nll_rng = root.split(0x4e2);
    nll_points = sample_encoded(dataset, int(c.integer("nll_points")), codec, nll_rng);
  }

  auto data_batch = [&](int64_t step) {
    Rng rng = root.split(0xda7a, uint64_t(step));
    return sample_encoded(dataset, batch, codec, rng);
  };

  const int64_t metrics_every = std::max<int64_t>(1, c.integer("metrics_every"));
  const int64_t nll_every = c.integer("nll_every");
  const int64_t variance_every = c.integer("grad_variance_every");
  const int64_t checkpoint_every = c.integer("checkpoint_every");

  Checkpoint ckpt;
  ckpt.set_meta("method", method);
  ckpt.set_meta("dataset", dataset_name(dataset));
  ckpt.set_meta("codec_lo", c.str("codec_lo"));
  ckpt.set_meta("codec_hi", c.str("codec_hi"));

  auto write_checkpoint = [&](const std::string& name, auto&& add_sampler_parts) {
    Checkpoint snap = ckpt;
    add_energy_model(snap, f);
    add_sampler_parts(snap);
    save_checkpoint(artifact(out, name), snap);
  };

  auto maybe_nll = [&](int64_t step, ordered_json& record, const InitSampler& q0) {
    if (nll_every > 0 && (step % nll_every == 0 || step + 1 == steps)) {
      Rng nll_rng = root.split(0x4e3, uint64_t(step));
      const NllEstimate est =
          nll_importance_estimate(f, q0, nll_points, int(c.integer("nll_is")), nll_rng, threads);
      record["nll"] = est.nll;
      record["log_z_estimate"] = est.log_z;
    }
  };

  if (method == "aloe") {
    SamplerParams q;
    Rng q_rng = init_rng.split(1);
    if (c.str("q0") == "factorized")
      q.q0 = make_factorized_init(d, K);
    else if (c.str("q0") == "autoregressive")
      q.q0 = make_autoregressive_init(d, K, q_rng, c.int_list("q0_embed_hidden"),
                                      int(c.integer("q0_embed_dim")), c.int_list("q0_head_hidden"));
    else
      throw UsageError("unknown q0 variant: " + c.str("q0"));
    if (c.onoff("editor")) {
      Rng e_rng = init_rng.split(2);
      q.editor = make_editor(d, K, e_rng, c.int_list("editor_hidden"));
      Rng s_rng = init_rng.split(3);
      q.stop = make_stop_policy(d, K, s_rng, c.int_list("stop_hidden"));
    }
    q.max_steps = int(c.integer("T"));
    q.validate();

    AdamConfig q_adam;
    q_adam.learning_rate = c.real("q_lr");
    SamplerOptimizer q_opt = SamplerOptimizer::make(q, q_adam);

    AloeConfig cfg;
    cfg.batch_size = batch;
    cfg.f_learning_rate = f_adam.learning_rate;
    cfg.q_learning_rate = q_adam.learning_rate;
    cfg.n_power_iter = int(c.integer("n_power_iter"));
    cfg.n_snis_samples = int(c.integer("n_snis"));
    cfg.proposal = c.str("proposal") == "edit_distance" ? ProposalKind::edit_distance
                                                        : ProposalKind::inverse;
    if (c.str("proposal") != "inverse" && c.str("proposal") != "edit_distance")
      throw UsageError("unknown proposal: " + c.str("proposal"));
    cfg.geo_p = c.real("geo_p");
    cfg.gibbs_sweeps = int(c.integer("gibbs_sweeps"));
    cfg.total_steps = steps;
    cfg.rng_seed = c.unsigned_integer("seed");
    cfg.q_batch_size = int(c.integer("q_batch"));
    cfg.threads = threads;

    for (int64_t step = 0; step < steps; ++step) {
      cfg.compute_grad_variance = variance_every > 0 && step % variance_every == 0;
      Rng step_rng = root.split(0x57e9, uint64_t(step));
      const AloeStepMetrics m = aloe_step(f, f_opt, q, q_opt, data_batch(step), cfg, step_rng);
      if (step % metrics_every == 0 || step + 1 == steps) {
        ordered_json record;
        record["step"] = step;
        record["f_grad_norm"] = m.f.f_grad_norm;
        record["pos_energy_mean"] = m.f.positive_energy_mean;
        record["neg_energy_mean"] = m.f.negative_energy_mean;
        record["q_grad_norm"] = m.q.q_grad_norm;
        record["snis_ess_mean"] = m.q.snis_ess_mean;
        if (m.q.q_grad_variance >= 0.0) record["q_grad_variance"] = m.q.q_grad_variance;
        record["proposal_rejected"] = m.q.proposal_rejected;
        record["proposal_dropped"] = m.q.proposal_dropped;
        maybe_nll(step, record, q.q0);
        metrics.write(record);
        timing << "step " << step << " elapsed_s " << elapsed() << "\n" << std::flush;
      }
      if (checkpoint_every > 0 && step > 0 && step % checkpoint_every == 0)
        write_checkpoint("checkpoint_" + std::to_string(step) + ".ckpt",
                         [&](Checkpoint& s) { add_sampler(s, q); });
    }
    write_checkpoint("checkpoint.ckpt", [&](Checkpoint& s) { add_sampler(s, q); });
  } else if (method == "pcd") {
    PcdConfig cfg;
    cfg.batch_size = batch;
    cfg.f_learning_rate = f_adam.learning_rate;
    cfg.k_sweeps = int(c.integer("pcd_sweeps"));
    cfg.total_steps = steps;
    cfg.rng_seed = c.unsigned_integer("seed");
    cfg.threads = threads;
    const int capacity = c.integer("buffer_capacity") > 0 ? int(c.integer("buffer_capacity"))
                                                          : 10 * batch;
    Rng buf_rng = root.split(0xbf);
    ReplayBuffer buffer =
        ReplayBuffer::initialized(capacity, d, K, c.real("restart_prob"), buf_rng);

    for (int64_t step = 0; step < steps; ++step) {
      Rng step_rng = root.split(0x57e9, uint64_t(step));
      const ContrastiveMetrics m = pcd_step(f, f_opt, buffer, data_batch(step), cfg, step_rng);
      if (step % metrics_every == 0 || step + 1 == steps) {
        ordered_json record;
        record["step"] = step;
        record["f_grad_norm"] = m.f_grad_norm;
        record["pos_energy_mean"] = m.positive_energy_mean;
        record["neg_energy_mean"] = m.negative_energy_mean;
        metrics.write(record);
        timing << "step " << step << " elapsed_s " << elapsed() << "\n" << std::flush;
      }
      if (checkpoint_every > 0 && step > 0 && step % checkpoint_every == 0)
        write_checkpoint("checkpoint_" + std::to_string(step) + ".ckpt", [](Checkpoint&) {});
    }
    write_checkpoint("checkpoint.ckpt", [](Checkpoint&) {});
  } else {
    InitSampler q0 = [&]() -> InitSampler {
      Rng q_rng = init_rng.split(1);
      if (c.str("q0") == "factorized") return make_factorized_init(d, K);
      if (c.str("q0") == "autoregressive")
        return make_autoregressive_init(d, K, q_rng, c.int_list("q0_embed_hidden"),
                                        int(c.integer("q0_embed_dim")),
                                        c.int_list("q0_head_hidden"));
      throw UsageError("unknown q0 variant: " + c.str("q0"));
    }();
    AdamConfig q_adam;
    q_adam.learning_rate = c.real("f_lr") * c.real("ade_lr_ratio");
    InitOptimizer q_opt = InitOptimizer::make(q0, q_adam);
    double baseline = 0.0;

    AdeConfig cfg;
    cfg.batch_size = batch;
    cfg.f_learning_rate = f_adam.learning_rate;
    cfg.sampler_lr_ratio = c.real("ade_lr_ratio");
    {
      const std::string ratio = c.str("ade_update_ratio");
      const size_t colon = ratio.find(':');
      if (colon == std::string::npos) throw UsageError("ade_update_ratio wants the form a:b");
      const int a = std::stoi(ratio.substr(0, colon));
      const int b = std::stoi(ratio.substr(colon + 1));
      if (a != 1 || b < 1) throw UsageError("ade_update_ratio wants 1:b with b >= 1");
      cfg.f_update_every = b;  // one energy update per b sampler updates
      cfg.q_update_every = 1;
    }
    cfg.baseline_decay = c.real("ade_baseline_decay");
    cfg.total_steps = steps;
    cfg.rng_seed = c.unsigned_integer("seed");
    cfg.threads = threads;

    for (int64_t step = 0; step < steps; ++step) {
      cfg.compute_grad_variance = variance_every > 0 && step % variance_every == 0;
      Rng step_rng = root.split(0x57e9, uint64_t(step));
      const AdeStepMetrics m =
          ade_step(f, f_opt, q0, q_opt, baseline, data_batch(step), cfg, step_rng, step);
      if (step % metrics_every == 0 || step + 1 == steps) {
        ordered_json record;
        record["step"] = step;
        record["f_grad_norm"] = m.f.f_grad_norm;
        record["pos_energy_mean"] = m.f.positive_energy_mean;
        record["neg_energy_mean"] = m.f.negative_energy_mean;
        record["q_grad_norm"] = m.q_grad_norm;
        if (m.q_grad_variance >= 0.0) record["q_grad_variance"] = m.q_grad_variance;
        record["baseline"] = m.baseline;
        record["reward_mean"] = m.reward_mean;
        maybe_nll(step, record, q0);
        metrics.write(record);
        timing << "step " << step << " elapsed_s " << elapsed() << "\n" << std::flush;
      }
      if (checkpoint_every > 0 && step > 0 && step % checkpoint_every == 0)
        write_checkpoint("checkpoint_" + std::to_string(step) + ".ckpt",
                         [&](Checkpoint& s) { add_init_sampler(s, q0, "q0"); });
    }
    write_checkpoint("checkpoint.ckpt", [&](Checkpoint& s) { add_init_sampler(s, q0, "q0"); });
  }

  // Final evaluation with the shared protocol, written next to the metrics.
  EvalProtocol proto;
  proto.n_samples = int(c.integer("eval_samples"));
  proto.sweeps = int(c.integer("eval_sweeps"));
  Rng eval_rng = root.split(0xe7a1);
  const std::vector<BitVector> model_samples = sample_model_gibbs(f, proto, eval_rng, threads);
  write_samples_csv(artifact(out, "samples.csv"), model_samples);
  Rng heldout_rng = root.split(0x4e1d);
  const std::vector<BitVector> truth =
      sample_encoded(dataset, int(c.integer("heldout")), codec, heldout_rng);
  TrainArtifacts result;
  result.final_mmd_x1e3 = 1e3 * mmd_hamming(model_samples, truth, MmdEstimator::unbiased);
  {
    ordered_json record;
    record["event"] = "final_eval";
    record["step"] = steps;
    record["mmd_x1e3"] = result.final_mmd_x1e3;
    metrics.write(record);
    ordered_json summary;
    summary["method"] = method;
    summary["dataset"] = dataset_name(dataset);
    summary["seed"] = c.unsigned_integer("seed");
    summary["steps"] = steps;
    summary["mmd_x1e3"] = result.final_mmd_x1e3;
    std::ofstream rf(artifact(out, "result.json"));
    rf << summary.dump(2) << "\n";
    timing << "total elapsed_s " << elapsed() << "\n";
  }
  std::printf("mmd_x1e3 %.6f\n", result.final_mmd_x1e3);
  return result;
}

Checkpoint load_checkpoint_arg(const Config& c) {
  const std::string path = c.str("checkpoint");
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw UsageError("missing checkpoint: " + path);
  return load_checkpoint(path);
}

int run_eval_mmd(const Config& c) {
  const Checkpoint ckpt = load_checkpoint_arg(c);
  const EnergyModel f = energy_model_from(ckpt);
  const std::string data_name =
      c.str("data").empty() ? ckpt.meta_or("dataset", "") : c.str("data");
  const Dataset2D dataset = dataset_from_name(data_name);
  GrayCodec codec;
  codec.lo = std::stod(ckpt.meta_or("codec_lo", c.str("codec_lo")));
  codec.hi = std::stod(ckpt.meta_or("codec_hi", c.str("codec_hi")));
  Rng root(c.unsigned_integer("seed"));
  const double mmd = eval_mmd_x1e3(f, dataset, codec, c, root);
  if (!c.str("out").empty()) {
    ensure_outdir(c.str("out"));
    c.write_echo(artifact(c.str("out"), "config.echo"));
    ordered_json record;
    record["dataset"] = dataset_name(dataset);
    record["mmd_x1e3"] = mmd;
    std::ofstream out(artifact(c.str("out"), "eval.jsonl"));
    out << record.dump() << "\n";
  }
  std::printf("mmd_x1e3 %.6f\n", mmd);
  return 0;
}

int run_sample(const Config& c) {
  const std::string out = c.str("out");
  ensure_outdir(out);
  c.write_echo(artifact(out, "config.echo"));
  Rng root(c.unsigned_integer("seed"));
  if (c.str("source") == "data") {
    const Dataset2D dataset = dataset_from_name(c.str("data"));
    Rng rng = root.split(0xda7a);
    const auto pts = sample_2d(dataset, int(c.integer("n")), rng);
    std::ofstream f(artifact(out, "samples.csv"));
    char buf[64];
    for (const auto& p : pts) {
      std::snprintf(buf, sizeof buf, "%.17g,%.17g", p[0], p[1]);
      f << buf << "\n";
    }
    return 0;
  }
  if (c.str("source") != "model") throw UsageError("source wants model|data");
  const Checkpoint ckpt = load_checkpoint_arg(c);
  const EnergyModel f = energy_model_from(ckpt);
  EvalProtocol proto;
  proto.n_samples = int(c.integer("n"));
  proto.sweeps = int(c.integer("sweeps"));
  Rng rng = root.split(0xe7a1);
  const std::vector<BitVector> xs = sample_model_gibbs(f, proto, rng, int(c.integer("threads")));
  write_samples_csv(artifact(out, "samples.csv"), xs);
  if (c.onoff("energies")) {
    const Eigen::VectorXd e = energies(f, xs, int(c.integer("threads")));
    std::ofstream ef(artifact(out, "energies.csv"));
    char buf[64];
    for (size_t i = 0; i < xs.size(); ++i) {
      for (int j = 0; j < xs[i].d; ++j) ef << int(xs[i].values[size_t(j)]) << ",";
      std::snprintf(buf, sizeof buf, "%.17g", e[Eigen::Index(i)]);
      ef << buf << "\n";
    }
  }
  return 0;
}

int run_heatmap(const Config& c) {
  const std::string out = c.str("out");
  ensure_outdir(out);
  c.write_echo(artifact(out, "config.echo"));
  const Checkpoint ckpt = load_checkpoint_arg(c);
  const EnergyModel f = energy_model_from(ckpt);
  GrayCodec codec;
  codec.lo = std::stod(ckpt.meta_or("codec_lo", c.str("codec_lo")));
  codec.hi = std::stod(ckpt.meta_or("codec_hi", c.str("codec_hi")));
  const Eigen::MatrixXd grid =
      heatmap_scores(f, codec, int(c.integer("resolution")), int(c.integer("threads")));
  write_heatmap_csv(artifact(out, "heatmap.csv"), grid);
  write_heatmap_pgm(artifact(out, "heatmap.pgm"), grid);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"discrete energy model training laboratory"};
  app.require_subcommand(1);

  Config train_cfg;
  define_train(train_cfg);
  CLI::App* train = app.add_subcommand("train", "train an energy model");
  ConfigBinding train_bind(train, train_cfg);

  Config eval_cfg;
  define_common(eval_cfg);
  define_eval(eval_cfg);
  eval_cfg.define("checkpoint", "");
  eval_cfg.define("data", "");
  eval_cfg.define("out", "");
  CLI::App* eval = app.add_subcommand("eval-mmd", "evaluate a checkpoint");
  ConfigBinding eval_bind(eval, eval_cfg);

  Config sample_cfg;
  define_common(sample_cfg);
  sample_cfg.define("checkpoint", "");
  sample_cfg.define("data", "");
  sample_cfg.define("out", "");
  sample_cfg.define("source", "model");
  sample_cfg.define("n", "4000");
  sample_cfg.define("sweeps", "20");
  sample_cfg.define("energies", "off");
  CLI::App* sample = app.add_subcommand("sample", "draw samples from a checkpoint or dataset");
  ConfigBinding sample_bind(sample, sample_cfg);

  Config heatmap_cfg;
  define_common(heatmap_cfg);
  heatmap_cfg.define("checkpoint", "");
  heatmap_cfg.define("out", "");
  heatmap_cfg.define("resolution", "100");
  CLI::App* heatmap = app.add_subcommand("heatmap", "energy heatmap over [-4,4]^2");
  ConfigBinding heatmap_bind(heatmap, heatmap_cfg);

  Config gradcheck_cfg;
  gradcheck_cfg.define("seed", "0");
  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  ConfigBinding gradcheck_bind(gradcheck, gradcheck_cfg);

  Config oracle_cfg;
  oracle_cfg.define("seed", "0");
  CLI::App* oracle = app.add_subcommand("oracle-suite", "exact enumeration oracles");
  ConfigBinding oracle_bind(oracle, oracle_cfg);

  std::vector<const char*> argv;
  argv.push_back("aloe");
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      train_bind.resolve();
      run_train(train_cfg);
      return 0;
    }
    if (eval->parsed()) {
      eval_bind.resolve();
      return run_eval_mmd(eval_cfg);
    }
    if (sample->parsed()) {
      sample_bind.resolve();
      return run_sample(sample_cfg);
    }
    if (heatmap->parsed()) {
      heatmap_bind.resolve();
      return run_heatmap(heatmap_cfg);
    }
    if (gradcheck->parsed()) {
      gradcheck_bind.resolve();
      const auto report = oracle::finite_difference_suite(gradcheck_cfg.unsigned_integer("seed"));
      for (const auto& item : report.items)
        std::printf("%-40s %s  (max rel err %.3e, tol %.0e)\n", item.name.c_str(),
                    item.pass() ? "PASS" : "FAIL", item.max_rel_error, item.tolerance);
      return report.all_pass() ? 0 : 2;
    }
    if (oracle->parsed()) {
      oracle_bind.resolve();
      const auto result = oracle::run_oracle_suite(oracle_cfg.unsigned_integer("seed"));
      return result.all_pass() ? 0 : 2;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace aloe::cli
