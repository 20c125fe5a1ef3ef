#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "ctmq/checkpoint.hpp"
#include "ctmq/metrics.hpp"
#include "ctmq/parallel.hpp"
#include "ctmq/trainer.hpp"

namespace ctmq::cli {

namespace fs = std::filesystem;

RunConfig resolve_config(const ConfigSource& src) {
  KeyValues kv = src.path ? KeyValues::load(*src.path) : KeyValues{};
  for (const auto& o : src.overrides) kv.override_with(o);
  return RunConfig::from(kv);
}

namespace {

Dataset load_split(const DataConfig& cfg, Split split) {
  const fs::path root = cfg.resolved_root();
  if (!fs::is_directory(root)) throw Error("data root " + root.string() + " is not a directory");
  Dataset ds;
  if (cfg.format == "cifar10") {
    ds = load_cifar(root, CifarVariant::cifar10, split);
  } else if (cfg.format == "cifar100") {
    ds = load_cifar(root, CifarVariant::cifar100, split);
  } else {
    const bool train = split == Split::train;
    ds = load_idx(root / (train ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte"),
                  root / (train ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte"), 10, split);
  }
  ds = ds.head(split == Split::train ? cfg.train_limit : cfg.eval_limit);
  ds.validate();
  return ds;
}

Normalization norm_from_manifest(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

std::size_t rows_before(const std::vector<MetricsRow>& rows, std::size_t phase, std::size_t epoch) {
  std::size_t keep = 0;
  for (const auto& r : rows) {
    if (r.phase < phase || (r.phase == phase && r.epoch <= epoch)) ++keep;
  }
  return keep;
}

void rewrite_metrics(const fs::path& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot rewrite " + path.string());
  out << metrics_header() << '\n';
  for (const auto& r : rows) out << format_metrics_row(r) << '\n';
}

void check_model_matches(const ModelConfig& m, const Dataset& ds) {
  if (m.in_channels != ds.channels) {
    throw Error("model.in_channels = " + std::to_string(m.in_channels) + " but the data has " +
                std::to_string(ds.channels) + " channels");
  }
  if (m.num_classes < ds.class_count) {
    throw Error("model.num_classes = " + std::to_string(m.num_classes) + " but the data has " +
                std::to_string(ds.class_count) + " classes");
  }
}

}  // namespace

LoadedData load_data(const DataConfig& cfg) {
  LoadedData d{load_split(cfg, Split::train), load_split(cfg, Split::eval)};
  if (d.train.image_bytes() != d.eval.image_bytes()) throw Error("train and eval images differ in size");
  d.train.norm = compute_normalization(d.train);
  d.eval.norm = d.train.norm;
  return d;
}

int run_train(const TrainOptions& opt, std::ostream& out) {
  ConfigSource src = opt.config;
  if (opt.seed) src.overrides.push_back("run.seed=" + std::to_string(*opt.seed));
  if (opt.threads) src.overrides.push_back("run.threads=" + std::to_string(*opt.threads));
  if (opt.data_root) src.overrides.push_back("data.root=" + *opt.data_root);
  const RunConfig cfg = resolve_config(src);
  set_num_threads(cfg.threads);

  const LoadedData data = load_data(cfg.data);
  check_model_matches(cfg.model, data.train);
  const auto phases = cfg.phases(data.train.size());

  fs::create_directories(opt.out / "checkpoints");
  const fs::path metrics_path = opt.out / "metrics.csv";
  const fs::path timing_path = opt.out / "timing.csv";
  const fs::path latest_path = opt.out / "checkpoints" / "LATEST";

  std::optional<Checkpoint> resume;
  if (opt.resume && fs::exists(latest_path)) {
    std::ifstream in(latest_path);
    std::string name;
    std::getline(in, name);
    resume = load_checkpoint(opt.out / "checkpoints" / name);
    auto rows = fs::exists(metrics_path) ? read_metrics(metrics_path) : std::vector<MetricsRow>{};
    rows.resize(rows_before(rows, resume->phase_index, resume->epoch));
    rewrite_metrics(metrics_path, rows);
    out << "resuming from " << name << " (phase " << resume->phase_index << ", epoch " << resume->epoch << ")\n";
  } else if (fs::exists(metrics_path)) {
    throw Error(opt.out.string() + " already holds a run; pass --resume or choose another --out");
  }

  std::optional<Checkpoint> initial;
  if (cfg.init != "scratch") initial = load_checkpoint(cfg.init);

  {
    std::ofstream cfg_out(opt.out / "config.txt");
    cfg_out << cfg.to_text();
  }
  const std::string format = cfg.data.format;
  write_manifest(opt.out / "dataset_manifest.json", data.train, format);

  TrainSetup setup;
  setup.model = cfg.model;
  setup.optimizer = cfg.optimizer;
  setup.lr_policy = cfg.lr_policy;
  setup.batch_size = cfg.data.batch_size;
  setup.eval_batch_size = cfg.data.eval_batch_size;
  setup.augment = cfg.data.augment;
  setup.seed = cfg.seed;
  setup.checkpoint_every = cfg.checkpoint_every;
  setup.eval_phase_start = cfg.eval_phase_start;
  setup.config_digest = cfg.digest();
  setup.metadata["config"] = cfg.to_text();
  setup.metadata["dataset_manifest"] = manifest_json(data.train, format).dump();

  MetricsWriter metrics(metrics_path, resume.has_value());
  std::ofstream timing(timing_path, resume ? std::ios::app : std::ios::trunc);
  if (!resume) timing << "phase,epoch,wall_seconds\n";

  RunHooks<float> hooks;
  hooks.on_metrics = [&](const MetricsRow& row) {
    metrics.write(row);
    timing << row.phase << ',' << row.epoch << ',' << row.wall_seconds << '\n' << std::flush;
    char line[160];
    std::snprintf(line, sizeof line, "phase %2zu %-13s k=%-2d epoch %3zu  loss %.4f  top1 %.4f  top5 %.4f\n", row.phase,
                  to_string(row.part).c_str(), row.bit_depth, row.epoch, row.train_loss, row.eval_top1, row.eval_top5);
    out << line << std::flush;
  };
  hooks.on_checkpoint = [&](const Checkpoint& c, const std::string& hint) {
    const std::string name = hint + ".ckpt";
    save_checkpoint(opt.out / "checkpoints" / name, c);
    std::ofstream latest(latest_path, std::ios::trunc);
    latest << name << '\n';
  };

  out << "run " << setup.config_digest << ": " << phases.size() << " phases, " << data.train.size()
      << " training images, " << data.eval.size() << " eval images, " << num_threads() << " thread(s)\n";
  auto result = run_schedule<float>(phases, setup, data.train, data.eval, initial, resume, hooks);

  Checkpoint final_ckpt;
  {
    const Phase& last = phases.back();
    ResNet<float> model(cfg.model.with_bits(last.bit_depth), init_seed(cfg.seed));
    load_values(result.final_params, model.params());
    std::uint64_t iterations = 0;
    for (const auto& p : phases) iterations += p.iterations;
    final_ckpt = make_checkpoint(model, nullptr, setup, last, last.epochs, iterations);
  }
  save_checkpoint(opt.out / "final.ckpt", final_ckpt);
  out << "wrote " << (opt.out / "final.ckpt").string() << '\n';
  return 0;
}

int run_eval(const EvalOptions& opt, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  KeyValues kv = KeyValues::parse(ckpt.meta("config"), opt.checkpoint.string() + "[config]");
  if (opt.data_root) kv.set("data.root", *opt.data_root);
  const RunConfig cfg = RunConfig::from(kv);
  set_num_threads(opt.threads.value_or(cfg.threads));

  Dataset eval = load_split(cfg.data, Split::eval);
  if (opt.limit) eval = eval.head(opt.limit);
  eval.norm = norm_from_manifest(ckpt.meta("dataset_manifest"));
  check_model_matches(cfg.model, eval);

  const int bits = opt.bits.value_or(std::stoi(ckpt.meta("phase.bit_depth")));
  ResNet<float> model(cfg.model.with_bits(bits));
  load_values(ckpt.tensors, model.params());
  const auto r = evaluate(model, eval, opt.batch_size.value_or(cfg.data.eval_batch_size));
  nlohmann::json j{{"checkpoint", opt.checkpoint.string()},
                   {"bit_depth", bits},
                   {"records", r.count},
                   {"top1", r.top1},
                   {"top5", r.top5},
                   {"loss", r.loss},
                   {"mean_abs_quant_error", mean_abs_quant_error(model)}};
  out << j.dump() << '\n';
  if (opt.metrics_out) {
    MetricsRow row;
    row.phase = ckpt.phase_index;
    row.part = phase_part_from_string(ckpt.meta("phase.part"));
    row.bit_depth = bits;
    row.epoch = ckpt.epoch;
    row.iteration = ckpt.iteration;
    row.eval_top1 = r.top1;
    row.eval_top5 = r.top5;
    row.eval_loss = r.loss;
    row.mean_abs_quant_error = mean_abs_quant_error(model);
    row.threads = num_threads();
    MetricsWriter(*opt.metrics_out, false).write(row);
  }
  return 0;
}

int run_expand(const ExpandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt.config);
  const auto phases = cfg.phases(opt.train_size);
  out << "index,part,bit_depth,epochs,iterations\n";
  for (const auto& p : phases) {
    out << p.index << ',' << to_string(p.part) << ',' << p.bit_depth << ',' << p.epochs << ',' << p.iterations << '\n';
  }
  return 0;
}

std::vector<double> lattice_error_profile(const std::map<std::string, Tensor<float>>& tensors,
                                          const ModelConfig& model, int max_bits) {
  if (max_bits < 1 || max_bits >= kRealBits) throw Error("max_bits must lie in [1, 31]");
  const ResNet<float> probe(model.with_bits(2));
  std::vector<double> profile;
  for (int k = 1; k <= max_bits; ++k) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& l : probe.layers()) {
      if (l.weight_quant.is_identity()) continue;
      const auto it = tensors.find(l.name + ".weight");
      if (it == tensors.end()) throw Error("checkpoint lacks " + l.name + ".weight");
      const auto stats = error_stats(it->second, QuantSpec{k, QuantKind::weight_multi_bit});
      total += stats.mean_abs_err * static_cast<double>(it->second.size());
      count += it->second.size();
    }
    profile.push_back(count ? total / static_cast<double>(count) : 0.0);
  }
  return profile;
}

int run_quant_error(const QuantErrorOptions& opt, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
  const RunConfig cfg = RunConfig::from(KeyValues::parse(ckpt.meta("config"), opt.checkpoint.string() + "[config]"));
  const auto profile = lattice_error_profile(ckpt.tensors, cfg.model, opt.max_bits);
  out << "bits,mean_abs_error\n";
  char buf[64];
  for (std::size_t i = 0; i < profile.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i + 1, profile[i]);
    out << buf;
  }
  return 0;
}

}  // namespace ctmq::cli
