#ifndef CTMQ_CONFIG_HPP
#define CTMQ_CONFIG_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ctmq/data.hpp"
#include "ctmq/model.hpp"
#include "ctmq/optimizer.hpp"
#include "ctmq/schedule.hpp"

namespace ctmq {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Flat `section.key = value` text. '#' starts a comment.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "config") {
    KeyValues kv;
    kv.source_ = source;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(source + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw Error(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.values_.count(key)) {
        throw Error(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' (first set on line " +
                    std::to_string(kv.lines_[key]) + ")");
      }
      kv.values_[key] = trim(line.substr(eq + 1));
      kv.lines_[key] = lineno;
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  /// Applies a `key=value` override.
  void override_with(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error("override '" + assignment + "' is not of the form key=value");
    const std::string key = trim(assignment.substr(0, eq));
    values_[key] = trim(assignment.substr(eq + 1));
    lines_[key] = 0;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string where(const std::string& key) const {
    auto it = lines_.find(key);
    if (it == lines_.end() || it->second == 0) return "override of '" + key + "'";
    return source_ + ":" + std::to_string(it->second) + ": field '" + key + "'";
  }

 private:
  std::string source_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::size_t> lines_;
};

struct DataConfig {
  std::string format = "cifar10";  // cifar10 | cifar100 | idx
  std::string root;                // empty: $CTMQ_DATA_ROOT
  std::size_t train_limit = 0;
  std::size_t eval_limit = 0;
  std::size_t batch_size = 512;
  std::size_t eval_batch_size = 256;
  AugmentPolicy augment;

  std::filesystem::path resolved_root() const {
    if (!root.empty()) return root;
    if (const char* env = std::getenv("CTMQ_DATA_ROOT")) return env;
    throw Error("no data root: set data.root or CTMQ_DATA_ROOT");
  }
};

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  std::string schedule_mode = "ctmq";  // ctmq | direct
  CtmqInputs schedule;
  std::string init = "scratch";        // or the path of a checkpoint holding real-valued weights
  OptimizerConfig optimizer;
  LrPolicy lr_policy = LrPolicy::poly;
  DataConfig data;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t checkpoint_every = 10;
  bool eval_phase_start = false;

  /// Phase list once the training-set size is known.
  std::vector<Phase> phases(std::size_t train_size) const {
    CtmqInputs in = schedule;
    in.train_size = train_size;
    in.batch_size = data.batch_size;
    if (schedule_mode == "direct") {
      return direct_schedule(schedule.target_bits, schedule.final_epochs, in.iterations_per_epoch(),
                             schedule.pretrain_epochs);
    }
    return expand_schedule(in);
  }

  void validate() const {
    model.validate();
    optimizer.validate();
    if (schedule_mode != "ctmq" && schedule_mode != "direct") {
      throw Error("schedule.mode must be 'ctmq' or 'direct', got '" + schedule_mode + "'");
    }
    CtmqInputs in = schedule;
    in.batch_size = data.batch_size;
    if (schedule_mode == "ctmq") {
      in.validate();
    } else if (schedule.target_bits < 1 || schedule.target_bits > kRealBits) {
      throw Error("schedule.target_bits must lie in [1, 32], got " + std::to_string(schedule.target_bits));
    }
    if (data.batch_size == 0 || data.eval_batch_size == 0) throw Error("data batch sizes must be positive");
    if (data.format != "cifar10" && data.format != "cifar100" && data.format != "idx") {
      throw Error("data.format must be cifar10, cifar100 or idx, got '" + data.format + "'");
    }
    if (threads == 0) throw Error("run.threads must be positive");
  }

  /// Canonical text: one `key = value` line per field, sorted by key.
  std::string to_text() const {
    std::map<std::string, std::string> kv;
    auto list = [](const std::vector<std::size_t>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    auto num = [](double d) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", d);
      return std::string(buf);
    };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };
    kv["model.block_kind"] = to_string(model.block_kind);
    kv["model.stem"] = to_string(model.stem);
    kv["model.stage_channels"] = list(model.stage_channels);
    kv["model.blocks_per_stage"] = list(model.blocks_per_stage);
    kv["model.in_channels"] = std::to_string(model.in_channels);
    kv["model.num_classes"] = std::to_string(model.num_classes);
    kv["schedule.mode"] = schedule_mode;
    kv["schedule.target_bits"] = std::to_string(schedule.target_bits);
    kv["schedule.start_bits"] = std::to_string(schedule.start_bits);
    kv["schedule.soft_transfer"] = flag(schedule.soft_transfer);
    kv["schedule.cycles"] = std::to_string(schedule.cycles);
    kv["schedule.soft_epochs"] = std::to_string(schedule.soft_epochs);
    kv["schedule.cyclic_epochs"] = std::to_string(schedule.cyclic_epochs);
    kv["schedule.final_epochs"] = std::to_string(schedule.final_epochs);
    kv["schedule.pretrain_epochs"] = std::to_string(schedule.pretrain_epochs);
    kv["schedule.init"] = init;
    kv["optimizer.kind"] = to_string(optimizer.kind);
    kv["optimizer.lr_base"] = num(optimizer.lr_base);
    kv["optimizer.beta1"] = num(optimizer.beta1);
    kv["optimizer.beta2"] = num(optimizer.beta2);
    kv["optimizer.eps"] = num(optimizer.eps);
    kv["optimizer.weight_decay"] = num(optimizer.weight_decay);
    kv["optimizer.lr_policy"] = to_string(lr_policy);
    kv["data.format"] = data.format;
    kv["data.root"] = data.root;
    kv["data.train_limit"] = std::to_string(data.train_limit);
    kv["data.eval_limit"] = std::to_string(data.eval_limit);
    kv["data.batch_size"] = std::to_string(data.batch_size);
    kv["data.eval_batch_size"] = std::to_string(data.eval_batch_size);
    kv["data.augment"] = flag(data.augment.enabled);
    kv["data.pad"] = std::to_string(data.augment.pad);
    kv["data.crop"] = std::to_string(data.augment.crop);
    kv["data.flip_prob"] = num(data.augment.flip_prob);
    kv["data.resize_min"] = std::to_string(data.augment.resize_min);
    kv["data.resize_max"] = std::to_string(data.augment.resize_max);
    kv["run.seed"] = std::to_string(seed);
    kv["run.threads"] = std::to_string(threads);
    kv["run.checkpoint_every"] = std::to_string(checkpoint_every);
    kv["run.eval_phase_start"] = flag(eval_phase_start);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
  }

  std::string digest() const { return fnv1a_hex(to_text()); }

  static RunConfig from(const KeyValues& kv) {
    RunConfig cfg;
    Reader r{kv, {}};
    if (kv.has("model.preset")) {
      const auto preset = r.str("model.preset");
      if (preset == "resnet18") {
        cfg.model = ModelConfig::resnet18_imagenet();
      } else if (preset != "desk") {
        throw Error(kv.where("model.preset") + ": expected resnet18 or desk, got '" + preset + "'");
      }
    }
    r.choice("model.block_kind", {{"type1", [&] { cfg.model.block_kind = BlockKind::type1; }},
                                  {"type2", [&] { cfg.model.block_kind = BlockKind::type2; }}});
    r.choice("model.stem", {{"imagenet", [&] { cfg.model.stem = StemKind::imagenet; }},
                            {"cifar", [&] { cfg.model.stem = StemKind::cifar; }}});
    if (kv.has("model.width")) {
      const double wf = r.real("model.width");
      if (!(wf > 0.0)) throw Error(kv.where("model.width") + ": must be positive");
      std::vector<std::size_t> base{64, 128, 256, 512};
      for (std::size_t i = 0; i < base.size(); ++i) {
        base[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base[i]) * wf)));
      }
      cfg.model.stage_channels = base;
    }
    r.sizes("model.stage_channels", cfg.model.stage_channels);
    r.sizes("model.blocks_per_stage", cfg.model.blocks_per_stage);
    r.size("model.in_channels", cfg.model.in_channels);
    r.size("model.num_classes", cfg.model.num_classes);

    r.text("schedule.mode", cfg.schedule_mode);
    r.integer("schedule.target_bits", cfg.schedule.target_bits);
    r.integer("schedule.start_bits", cfg.schedule.start_bits);
    r.boolean("schedule.soft_transfer", cfg.schedule.soft_transfer);
    r.size("schedule.cycles", cfg.schedule.cycles);
    r.size("schedule.soft_epochs", cfg.schedule.soft_epochs);
    r.size("schedule.cyclic_epochs", cfg.schedule.cyclic_epochs);
    r.size("schedule.final_epochs", cfg.schedule.final_epochs);
    r.size("schedule.pretrain_epochs", cfg.schedule.pretrain_epochs);
    r.text("schedule.init", cfg.init);

    r.choice("optimizer.kind", {{"adam", [&] { cfg.optimizer.kind = OptimizerKind::adam; }},
                                {"sgd", [&] { cfg.optimizer.kind = OptimizerKind::sgd; }}});
    r.number("optimizer.lr_base", cfg.optimizer.lr_base);
    r.number("optimizer.beta1", cfg.optimizer.beta1);
    r.number("optimizer.beta2", cfg.optimizer.beta2);
    r.number("optimizer.eps", cfg.optimizer.eps);
    r.number("optimizer.weight_decay", cfg.optimizer.weight_decay);
    r.choice("optimizer.lr_policy", {{"poly", [&] { cfg.lr_policy = LrPolicy::poly; }},
                                     {"constant", [&] { cfg.lr_policy = LrPolicy::constant; }}});

    r.text("data.format", cfg.data.format);
    r.text("data.root", cfg.data.root);
    r.size("data.train_limit", cfg.data.train_limit);
    r.size("data.eval_limit", cfg.data.eval_limit);
    r.size("data.batch_size", cfg.data.batch_size);
    r.size("data.eval_batch_size", cfg.data.eval_batch_size);
    r.boolean("data.augment", cfg.data.augment.enabled);
    r.size("data.pad", cfg.data.augment.pad);
    r.size("data.crop", cfg.data.augment.crop);
    r.number("data.flip_prob", cfg.data.augment.flip_prob);
    r.size("data.resize_min", cfg.data.augment.resize_min);
    r.size("data.resize_max", cfg.data.augment.resize_max);

    std::size_t seed = cfg.seed;
    r.size("run.seed", seed);
    cfg.seed = seed;
    r.size("run.threads", cfg.threads);
    r.size("run.checkpoint_every", cfg.checkpoint_every);
    r.boolean("run.eval_phase_start", cfg.eval_phase_start);

    for (const auto& [key, value] : kv.values()) {
      if (!r.seen.count(key) && key != "model.preset" && key != "model.width") {
        throw Error(kv.where(key) + ": unknown key");
      }
    }
    try {
      cfg.validate();
    } catch (const Error& e) {
      throw Error(std::string("invalid configuration: ") + e.what());
    }
    return cfg;
  }

 private:
  struct Reader {
    const KeyValues& kv;
    std::set<std::string> seen;

    const std::string* get(const std::string& key) {
      seen.insert(key);
      auto it = kv.values().find(key);
      return it == kv.values().end() ? nullptr : &it->second;
    }
    std::string str(const std::string& key) { return *get(key); }
    double real(const std::string& key) {
      double d = 0;
      number(key, d);
      return d;
    }
    void text(const std::string& key, std::string& out) {
      if (auto v = get(key)) out = *v;
    }
    void number(const std::string& key, double& out) {
      auto v = get(key);
      if (!v) return;
      try {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(kv.where(key) + ": expected a number, got '" + *v + "'");
      }
    }
    void integer(const std::string& key, int& out) {
      auto v = get(key);
      if (!v) return;
      try {
        std::size_t used = 0;
        out = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(kv.where(key) + ": expected an integer, got '" + *v + "'");
      }
    }
    void size(const std::string& key, std::size_t& out) {
      auto v = get(key);
      if (!v) return;
      try {
        std::size_t used = 0;
        if (!v->empty() && (*v)[0] == '-') throw std::invalid_argument("negative");
        out = std::stoull(*v, &used);
        if (used != v->size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(kv.where(key) + ": expected a non-negative integer, got '" + *v + "'");
      }
    }
    void sizes(const std::string& key, std::vector<std::size_t>& out) {
      auto v = get(key);
      if (!v) return;
      std::vector<std::size_t> parsed;
      std::stringstream ss(*v);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        try {
          std::size_t used = 0;
          if (item.empty() || item[0] == '-') throw std::invalid_argument("bad");
          parsed.push_back(std::stoull(item, &used));
          if (used != item.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw Error(kv.where(key) + ": expected a comma-separated list of integers, got '" + *v + "'");
        }
      }
      out = parsed;
    }
    void boolean(const std::string& key, bool& out) {
      auto v = get(key);
      if (!v) return;
      if (*v == "true" || *v == "1" || *v == "yes") {
        out = true;
      } else if (*v == "false" || *v == "0" || *v == "no") {
        out = false;
      } else {
        throw Error(kv.where(key) + ": expected true or false, got '" + *v + "'");
      }
    }
    void choice(const std::string& key, const std::vector<std::pair<std::string, std::function<void()>>>& options) {
      auto v = get(key);
      if (!v) return;
      std::string names;
      for (const auto& [name, apply] : options) {
        if (*v == name) {
          apply();
          return;
        }
        names += (names.empty() ? "" : ", ") + name;
      }
      throw Error(kv.where(key) + ": expected one of {" + names + "}, got '" + *v + "'");
    }
  };
};

}  // namespace ctmq

#endif  // CTMQ_CONFIG_HPP
