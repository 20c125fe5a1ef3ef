#ifndef CTMQ_MODEL_HPP
#define CTMQ_MODEL_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctmq/autodiff.hpp"
#include "ctmq/ops.hpp"
#include "ctmq/quantization.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq {

/// TypeI quantizes the downsampling shortcut; TypeII keeps it real-valued.
enum class BlockKind { type1, type2 };
enum class StemKind { imagenet, cifar };

inline std::string to_string(BlockKind k) { return k == BlockKind::type1 ? "type1" : "type2"; }
inline std::string to_string(StemKind k) { return k == StemKind::imagenet ? "imagenet" : "cifar"; }

struct ModelConfig {
  BlockKind block_kind = BlockKind::type2;
  StemKind stem = StemKind::imagenet;
  std::vector<std::size_t> stage_channels{64, 128, 256, 512};
  std::vector<std::size_t> blocks_per_stage{2, 2, 2, 2};
  std::size_t in_channels = 3;
  std::size_t num_classes = 1000;
  int bits = kRealBits;
  /// When false no quantization node is inserted at all, whatever `bits` says.
  bool quant_nodes = true;

  static ModelConfig resnet18_imagenet(BlockKind kind = BlockKind::type2) {
    ModelConfig cfg;
    cfg.block_kind = kind;
    return cfg;
  }

  /// Width-1/4 network with the 3x3 stem used for 32x32 inputs.
  static ModelConfig desk(std::size_t num_classes = 10, BlockKind kind = BlockKind::type2) {
    ModelConfig cfg;
    cfg.block_kind = kind;
    cfg.stem = StemKind::cifar;
    cfg.stage_channels = {16, 32, 64, 128};
    cfg.num_classes = num_classes;
    return cfg;
  }

  ModelConfig with_bits(int k) const {
    ModelConfig c = *this;
    c.bits = k;
    return c;
  }

  void validate() const {
    if (stage_channels.empty() || stage_channels.size() != blocks_per_stage.size()) {
      throw Error("model: stage_channels and blocks_per_stage must be non-empty and of equal length");
    }
    for (auto c : stage_channels)
      if (c == 0) throw Error("model: stage channel counts must be positive");
    for (auto b : blocks_per_stage)
      if (b == 0) throw Error("model: every stage needs at least one block");
    if (num_classes == 0 || in_channels == 0) throw Error("model: num_classes and in_channels must be positive");
    if (bits < 1 || bits > kRealBits) throw Error("model: bit depth must lie in [1, 32], got " + std::to_string(bits));
  }
};

template <class T>
class NamedParams {
 public:
  struct Entry {
    Var<T> var;
    bool trainable = true;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable) {
    if (entries_.count(name)) throw Error("duplicate parameter name " + name);
    entries_.emplace(name, Entry{Var<T>::leaf(std::move(value), trainable), trainable});
  }

  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  Var<T>& at(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("unknown parameter " + name);
    return it->second.var;
  }
  const Var<T>& at(const std::string& name) const { return const_cast<NamedParams*>(this)->at(name); }

  std::map<std::string, Entry>& entries() noexcept { return entries_; }
  const std::map<std::string, Entry>& entries() const noexcept { return entries_; }

  std::set<std::string> names() const {
    std::set<std::string> out;
    for (const auto& [name, e] : entries_) out.insert(name);
    return out;
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) e.var.zero_grad();
  }

  std::map<std::string, Tensor<T>> snapshot() const {
    std::map<std::string, Tensor<T>> out;
    for (const auto& [name, e] : entries_) out.emplace(name, e.var.value());
    return out;
  }

 private:
  std::map<std::string, Entry> entries_;
};

/// Copies every value from `source` into `target` (bit-exact, including BN running statistics).
template <class T>
void transfer_weights(const NamedParams<T>& source, NamedParams<T>& target) {
  const auto a = source.names();
  const auto b = target.names();
  if (a != b) {
    std::string msg = "parameter sets differ;";
    for (const auto& n : a)
      if (!b.count(n)) msg += " missing in target: " + n + ";";
    for (const auto& n : b)
      if (!a.count(n)) msg += " missing in source: " + n + ";";
    throw Error(msg);
  }
  for (const auto& [name, e] : source.entries()) {
    auto& dst = target.at(name);
    if (dst.shape() != e.var.shape()) {
      throw Error("parameter " + name + ": shape " + shape_str(e.var.shape()) + " vs " + shape_str(dst.shape()));
    }
  }
  for (const auto& [name, e] : source.entries()) {
    auto& dst = target.at(name);
    dst.mutable_value() = e.var.value();
    dst.zero_grad();
  }
}

/// Loads a plain name -> tensor map (e.g. from a checkpoint) with the same checks.
template <class T>
void load_values(const std::map<std::string, Tensor<T>>& values, NamedParams<T>& target) {
  NamedParams<T> staged;
  for (const auto& [name, t] : values) staged.add(name, t, false);
  transfer_weights(staged, target);
}

enum class LayerKind { conv, linear };

/// How one weight layer is wired: which quantizers touch its weight and its input.
struct LayerInfo {
  std::string name;  // parameter prefix, e.g. "layer2.0.downsample"
  LayerKind kind = LayerKind::conv;
  std::size_t in_channels = 0, out_channels = 0, kernel = 1, stride = 1, pad = 0;
  QuantSpec weight_quant;
  QuantSpec input_quant;
};

template <class T>
using Trace = std::map<std::string, Tensor<T>>;

/// Residual network with fake-quantized basic blocks. Conv-1 and the classifier
/// stay real-valued at every bit depth.
template <class T>
class ResNet {
 public:
  explicit ResNet(ModelConfig cfg, std::uint64_t init_seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build_layers();
    init_params(init_seed);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  NamedParams<T>& params() noexcept { return params_; }
  const NamedParams<T>& params() const noexcept { return params_; }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }
  std::size_t block_count() const noexcept { return blocks_.size(); }
  std::size_t downsample_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.downsample ? 1 : 0;
    return n;
  }

  const LayerInfo& layer(const std::string& name) const {
    for (const auto& l : layers_)
      if (l.name == name) return l;
    throw Error("unknown layer " + name);
  }

  /// Logits [N, num_classes]. `trace`, when given, receives named intermediate tensors.
  Var<T> forward(Tape<T>& tape, const Tensor<T>& images, bool training, Trace<T>* trace = nullptr) {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != cfg_.in_channels) {
      throw Error("model input must be [N, " + std::to_string(cfg_.in_channels) + ", H, W], got " + shape_str(s));
    }
    Var<T> x = Var<T>::leaf(images, false);
    Var<T> h = conv_bn(tape, x, layers_[stem_layer_], "stem.bn", training);
    h = ops::clamp(tape, h, T{0}, T{1});
    if (cfg_.stem == StemKind::imagenet) h = ops::max_pool2d(tape, h, 3, 2, 1);
    put(trace, "stem.output", h);

    for (const auto& block : blocks_) h = block_forward(tape, h, block, training, trace);

    const auto& fs = h.shape();
    if (fs[2] != fs[3]) throw Error("final feature map must be square, got " + shape_str(fs));
    put(trace, "pool.input", h);
    h = ops::avg_pool2d(tape, h, fs[2], fs[2]);
    h = ops::flatten(tape, h);
    put(trace, "fc.input", h);
    const auto& fc = layers_[fc_layer_];
    h = ops::linear(tape, fake_quant(tape, h, fc.input_quant), fake_quant(tape, params_.at("fc.weight"), fc.weight_quant),
                    params_.at("fc.bias"));
    put(trace, "logits", h);
    return h;
  }

 private:
  struct Block {
    std::string prefix;
    std::size_t conv1, conv2;
    std::size_t downsample = 0;  // layer index, 0 when absent (layer 0 is the stem)
    bool raw_input = false;      // first conv of the first stage reads unquantized activations
  };

  static void put(Trace<T>* trace, const std::string& key, const Var<T>& v) {
    if (trace) (*trace)[key] = v.value();
  }

  QuantSpec weight_spec(bool quantized) const {
    return (quantized && cfg_.quant_nodes) ? QuantSpec::weights(cfg_.bits) : QuantSpec::weights(kRealBits);
  }
  QuantSpec act_spec(bool quantized) const {
    return (quantized && cfg_.quant_nodes) ? QuantSpec::activations(cfg_.bits) : QuantSpec::activations(kRealBits);
  }

  std::size_t add_layer(LayerInfo info) {
    layers_.push_back(std::move(info));
    return layers_.size() - 1;
  }

  void build_layers() {
    const std::size_t stem_out = cfg_.stage_channels.front();
    LayerInfo stem{"stem.conv", LayerKind::conv, cfg_.in_channels, stem_out, 3, 1, 1, weight_spec(false), act_spec(false)};
    if (cfg_.stem == StemKind::imagenet) {
      stem.kernel = 7;
      stem.stride = 2;
      stem.pad = 3;
    }
    stem_layer_ = add_layer(stem);

    std::size_t in_ch = stem_out;
    for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
      const std::size_t out_ch = cfg_.stage_channels[s];
      for (std::size_t b = 0; b < cfg_.blocks_per_stage[s]; ++b) {
        const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
        Block block;
        block.prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
        block.raw_input = s == 0 && b == 0;
        block.conv1 = add_layer({block.prefix + ".conv1", LayerKind::conv, in_ch, out_ch, 3, stride, 1, weight_spec(true),
                                 act_spec(!block.raw_input)});
        block.conv2 = add_layer(
            {block.prefix + ".conv2", LayerKind::conv, out_ch, out_ch, 3, 1, 1, weight_spec(true), act_spec(true)});
        if (stride != 1 || in_ch != out_ch) {
          const bool quantized = cfg_.block_kind == BlockKind::type1;
          block.downsample = add_layer({block.prefix + ".downsample", LayerKind::conv, in_ch, out_ch, 1, stride, 0,
                                        weight_spec(quantized), act_spec(quantized)});
        }
        blocks_.push_back(block);
        in_ch = out_ch;
      }
    }
    fc_layer_ = add_layer({"fc", LayerKind::linear, in_ch, cfg_.num_classes, 1, 1, 0, weight_spec(false), act_spec(false)});
  }

  void init_params(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto add_bn = [this](const std::string& prefix, std::size_t c) {
      params_.add(prefix + ".gamma", Tensor<T>({c}, T{1}), true);
      params_.add(prefix + ".beta", Tensor<T>({c}, T{0}), true);
      params_.add(prefix + ".running_mean", Tensor<T>({c}, T{0}), false);
      params_.add(prefix + ".running_var", Tensor<T>({c}, T{1}), false);
    };
    for (const auto& l : layers_) {
      if (l.kind == LayerKind::conv) {
        const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
        Tensor<T> w({l.out_channels, l.in_channels, l.kernel, l.kernel});
        for (auto& v : w.data()) v = static_cast<T>(dist(rng));
        params_.add(l.name + ".weight", std::move(w), true);
        add_bn(bn_name(l.name), l.out_channels);
      } else {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_channels));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<T> w({l.out_channels, l.in_channels});
        for (auto& v : w.data()) v = static_cast<T>(dist(rng));
        params_.add(l.name + ".weight", std::move(w), true);
        params_.add(l.name + ".bias", Tensor<T>({l.out_channels}, T{0}), true);
      }
    }
  }

  /// "layer1.0.conv1" -> "layer1.0.bn1", "stem.conv" -> "stem.bn", "x.downsample" -> "x.downsample.bn".
  static std::string bn_name(const std::string& conv) {
    const auto dot = conv.rfind('.');
    const std::string last = conv.substr(dot + 1);
    if (last == "downsample") return conv + ".bn";
    if (last == "conv") return conv.substr(0, dot) + ".bn";
    return conv.substr(0, dot) + ".bn" + last.substr(4);
  }

  ops::BatchNormState<T> bn_state(const std::string& prefix) {
    return {params_.at(prefix + ".running_mean"), params_.at(prefix + ".running_var")};
  }

  Var<T> conv_bn(Tape<T>& tape, const Var<T>& input, const LayerInfo& l, const std::string& bn, bool training,
                 Trace<T>* trace = nullptr) {
    Var<T> a = fake_quant(tape, input, l.input_quant);
    put(trace, l.name + ".input", a);
    Var<T> w = fake_quant(tape, params_.at(l.name + ".weight"), l.weight_quant);
    Var<T> h = ops::conv2d(tape, a, w, l.stride, l.pad);
    put(trace, l.name + ".output", h);
    auto state = bn_state(bn);
    return ops::batch_norm(tape, h, params_.at(bn + ".gamma"), params_.at(bn + ".beta"), state, training);
  }

  Var<T> block_forward(Tape<T>& tape, const Var<T>& x, const Block& block, bool training, Trace<T>* trace) {
    Var<T> h = conv_bn(tape, x, layers_[block.conv1], block.prefix + ".bn1", training, trace);
    h = ops::clamp(tape, h, T{0}, T{1});
    h = conv_bn(tape, h, layers_[block.conv2], block.prefix + ".bn2", training, trace);
    Var<T> shortcut = x;
    if (block.downsample) {
      const auto& l = layers_[block.downsample];
      shortcut = conv_bn(tape, x, l, l.name + ".bn", training, trace);
    }
    if (h.shape() != shortcut.shape()) {
      throw Error(block.prefix + ": residual shape " + shape_str(h.shape()) + " vs shortcut " +
                  shape_str(shortcut.shape()));
    }
    h = ops::clamp(tape, ops::add(tape, h, shortcut), T{0}, T{1});
    put(trace, block.prefix + ".output", h);
    return h;
  }

  ModelConfig cfg_;
  NamedParams<T> params_;
  std::vector<LayerInfo> layers_;
  std::vector<Block> blocks_;
  std::size_t stem_layer_ = 0;
  std::size_t fc_layer_ = 0;
};

/// Element-weighted mean |eps| over all weight tensors the model quantizes, at the model's bit depth.
template <class T>
double mean_abs_quant_error(const ResNet<T>& model) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& l : model.layers()) {
    if (l.weight_quant.is_identity()) continue;
    const auto& w = model.params().at(l.name + ".weight").value();
    total += error_stats(w, l.weight_quant).mean_abs_err * static_cast<double>(w.size());
    count += w.size();
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace ctmq

#endif  // CTMQ_MODEL_HPP
