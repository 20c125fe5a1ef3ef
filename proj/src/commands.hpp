#ifndef CTMQ_CLI_COMMANDS_HPP
#define CTMQ_CLI_COMMANDS_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ctmq/config.hpp"
#include "ctmq/data.hpp"

namespace ctmq::cli {

/// Config file (optional) plus `key=value` overrides, applied in order.
struct ConfigSource {
  std::optional<std::filesystem::path> path;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const ConfigSource& src);

struct LoadedData {
  Dataset train;
  Dataset eval;
};

/// Reads both splits, applies the subset limits and attaches the training-set
/// normalization to both. IDX expects the four standard MNIST file names under the root.
LoadedData load_data(const DataConfig& cfg);

struct TrainOptions {
  ConfigSource config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> data_root;
  std::filesystem::path out;
  bool resume = false;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::optional<std::string> data_root;
  std::optional<std::size_t> batch_size;
  std::optional<int> bits;  // evaluate at another bit depth than the checkpoint's
  std::optional<std::size_t> threads;
  std::size_t limit = 0;
  std::optional<std::filesystem::path> metrics_out;  // one metrics.csv-style row
};

struct ExpandOptions {
  ConfigSource config;
  std::size_t train_size = 50000;
};

struct QuantErrorOptions {
  std::filesystem::path checkpoint;
  int max_bits = 8;
};

int run_train(const TrainOptions& opt, std::ostream& out);
int run_eval(const EvalOptions& opt, std::ostream& out);
int run_expand(const ExpandOptions& opt, std::ostream& out);
int run_quant_error(const QuantErrorOptions& opt, std::ostream& out);

/// Per-bit-depth mean |eps| over the quantized weight layers of a checkpoint, k = 1..max_bits,
/// measured on the shared multi-bit lattice family.
std::vector<double> lattice_error_profile(const std::map<std::string, Tensor<float>>& tensors,
                                          const ModelConfig& model, int max_bits);

}  // namespace ctmq::cli

#endif  // CTMQ_CLI_COMMANDS_HPP
