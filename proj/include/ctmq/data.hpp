#ifndef CTMQ_DATA_HPP
#define CTMQ_DATA_HPP

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctmq/random.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq {

namespace fs = std::filesystem;

enum class Split { train, eval };

/// Per-channel statistics applied after scaling pixels to [0, 1].
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalization identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

/// Byte images in NCHW order plus class labels.
struct Dataset {
  std::size_t channels = 0, height = 0, width = 0;
  std::size_t class_count = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::int32_t> labels;
  Split split = Split::train;
  Normalization norm;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_bytes() const noexcept { return channels * height * width; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_bytes(), image_bytes());
  }

  void validate() const {
    if (pixels.size() != labels.size() * image_bytes()) {
      throw Error("dataset: " + std::to_string(labels.size()) + " labels but " + std::to_string(pixels.size()) +
                  " pixel bytes");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
        throw Error("dataset: label " + std::to_string(labels[i]) + " at record " + std::to_string(i) +
                    " outside [0, " + std::to_string(class_count) + ")");
      }
    }
  }

  /// First `limit` records (all of them when limit is 0 or too large).
  Dataset head(std::size_t limit) const {
    if (limit == 0 || limit >= size()) return *this;
    Dataset out = *this;
    out.labels.resize(limit);
    out.pixels.resize(limit * image_bytes());
    return out;
  }
};

namespace detail {
inline std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void append(Dataset& dst, const Dataset& src) {
  if (dst.labels.empty() && dst.pixels.empty()) {
    dst = src;
    return;
  }
  if (dst.image_bytes() != src.image_bytes() || dst.class_count != src.class_count) {
    throw Error("cannot concatenate datasets with different layouts");
  }
  dst.pixels.insert(dst.pixels.end(), src.pixels.begin(), src.pixels.end());
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}
}  // namespace detail

enum class CifarVariant { cifar10, cifar100 };

inline constexpr std::size_t kCifarImageBytes = 3 * 32 * 32;

/// One CIFAR binary file: records of `label_bytes` label bytes (the last one is
/// used, i.e. the fine label for CIFAR-100) followed by 3072 pixel bytes.
inline Dataset load_cifar_file(const fs::path& path, std::size_t label_bytes, std::size_t class_count,
                               Split split = Split::train) {
  if (label_bytes != 1 && label_bytes != 2) throw Error("CIFAR records carry 1 or 2 label bytes");
  const auto bytes = detail::read_file(path);
  const std::size_t record = label_bytes + kCifarImageBytes;
  if (bytes.size() % record != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % record;
    throw Error(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (record size " +
                std::to_string(record) + ", file size " + std::to_string(bytes.size()) + ")");
  }
  Dataset ds;
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.class_count = class_count;
  ds.split = split;
  const std::size_t n = bytes.size() / record;
  ds.labels.resize(n);
  ds.pixels.resize(n * kCifarImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = i * record;
    const std::int32_t label = bytes[off + label_bytes - 1];
    if (static_cast<std::size_t>(label) >= class_count) {
      throw Error(path.string() + ": label " + std::to_string(label) + " out of range at byte offset " +
                  std::to_string(off + label_bytes - 1));
    }
    ds.labels[i] = label;
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(off + label_bytes), kCifarImageBytes,
                ds.pixels.begin() + static_cast<std::ptrdiff_t>(i * kCifarImageBytes));
  }
  ds.norm = Normalization::identity(3);
  return ds;
}

/// Files making up a split of the standard binary distribution under `root`. Both the
/// distribution directory itself and its parent are accepted.
inline std::vector<fs::path> cifar_files(const fs::path& root, CifarVariant variant, Split split) {
  const bool ten = variant == CifarVariant::cifar10;
  std::vector<std::string> names;
  if (ten) {
    if (split == Split::train) {
      for (int i = 1; i <= 5; ++i) names.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
      names.push_back("test_batch.bin");
    }
  } else {
    names.push_back(split == Split::train ? "train.bin" : "test.bin");
  }
  const fs::path nested = root / (ten ? "cifar-10-batches-bin" : "cifar-100-binary");
  const fs::path dir = fs::exists(nested / names.front()) ? nested : root;
  std::vector<fs::path> out;
  for (const auto& n : names) out.push_back(dir / n);
  return out;
}

inline Dataset load_cifar(const fs::path& root, CifarVariant variant, Split split) {
  const bool ten = variant == CifarVariant::cifar10;
  Dataset ds;
  for (const auto& file : cifar_files(root, variant, split)) {
    detail::append(ds, load_cifar_file(file, ten ? 1 : 2, ten ? 10 : 100, split));
  }
  ds.split = split;
  return ds;
}

/// Record count of a split, from file sizes only.
inline std::size_t count_cifar_records(const fs::path& root, CifarVariant variant, Split split) {
  const std::size_t record = (variant == CifarVariant::cifar10 ? 1 : 2) + kCifarImageBytes;
  std::size_t total = 0;
  for (const auto& f : cifar_files(root, variant, split)) total += fs::file_size(f) / record;
  return total;
}

struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;
};

/// Unsigned-byte IDX file (magic 0x0000 08 <ndims>, big-endian dimensions).
inline IdxArray read_idx(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  if (bytes.size() < 4) throw Error(path.string() + ": too short for an IDX header");
  auto be32 = [&bytes](std::size_t off) {
    return (std::uint32_t{bytes[off]} << 24) | (std::uint32_t{bytes[off + 1]} << 16) |
           (std::uint32_t{bytes[off + 2]} << 8) | std::uint32_t{bytes[off + 3]};
  };
  IdxArray out;
  out.magic = be32(0);
  if (bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 || bytes[3] == 0) {
    throw Error(path.string() + ": bad IDX magic " + std::to_string(out.magic) + " (expected unsigned-byte 0x000008xx)");
  }
  const std::size_t ndims = bytes[3];
  if (bytes.size() < 4 + 4 * ndims) throw Error(path.string() + ": truncated IDX header");
  std::size_t count = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    out.dims.push_back(be32(4 + 4 * d));
    count *= out.dims.back();
  }
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() != header + count) {
    throw Error(path.string() + ": IDX payload has " + std::to_string(bytes.size() - header) + " bytes, dimensions need " +
                std::to_string(count));
  }
  out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return out;
}

/// Grayscale images (N, H, W) plus labels (N) from a pair of IDX files.
inline Dataset load_idx(const fs::path& images_path, const fs::path& labels_path, std::size_t class_count = 10,
                        Split split = Split::train) {
  const IdxArray images = read_idx(images_path);
  const IdxArray labels = read_idx(labels_path);
  if (images.dims.size() != 3) throw Error(images_path.string() + ": expected a 3-dimensional image array");
  if (labels.dims.size() != 1) throw Error(labels_path.string() + ": expected a 1-dimensional label array");
  if (images.dims[0] != labels.dims[0]) {
    throw Error("IDX count mismatch: " + std::to_string(images.dims[0]) + " images vs " + std::to_string(labels.dims[0]) +
                " labels");
  }
  Dataset ds;
  ds.channels = 1;
  ds.height = images.dims[1];
  ds.width = images.dims[2];
  ds.class_count = class_count;
  ds.split = split;
  ds.pixels = images.data;
  ds.labels.assign(labels.data.begin(), labels.data.end());
  ds.norm = Normalization::identity(1);
  ds.validate();
  return ds;
}

/// Per-channel mean and standard deviation of pixel/255 over the whole dataset.
inline Normalization compute_normalization(const Dataset& ds) {
  Normalization norm = Normalization::identity(ds.channels);
  if (ds.size() == 0) return norm;
  const std::size_t area = ds.height * ds.width;
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.pixels.data() + i * ds.image_bytes() + c * area;
      for (std::size_t j = 0; j < area; ++j) {
        const double v = p[j] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double n = static_cast<double>(ds.size() * area);
    norm.mean[c] = sum / n;
    norm.stddev[c] = std::sqrt(std::max(sq / n - norm.mean[c] * norm.mean[c], 1e-12));
  }
  return norm;
}

inline nlohmann::json manifest_json(const Dataset& train, const std::string& format) {
  return nlohmann::json{{"format", format},
                        {"channels", train.channels},
                        {"height", train.height},
                        {"width", train.width},
                        {"class_count", train.class_count},
                        {"train_records", train.size()},
                        {"mean", train.norm.mean},
                        {"std", train.norm.stddev}};
}

inline void write_manifest(const fs::path& path, const Dataset& train, const std::string& format) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write manifest " + path.string());
  out << manifest_json(train, format).dump(2) << '\n';
}

inline Normalization read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest " + path.string());
  const auto j = nlohmann::json::parse(in);
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

/// Training-time augmentation. Never applied to the eval split.
struct AugmentPolicy {
  bool enabled = true;
  std::size_t pad = 4;
  std::size_t crop = 0;  // output side; 0 keeps the input size
  double flip_prob = 0.5;
  // Optional resize of the image side to a random value in [resize_min, resize_max]
  // before padding and cropping; 0 disables it.
  std::size_t resize_min = 0;
  std::size_t resize_max = 0;

  static AugmentPolicy none() { return AugmentPolicy{false, 0, 0, 0.0, 0, 0}; }
};

template <class T>
struct Batch {
  Tensor<T> images;
  std::vector<std::int32_t> labels;
};

/// Fisher-Yates permutation of [0, n) determined by (seed, epoch).
inline std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_below(rng, i)]);
  return order;
}

namespace detail {
/// Bilinear resize of a planar float image to side x side.
inline std::vector<float> resize_bilinear(const std::vector<float>& img, std::size_t c, std::size_t h, std::size_t w,
                                          std::size_t oh, std::size_t ow) {
  std::vector<float> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      const double sy = std::clamp((y + 0.5) * static_cast<double>(h) / static_cast<double>(oh) - 0.5, 0.0, h - 1.0);
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < ow; ++x) {
        const double sx = std::clamp((x + 0.5) * static_cast<double>(w) / static_cast<double>(ow) - 0.5, 0.0, w - 1.0);
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double fx = sx - static_cast<double>(x0);
        const float* p = img.data() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        out[(ch * oh + y) * ow + x] = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}
}  // namespace detail

/// Output side length of augmented training images.
inline std::pair<std::size_t, std::size_t> augmented_extent(const Dataset& ds, const AugmentPolicy& policy) {
  if (!policy.enabled || policy.crop == 0) return {ds.height, ds.width};
  return {policy.crop, policy.crop};
}

/// Writes one normalized (and possibly augmented) image into `dst` (C x out_h x out_w).
template <class T>
void materialize_image(const Dataset& ds, std::size_t index, const AugmentPolicy& policy, bool augment,
                       std::mt19937_64& rng, T* dst) {
  const std::size_t c = ds.channels;
  std::size_t h = ds.height, w = ds.width;
  const auto src = ds.image(index);
  std::vector<float> img(src.begin(), src.end());

  std::size_t out_h = h, out_w = w;
  if (augment) {
    std::tie(out_h, out_w) = augmented_extent(ds, policy);
    if (policy.resize_max > 0) {
      const std::size_t lo = std::max<std::size_t>(1, policy.resize_min);
      const std::size_t side = lo + uniform_below(rng, policy.resize_max - lo + 1);
      img = detail::resize_bilinear(img, c, h, w, side, side);
      h = w = side;
    }
    const std::size_t ph = h + 2 * policy.pad, pw = w + 2 * policy.pad;
    if (ph < out_h || pw < out_w) throw Error("augmentation: crop larger than padded image");
    const std::size_t oy = uniform_below(rng, ph - out_h + 1);
    const std::size_t ox = uniform_below(rng, pw - out_w + 1);
    const bool flip = policy.flip_prob > 0.0 && uniform_unit(rng) < policy.flip_prob;
    std::vector<float> out(c * out_h * out_w, 0.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < out_h; ++y) {
        const auto sy = static_cast<std::ptrdiff_t>(y + oy) - static_cast<std::ptrdiff_t>(policy.pad);
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t x = 0; x < out_w; ++x) {
          const std::size_t tx = flip ? out_w - 1 - x : x;
          const auto sx = static_cast<std::ptrdiff_t>(tx + ox) - static_cast<std::ptrdiff_t>(policy.pad);
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          out[(ch * out_h + y) * out_w + x] = img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)];
        }
      }
    }
    img = std::move(out);
  } else if (h != out_h || w != out_w) {
    throw Error("materialize_image: size mismatch");
  }

  const std::size_t area = out_h * out_w;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mean = ds.norm.mean.at(ch), sd = ds.norm.stddev.at(ch);
    for (std::size_t j = 0; j < area; ++j) {
      dst[ch * area + j] = static_cast<T>((img[ch * area + j] / 255.0 - mean) / sd);
    }
  }
}

/// Shuffled, augmented mini-batches for one epoch. The final partial batch is dropped.
template <class T>
class EpochBatches {
 public:
  EpochBatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::size_t epoch, AugmentPolicy policy)
      : ds_(ds), batch_size_(batch_size), policy_(policy), order_(epoch_permutation(ds.size(), seed, epoch)),
        rng_(derive_seed(seed ^ 0xa5a5a5a5ULL, epoch)) {
    if (batch_size == 0 || batch_size > ds.size()) {
      throw Error("batch size " + std::to_string(batch_size) + " must lie in [1, " + std::to_string(ds.size()) + "]");
    }
    augment_ = policy_.enabled && ds_.split == Split::train;
  }

  std::size_t size() const noexcept { return ds_.size() / batch_size_; }
  const std::vector<std::size_t>& order() const noexcept { return order_; }

  /// Batches must be requested in order 0, 1, 2, ... (augmentation draws from one stream).
  Batch<T> next() {
    if (cursor_ >= size()) throw Error("epoch exhausted");
    const auto [oh, ow] = augment_ ? augmented_extent(ds_, policy_) : std::pair{ds_.height, ds_.width};
    Batch<T> b{Tensor<T>({batch_size_, ds_.channels, oh, ow}), std::vector<std::int32_t>(batch_size_)};
    const std::size_t stride = ds_.channels * oh * ow;
    for (std::size_t i = 0; i < batch_size_; ++i) {
      const std::size_t idx = order_[cursor_ * batch_size_ + i];
      materialize_image(ds_, idx, policy_, augment_, rng_, b.images.ptr() + i * stride);
      b.labels[i] = ds_.labels[idx];
    }
    ++cursor_;
    return b;
  }

 private:
  const Dataset& ds_;
  std::size_t batch_size_;
  AugmentPolicy policy_;
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  bool augment_ = false;
  std::size_t cursor_ = 0;
};

/// Sequential, unaugmented batch [begin, begin + count) for evaluation.
template <class T>
Batch<T> eval_batch(const Dataset& ds, std::size_t begin, std::size_t count) {
  count = std::min(count, ds.size() - begin);
  Batch<T> b{Tensor<T>({count, ds.channels, ds.height, ds.width}), std::vector<std::int32_t>(count)};
  std::mt19937_64 unused(0);
  const std::size_t stride = ds.image_bytes();
  for (std::size_t i = 0; i < count; ++i) {
    materialize_image(ds, begin + i, AugmentPolicy::none(), false, unused, b.images.ptr() + i * stride);
    b.labels[i] = ds.labels[begin + i];
  }
  return b;
}

}  // namespace ctmq

#endif  // CTMQ_DATA_HPP
