#ifndef CTMQ_TESTS_FIXTURES_HPP
#define CTMQ_TESTS_FIXTURES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ctmq/data.hpp"

namespace ctmq::testing {

namespace fs = std::filesystem;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("ctmq-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// 32x32 RGB images whose class is visible in the colour balance and in a stripe
/// frequency, with pixel noise on top.
inline Dataset pattern_dataset(std::size_t n, std::size_t classes, std::uint64_t seed, Split split = Split::train,
                               double noise = 40.0) {
  Dataset ds;
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.class_count = classes;
  ds.split = split;
  ds.norm = Normalization::identity(3);
  ds.labels.resize(n);
  ds.pixels.resize(n * kCifarImageBytes);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::int32_t>(i % classes);
    ds.labels[i] = label;
    const double freq = 1.0 + static_cast<double>(label % 5);
    for (std::size_t c = 0; c < 3; ++c) {
      const double tint = 60.0 + 35.0 * static_cast<double>((label + static_cast<std::int32_t>(c) * 3) % 5);
      for (std::size_t y = 0; y < 32; ++y) {
        for (std::size_t x = 0; x < 32; ++x) {
          const double stripe = (label < 5 ? std::sin(freq * 0.4 * static_cast<double>(y))
                                           : std::sin(freq * 0.4 * static_cast<double>(x)));
          const double v = tint + 50.0 * stripe + jitter(rng);
          ds.pixels[i * kCifarImageBytes + (c * 32 + y) * 32 + x] =
              static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  return ds;
}

inline std::vector<std::uint8_t> cifar_records(const Dataset& ds, std::size_t begin, std::size_t end,
                                               std::size_t label_bytes = 1) {
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = begin; i < end; ++i) {
    for (std::size_t b = 0; b + 1 < label_bytes; ++b) bytes.push_back(static_cast<std::uint8_t>(ds.labels[i] / 5));
    bytes.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    const auto img = ds.image(i);
    bytes.insert(bytes.end(), img.begin(), img.end());
  }
  return bytes;
}

/// Writes `train` as five CIFAR-10 batch files (split as evenly as possible) and `eval` as test_batch.bin.
inline void write_cifar10(const fs::path& dir, const Dataset& train, const Dataset& eval) {
  fs::create_directories(dir);
  const std::size_t n = train.size();
  for (std::size_t f = 0; f < 5; ++f) {
    write_bytes(dir / ("data_batch_" + std::to_string(f + 1) + ".bin"), cifar_records(train, n * f / 5, n * (f + 1) / 5));
  }
  write_bytes(dir / "test_batch.bin", cifar_records(eval, 0, eval.size()));
}

inline std::vector<std::uint8_t> idx_bytes(std::uint8_t ndims, const std::vector<std::uint32_t>& dims,
                                           const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> out{0, 0, 0x08, ndims};
  for (auto d : dims) {
    out.push_back(static_cast<std::uint8_t>(d >> 24));
    out.push_back(static_cast<std::uint8_t>(d >> 16));
    out.push_back(static_cast<std::uint8_t>(d >> 8));
    out.push_back(static_cast<std::uint8_t>(d));
  }
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

}  // namespace ctmq::testing

#endif  // CTMQ_TESTS_FIXTURES_HPP
