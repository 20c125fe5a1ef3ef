#ifndef CTMQ_CHECKPOINT_HPP
#define CTMQ_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "ctmq/tensor.hpp"

namespace ctmq {

/// Self-describing training snapshot.
///
/// File layout (all integers little-endian):
///   "CTMQCKPT" | u32 version
///   str config_digest | u32 phase_index | u32 epoch | u64 iteration
///   u32 n_meta  { str key | str value }
///   u32 n_tensor { tensor }
///   str optimizer_kind | u64 optimizer_step | u32 n_state { tensor }
/// where str = u32 byte length + UTF-8 bytes and
///   tensor = str name | u8 dtype (1 = f32) | u32 rank | u64 dims[rank] | f32 payload.
struct Checkpoint {
  static constexpr char kMagic[8] = {'C', 'T', 'M', 'Q', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  std::string config_digest;
  std::uint32_t phase_index = 0;
  std::uint32_t epoch = 0;  // epochs completed within the phase
  std::uint64_t iteration = 0;
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor<float>> tensors;
  std::string optimizer_kind;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, Tensor<float>> optimizer_state;  // "m/<param>", "v/<param>"

  const std::string& meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw Error("checkpoint has no metadata entry '" + key + "'");
    return it->second;
  }
};

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  template <class U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor<float>& t) {
    str(name);
    le<std::uint8_t>(1);
    le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) le<std::uint64_t>(d);
    for (float f : t.data()) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      le<std::uint32_t>(bits);
    }
  }
  std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw Error("checkpoint truncated at byte offset " + std::to_string(pos_) + " (need " + std::to_string(n) +
                  " more bytes)");
    }
  }
  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor<float>> tensor() {
    std::string name = str();
    const auto dtype = le<std::uint8_t>();
    if (dtype != 1) throw Error("checkpoint tensor " + name + ": unsupported element type " + std::to_string(dtype));
    const auto rank = le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(le<std::uint64_t>());
    const std::size_t n = numel(shape);
    need(n * 4);
    std::vector<float> data(n);
    for (auto& f : data) {
      const auto bits = le<std::uint32_t>();
      std::memcpy(&f, &bits, sizeof f);
    }
    return {std::move(name), Tensor<float>(std::move(shape), std::move(data))};
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t pos() const noexcept { return pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  detail::ByteWriter w;
  w.raw(Checkpoint::kMagic, sizeof Checkpoint::kMagic);
  w.le<std::uint32_t>(Checkpoint::kVersion);
  w.str(c.config_digest);
  w.le<std::uint32_t>(c.phase_index);
  w.le<std::uint32_t>(c.epoch);
  w.le<std::uint64_t>(c.iteration);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    w.str(k);
    w.str(v);
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) w.tensor(name, t);
  w.str(c.optimizer_kind);
  w.le<std::uint64_t>(c.optimizer_step);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.optimizer_state.size()));
  for (const auto& [name, t] : c.optimizer_state) w.tensor(name, t);
  return std::move(w.bytes());
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes);
  r.need(sizeof Checkpoint::kMagic);
  if (std::memcmp(bytes.data(), Checkpoint::kMagic, sizeof Checkpoint::kMagic) != 0) {
    throw Error("not a checkpoint: bad magic");
  }
  for (std::size_t i = 0; i < sizeof Checkpoint::kMagic; ++i) r.le<std::uint8_t>();
  const auto version = r.le<std::uint32_t>();
  if (version != Checkpoint::kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_digest = r.str();
  c.phase_index = r.le<std::uint32_t>();
  c.epoch = r.le<std::uint32_t>();
  c.iteration = r.le<std::uint64_t>();
  for (auto n = r.le<std::uint32_t>(); n > 0; --n) {
    std::string k = r.str();
    c.metadata[k] = r.str();
  }
  for (auto n = r.le<std::uint32_t>(); n > 0; --n) c.tensors.insert(r.tensor());
  c.optimizer_kind = r.str();
  c.optimizer_step = r.le<std::uint64_t>();
  for (auto n = r.le<std::uint32_t>(); n > 0; --n) c.optimizer_state.insert(r.tensor());
  if (!r.done()) throw Error("checkpoint has trailing bytes at offset " + std::to_string(r.pos()));
  return c;
}

/// Writes through a temporary file and renames, so an existing file is never left half-written.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto bytes = encode_checkpoint(c);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ctmq

#endif  // CTMQ_CHECKPOINT_HPP
