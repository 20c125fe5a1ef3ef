#ifndef CTMQ_SCHEDULE_HPP
#define CTMQ_SCHEDULE_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "ctmq/quantization.hpp"
#include "ctmq/tensor.hpp"

namespace ctmq {

enum class PhasePart { pretrain, soft_transfer, cyclic, cyclic_tail, final };

inline std::string to_string(PhasePart p) {
  switch (p) {
    case PhasePart::pretrain: return "pretrain";
    case PhasePart::soft_transfer: return "soft_transfer";
    case PhasePart::cyclic: return "cyclic";
    case PhasePart::cyclic_tail: return "cyclic_tail";
    case PhasePart::final: return "final";
  }
  return "?";
}

inline PhasePart phase_part_from_string(const std::string& s) {
  for (auto p : {PhasePart::pretrain, PhasePart::soft_transfer, PhasePart::cyclic, PhasePart::cyclic_tail, PhasePart::final})
    if (to_string(p) == s) return p;
  throw Error("unknown phase part '" + s + "'");
}

struct Phase {
  std::size_t index = 0;
  PhasePart part = PhasePart::final;
  int bit_depth = kRealBits;
  std::size_t epochs = 0;
  std::size_t iterations = 0;

  friend bool operator==(const Phase&, const Phase&) = default;
};

/// Inputs of the cyclic multi-step schedule. Budgets are in epochs; iterations are
/// epochs * floor(train_size / batch_size) since partial batches are dropped.
struct CtmqInputs {
  int target_bits = 1;
  int start_bits = 8;
  bool soft_transfer = true;
  std::size_t cycles = 9;
  std::size_t soft_epochs = 20;
  std::size_t cyclic_epochs = 20;
  std::size_t final_epochs = 200;
  /// Optional real-valued phase run first when no pretrained weights are supplied.
  std::size_t pretrain_epochs = 0;
  std::size_t train_size = 0;
  std::size_t batch_size = 512;

  std::size_t iterations_per_epoch() const { return batch_size ? train_size / batch_size : 0; }

  void validate() const {
    if (target_bits < 1 || target_bits + 1 >= kRealBits) {
      throw Error("schedule: target bit depth must lie in [1, 30], got " + std::to_string(target_bits));
    }
    if (soft_transfer && start_bits < target_bits + 2) {
      throw Error("schedule: start_bits (" + std::to_string(start_bits) + ") must be >= target_bits + 2 (" +
                  std::to_string(target_bits + 2) + ") when soft transfer is enabled");
    }
    if (soft_transfer && start_bits > kRealBits) throw Error("schedule: start_bits must be <= 32");
    // the tail phase always runs, so cyclic_epochs is needed even with zero cycles
    if ((soft_transfer && soft_epochs == 0) || cyclic_epochs == 0 || final_epochs == 0) {
      throw Error("schedule: every enabled phase needs at least one epoch");
    }
    if (batch_size == 0) throw Error("schedule: batch_size must be positive");
  }
};

/// Unrolls the three-part schedule: descending soft transfer from start_bits to
/// target+2, `cycles` alternations of (target+1, target), one target+1 tail phase,
/// then the final target-bit phase.
inline std::vector<Phase> expand_schedule(const CtmqInputs& in) {
  in.validate();
  const std::size_t per_epoch = in.iterations_per_epoch();
  std::vector<Phase> phases;
  auto push = [&](PhasePart part, int bits, std::size_t epochs) {
    phases.push_back(Phase{phases.size(), part, bits, epochs, epochs * per_epoch});
  };
  if (in.pretrain_epochs > 0) push(PhasePart::pretrain, kRealBits, in.pretrain_epochs);
  if (in.soft_transfer) {
    for (int n = in.start_bits; n >= in.target_bits + 2; --n) push(PhasePart::soft_transfer, n, in.soft_epochs);
  }
  for (std::size_t c = 0; c < in.cycles; ++c) {
    push(PhasePart::cyclic, in.target_bits + 1, in.cyclic_epochs);
    push(PhasePart::cyclic, in.target_bits, in.cyclic_epochs);
  }
  push(PhasePart::cyclic_tail, in.target_bits + 1, in.cyclic_epochs);
  push(PhasePart::final, in.target_bits, in.final_epochs);
  return phases;
}

/// Single-phase plan training directly at `bits` (the no-CTMQ baseline), with an
/// optional real-valued phase before it.
inline std::vector<Phase> direct_schedule(int bits, std::size_t epochs, std::size_t iterations_per_epoch,
                                          std::size_t pretrain_epochs = 0) {
  if (bits < 1 || bits > kRealBits) throw Error("schedule: bit depth must lie in [1, 32], got " + std::to_string(bits));
  if (epochs == 0) throw Error("schedule: direct plan needs at least one epoch");
  std::vector<Phase> phases;
  if (pretrain_epochs > 0) {
    phases.push_back({0, PhasePart::pretrain, kRealBits, pretrain_epochs, pretrain_epochs * iterations_per_epoch});
  }
  phases.push_back({phases.size(), PhasePart::final, bits, epochs, epochs * iterations_per_epoch});
  return phases;
}

}  // namespace ctmq

#endif  // CTMQ_SCHEDULE_HPP
