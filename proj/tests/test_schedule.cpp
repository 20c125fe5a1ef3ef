#include <gtest/gtest.h>

#include "ctmq/schedule.hpp"
#include "support/schedule_oracle.hpp"

using namespace ctmq;
using namespace ctmq::testing;

namespace {

CtmqInputs cifar_defaults() {
  CtmqInputs in;
  in.train_size = 50000;
  in.batch_size = 512;
  return in;
}

}  // namespace

TEST(ExpandSchedule, MatchesUnrolledLoopsOnGrid) {
  for (int k : {1, 2}) {
    for (int start : {4, 8}) {
      for (std::size_t cycles : {0u, 1u, 3u, 9u}) {
        CtmqInputs in = cifar_defaults();
        in.target_bits = k;
        in.start_bits = start;
        in.cycles = cycles;
        in.soft_epochs = 3;
        in.cyclic_epochs = 5;
        in.final_epochs = 7;
        const std::size_t ipe = in.iterations_per_epoch();
        const auto oracle = unrolled_plan(k, start, cycles, 3 * ipe, 5 * ipe, 7 * ipe);
        const auto phases = expand_schedule(in);
        ASSERT_EQ(phases.size(), oracle.size()) << "k=" << k << " start=" << start << " C=" << cycles;
        for (std::size_t i = 0; i < phases.size(); ++i) {
          EXPECT_EQ(phases[i].index, i);
          EXPECT_EQ((OraclePhase{phases[i].bit_depth, phases[i].iterations}), oracle[i])
              << "phase " << i << " k=" << k << " start=" << start << " C=" << cycles;
        }
      }
    }
  }
}

TEST(ExpandSchedule, PaperDefaultsGiveTwentySixPhases) {
  const auto phases = expand_schedule(cifar_defaults());
  ASSERT_EQ(phases.size(), 26u);
  const std::vector<int> soft{8, 7, 6, 5, 4, 3};
  for (std::size_t i = 0; i < soft.size(); ++i) {
    EXPECT_EQ(phases[i].part, PhasePart::soft_transfer);
    EXPECT_EQ(phases[i].bit_depth, soft[i]);
  }
  for (std::size_t i = 6; i < 24; ++i) {
    EXPECT_EQ(phases[i].part, PhasePart::cyclic);
    EXPECT_EQ(phases[i].bit_depth, i % 2 == 0 ? 2 : 1);
  }
  EXPECT_EQ(phases[24].part, PhasePart::cyclic_tail);
  EXPECT_EQ(phases[24].bit_depth, 2);
  EXPECT_EQ(phases[25].part, PhasePart::final);
  EXPECT_EQ(phases[25].bit_depth, 1);
  EXPECT_EQ(phases[25].epochs, 200u);
  EXPECT_EQ(phases[0].iterations, 20u * 97u);
}

TEST(ExpandSchedule, NoSoftTransferNoCycles) {
  CtmqInputs in = cifar_defaults();
  in.soft_transfer = false;
  in.cycles = 0;
  const auto phases = expand_schedule(in);
  ASSERT_EQ(phases.size(), 2u);
  EXPECT_EQ(phases[0].bit_depth, 2);
  EXPECT_EQ(phases[1].bit_depth, 1);
}

TEST(ExpandSchedule, EightPhasePlanForTwoBits) {
  CtmqInputs in = cifar_defaults();
  in.target_bits = 2;
  in.start_bits = 6;
  in.cycles = 2;
  const auto phases = expand_schedule(in);
  std::vector<int> bits;
  for (const auto& p : phases) bits.push_back(p.bit_depth);
  EXPECT_EQ(bits, (std::vector<int>{6, 5, 4, 3, 2, 3, 2, 3, 2}));
  in.cycles = 1;
  EXPECT_EQ(expand_schedule(in).size(), 7u);
}

TEST(ExpandSchedule, SmallestSoftTransfer) {
  CtmqInputs in = cifar_defaults();
  in.start_bits = 3;
  in.cycles = 1;
  const auto phases = expand_schedule(in);
  ASSERT_EQ(phases.size(), 5u);
  EXPECT_EQ(phases[0].bit_depth, 3);
  EXPECT_EQ(phases[0].part, PhasePart::soft_transfer);
}

TEST(ExpandSchedule, PretrainComesFirst) {
  CtmqInputs in = cifar_defaults();
  in.pretrain_epochs = 4;
  const auto phases = expand_schedule(in);
  ASSERT_EQ(phases.size(), 27u);
  EXPECT_EQ(phases[0].part, PhasePart::pretrain);
  EXPECT_EQ(phases[0].bit_depth, kRealBits);
  EXPECT_EQ(phases[1].index, 1u);
}

TEST(ExpandSchedule, PartialBatchesAreDropped) {
  CtmqInputs in = cifar_defaults();
  EXPECT_EQ(in.iterations_per_epoch(), 97u);
  EXPECT_EQ(expand_schedule(in).front().iterations, 1940u);
}

TEST(ExpandSchedule, ValidationErrors) {
  CtmqInputs in = cifar_defaults();
  in.start_bits = 2;
  EXPECT_THROW(expand_schedule(in), Error);
  in = cifar_defaults();
  in.target_bits = 0;
  EXPECT_THROW(expand_schedule(in), Error);
  in = cifar_defaults();
  in.final_epochs = 0;
  EXPECT_THROW(expand_schedule(in), Error);
  in = cifar_defaults();
  in.batch_size = 0;
  EXPECT_THROW(expand_schedule(in), Error);
  in = cifar_defaults();
  in.soft_transfer = false;
  in.start_bits = 1;
  EXPECT_NO_THROW(expand_schedule(in));
}

TEST(DirectSchedule, SinglePhase) {
  const auto phases = direct_schedule(1, 10, 97);
  ASSERT_EQ(phases.size(), 1u);
  EXPECT_EQ(phases[0].iterations, 970u);
  EXPECT_EQ(direct_schedule(2, 10, 97, 5).size(), 2u);
  EXPECT_THROW(direct_schedule(0, 10, 97), Error);
  EXPECT_THROW(direct_schedule(1, 0, 97), Error);
}

TEST(PhasePart, StringRoundTrip) {
  for (auto p : {PhasePart::pretrain, PhasePart::soft_transfer, PhasePart::cyclic, PhasePart::cyclic_tail,
                 PhasePart::final}) {
    EXPECT_EQ(phase_part_from_string(to_string(p)), p);
  }
  EXPECT_THROW(phase_part_from_string("warmup"), Error);
}
