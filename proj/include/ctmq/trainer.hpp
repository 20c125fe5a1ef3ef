#ifndef CTMQ_TRAINER_HPP
#define CTMQ_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctmq/autodiff.hpp"
#include "ctmq/checkpoint.hpp"
#include "ctmq/data.hpp"
#include "ctmq/metrics.hpp"
#include "ctmq/model.hpp"
#include "ctmq/ops.hpp"
#include "ctmq/optimizer.hpp"
#include "ctmq/random.hpp"
#include "ctmq/schedule.hpp"

namespace ctmq {

struct EvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  double loss = 0.0;
  std::size_t count = 0;
};

/// Top-1/top-5 accuracy and mean loss in eval mode (BN running statistics).
/// Every sample is processed independently, so results do not depend on batch size.
template <class T>
EvalResult evaluate(ResNet<T>& model, const Dataset& ds, std::size_t batch_size) {
  if (batch_size == 0) throw Error("evaluate: batch size must be positive");
  if (ds.channels != model.config().in_channels) {
    throw Error("evaluate: dataset has " + std::to_string(ds.channels) + " channels, model expects " +
                std::to_string(model.config().in_channels));
  }
  EvalResult r;
  std::size_t hit1 = 0, hit5 = 0;
  double loss = 0.0;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch_size) {
    const auto batch = eval_batch<T>(ds, begin, batch_size);
    Tape<T> tape(false);
    const auto logits = model.forward(tape, batch.images, false);
    const std::size_t k = logits.shape()[1];
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      const T* row = logits.value().ptr() + i * k;
      const auto label = static_cast<std::size_t>(batch.labels[i]);
      if (label >= k) throw Error("evaluate: label " + std::to_string(label) + " outside model classes");
      // rank of the true class, ties broken towards lower class index
      std::size_t rank = 0;
      for (std::size_t j = 0; j < k; ++j) {
        if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++rank;
      }
      hit1 += rank < 1;
      hit5 += rank < 5;
      double mx = row[0];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
      loss += std::log(denom) + mx - static_cast<double>(row[label]);
    }
  }
  r.count = ds.size();
  if (r.count) {
    r.top1 = static_cast<double>(hit1) / static_cast<double>(r.count);
    r.top5 = static_cast<double>(hit5) / static_cast<double>(r.count);
    r.loss = loss / static_cast<double>(r.count);
  }
  return r;
}

/// Everything a schedule run needs besides the phase list and the data.
struct TrainSetup {
  ModelConfig model;
  OptimizerConfig optimizer;
  LrPolicy lr_policy = LrPolicy::poly;
  std::size_t batch_size = 512;
  std::size_t eval_batch_size = 256;
  AugmentPolicy augment;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 10;  // epochs, final phase only; 0 disables
  bool eval_phase_start = false;
  std::string config_digest;
  std::map<std::string, std::string> metadata;
};

template <class T>
struct RunHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  /// `path_hint` is e.g. "phase03" or "phase25_epoch0010".
  std::function<void(const Checkpoint&, const std::string& path_hint)> on_checkpoint;
  /// Called after weights were handed over and before the first training step.
  std::function<void(const Phase&, const ResNet<T>&)> on_phase_start;
  std::function<void(const Phase&, const ResNet<T>&)> on_phase_end;
};

template <class T>
struct RunResult {
  std::map<std::string, Tensor<T>> final_params;
  std::vector<MetricsRow> rows;
};

inline std::uint64_t init_seed(std::uint64_t master) { return derive_seed(master, 0xffffffffULL); }

template <class T>
Checkpoint make_checkpoint(const ResNet<T>& model, const AdamState* adam, const TrainSetup& setup, const Phase& phase,
                           std::size_t epochs_done, std::uint64_t iteration) {
  Checkpoint c;
  c.config_digest = setup.config_digest;
  c.phase_index = static_cast<std::uint32_t>(phase.index);
  c.epoch = static_cast<std::uint32_t>(epochs_done);
  c.iteration = iteration;
  c.metadata = setup.metadata;
  c.metadata["phase.part"] = to_string(phase.part);
  c.metadata["phase.bit_depth"] = std::to_string(phase.bit_depth);
  c.metadata["phase.epochs"] = std::to_string(phase.epochs);
  for (const auto& [name, e] : model.params().entries()) c.tensors.emplace(name, e.var.value().template cast<float>());
  c.optimizer_kind = to_string(setup.optimizer.kind);
  if (adam) {
    c.optimizer_step = adam->step;
    for (const auto& [name, m] : adam->m) c.optimizer_state.emplace("m/" + name, m);
    for (const auto& [name, v] : adam->v) c.optimizer_state.emplace("v/" + name, v);
  }
  return c;
}

template <class T>
std::map<std::string, Tensor<T>> checkpoint_values(const Checkpoint& c) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, t] : c.tensors) out.emplace(name, t.template cast<T>());
  return out;
}

/// Trains every phase in order. Each phase builds the model at its bit depth, takes the
/// previous phase's real-valued weights, and trains with a fresh optimizer and a fresh
/// poly schedule. `initial` seeds the first phase (otherwise a seeded from-scratch init);
/// `resume` restarts from a checkpoint written by an earlier run of the same plan.
template <class T>
RunResult<T> run_schedule(const std::vector<Phase>& phases, const TrainSetup& setup, const Dataset& train,
                          const Dataset& eval, const std::optional<Checkpoint>& initial = std::nullopt,
                          const std::optional<Checkpoint>& resume = std::nullopt, const RunHooks<T>& hooks = {}) {
  if (phases.empty()) throw Error("run_schedule: empty phase list");
  setup.optimizer.validate();
  const std::size_t per_epoch = setup.batch_size ? train.size() / setup.batch_size : 0;
  if (per_epoch == 0) {
    throw Error("run_schedule: training set of " + std::to_string(train.size()) + " images yields no full batch of " +
                std::to_string(setup.batch_size));
  }
  for (const auto& p : phases) {
    if (p.iterations != p.epochs * per_epoch) {
      throw Error("run_schedule: phase " + std::to_string(p.index) + " plans " + std::to_string(p.iterations) +
                  " iterations but the data yields " + std::to_string(p.epochs * per_epoch));
    }
  }

  std::size_t start_phase = 0, start_epoch = 0;
  std::uint64_t iteration = 0;
  std::optional<std::map<std::string, Tensor<T>>> carried;
  std::optional<AdamState> resumed_adam;
  if (resume) {
    if (!setup.config_digest.empty() && resume->config_digest != setup.config_digest) {
      throw Error("resume checkpoint was written by a different configuration (digest " + resume->config_digest +
                  " vs " + setup.config_digest + ")");
    }
    if (resume->phase_index >= phases.size()) throw Error("resume checkpoint phase index beyond the plan");
    start_phase = resume->phase_index;
    start_epoch = resume->epoch;
    iteration = resume->iteration;
    carried = checkpoint_values<T>(*resume);
    if (start_epoch >= phases[start_phase].epochs) {
      ++start_phase;
      start_epoch = 0;
    } else {
      AdamState st;
      st.step = resume->optimizer_step;
      for (const auto& [key, t] : resume->optimizer_state) {
        (key.rfind("m/", 0) == 0 ? st.m : st.v).emplace(key.substr(2), t);
      }
      resumed_adam = std::move(st);
    }
  } else if (initial) {
    carried = checkpoint_values<T>(*initial);
  }

  RunResult<T> result;
  if (start_phase >= phases.size()) {
    result.final_params = *carried;
    return result;
  }

  auto emit = [&](MetricsRow row) {
    if (hooks.on_metrics) hooks.on_metrics(row);
    result.rows.push_back(row);
  };

  for (std::size_t pi = start_phase; pi < phases.size(); ++pi) {
    const Phase& phase = phases[pi];
    const auto phase_clock = std::chrono::steady_clock::now();
    ResNet<T> model(setup.model.with_bits(phase.bit_depth), init_seed(setup.seed));
    if (carried) load_values(*carried, model.params());
    if (hooks.on_phase_start) hooks.on_phase_start(phase, model);

    AdamState adam;
    std::size_t first_epoch = 0;
    if (pi == start_phase && resumed_adam) {
      adam = *resumed_adam;
      first_epoch = start_epoch;
    }
    const LrSchedule schedule{setup.lr_policy, phase.epochs};
    const std::uint64_t phase_seed = derive_seed(setup.seed, phase.index);

    auto evaluation_row = [&](std::size_t epochs_done, double lr, double train_loss) {
      const auto ev = evaluate(model, eval, setup.eval_batch_size);
      MetricsRow row;
      row.phase = phase.index;
      row.part = phase.part;
      row.bit_depth = phase.bit_depth;
      row.epoch = epochs_done;
      row.iteration = iteration;
      row.lr = lr;
      row.train_loss = train_loss;
      row.eval_top1 = ev.top1;
      row.eval_top5 = ev.top5;
      row.eval_loss = ev.loss;
      row.mean_abs_quant_error = mean_abs_quant_error(model);
      row.threads = num_threads();
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - phase_clock).count();
      return row;
    };

    if (setup.eval_phase_start && first_epoch == 0) emit(evaluation_row(0, NAN, NAN));

    for (std::size_t e = first_epoch; e < phase.epochs; ++e) {
      const double lr = lr_at(schedule, setup.optimizer.lr_base, e);
      EpochBatches<T> batches(train, setup.batch_size, phase_seed, e, setup.augment);
      double loss_sum = 0.0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        auto batch = batches.next();
        model.params().zero_grad();
        Tape<T> tape;
        auto logits = model.forward(tape, batch.images, true);
        auto loss = ops::softmax_cross_entropy(tape, logits, batch.labels);
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv)) {
          throw Error("non-finite loss in phase " + std::to_string(phase.index) + " (" + to_string(phase.part) + ", " +
                      std::to_string(phase.bit_depth) + " bits), epoch " + std::to_string(e) + ", batch " +
                      std::to_string(b));
        }
        loss_sum += lv;
        tape.backward(loss);
        if (setup.optimizer.kind == OptimizerKind::adam) {
          adam_step(model.params(), adam, lr, setup.optimizer);
        } else {
          sgd_step(model.params(), lr, setup.optimizer.weight_decay);
        }
        ++iteration;
      }
      emit(evaluation_row(e + 1, lr, loss_sum / static_cast<double>(batches.size())));

      const bool phase_end = e + 1 == phase.epochs;
      const bool periodic = phase.part == PhasePart::final && setup.checkpoint_every > 0 &&
                            (e + 1) % setup.checkpoint_every == 0 && !phase_end;
      if ((phase_end || periodic) && hooks.on_checkpoint) {
        char hint[64];
        if (phase_end) {
          std::snprintf(hint, sizeof hint, "phase%02zu", phase.index);
        } else {
          std::snprintf(hint, sizeof hint, "phase%02zu_epoch%04zu", phase.index, e + 1);
        }
        hooks.on_checkpoint(make_checkpoint(model, &adam, setup, phase, e + 1, iteration), hint);
      }
    }
    if (hooks.on_phase_end) hooks.on_phase_end(phase, model);
    carried = model.params().snapshot();
  }
  result.final_params = *carried;
  return result;
}

}  // namespace ctmq

#endif  // CTMQ_TRAINER_HPP
