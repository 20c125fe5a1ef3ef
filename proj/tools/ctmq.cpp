// ctmq: train, evaluate and inspect cyclic multi-step quantized networks.

#include <CLI11.hpp>

#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace ctmq::cli;
  CLI::App app{"Quantization-aware training with cyclic multi-step bit-depth schedules"};
  app.require_subcommand(1);

  TrainOptions train;
  std::string train_config;
  std::uint64_t train_seed = 0;
  std::size_t train_threads = 0;
  std::string train_data;
  auto* t = app.add_subcommand("train", "Run a full schedule and write metrics and checkpoints");
  t->add_option("--config", train_config, "Config file (key = value lines)")->check(CLI::ExistingFile);
  t->add_option("--override", train.config.overrides, "key=value override, repeatable");
  auto* seed_opt = t->add_option("--seed", train_seed, "Master seed (run.seed)");
  auto* threads_opt = t->add_option("--threads", train_threads, "Worker threads (run.threads)")->check(CLI::PositiveNumber);
  auto* data_opt = t->add_option("--data", train_data, "Data root (data.root)");
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_flag("--resume", train.resume, "Continue from the newest checkpoint in the run directory");

  EvalOptions eval;
  std::string eval_data;
  std::size_t eval_batch = 0, eval_threads = 0;
  int eval_bits = 0;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  auto* e_data = e->add_option("--data", eval_data, "Data root (defaults to the one recorded in the checkpoint)");
  auto* e_batch = e->add_option("--batch-size", eval_batch, "Eval batch size")->check(CLI::PositiveNumber);
  auto* e_bits = e->add_option("--bits", eval_bits, "Evaluate at this bit depth instead")->check(CLI::Range(1, 32));
  auto* e_threads = e->add_option("--threads", eval_threads, "Worker threads")->check(CLI::PositiveNumber);
  e->add_option("--limit", eval.limit, "Evaluate only the first N records");
  std::string eval_out;
  auto* e_out = e->add_option("--out", eval_out, "Also write the result as a metrics CSV row to this file");

  ExpandOptions expand;
  std::string expand_config;
  auto* x = app.add_subcommand("expand", "Print the phase plan of a config as CSV");
  x->add_option("--config", expand_config, "Config file")->check(CLI::ExistingFile);
  x->add_option("--override", expand.config.overrides, "key=value override, repeatable");
  x->add_option("--train-size", expand.train_size, "Training-set size used to count iterations");

  QuantErrorOptions qerr;
  auto* q = app.add_subcommand("quant-error", "Mean quantization error of a checkpoint's weights for k = 1..N");
  q->add_option("--checkpoint", qerr.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  q->add_option("--max-bits", qerr.max_bits, "Largest bit depth")->check(CLI::Range(1, 31));

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) {
      if (!train_config.empty()) train.config.path = train_config;
      if (*seed_opt) train.seed = train_seed;
      if (*threads_opt) train.threads = train_threads;
      if (*data_opt) train.data_root = train_data;
      return run_train(train, std::cout);
    }
    if (e->parsed()) {
      if (*e_data) eval.data_root = eval_data;
      if (*e_batch) eval.batch_size = eval_batch;
      if (*e_bits) eval.bits = eval_bits;
      if (*e_threads) eval.threads = eval_threads;
      if (*e_out) eval.metrics_out = eval_out;
      return run_eval(eval, std::cout);
    }
    if (x->parsed()) {
      if (!expand_config.empty()) expand.config.path = expand_config;
      return run_expand(expand, std::cout);
    }
    if (q->parsed()) return run_quant_error(qerr, std::cout);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
