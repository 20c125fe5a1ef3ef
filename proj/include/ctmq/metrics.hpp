#ifndef CTMQ_METRICS_HPP
#define CTMQ_METRICS_HPP

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ctmq/schedule.hpp"

namespace ctmq {

/// One evaluation pass. Empty numeric fields (NaN) are written as blanks.
struct MetricsRow {
  std::size_t phase = 0;
  PhasePart part = PhasePart::final;
  int bit_depth = kRealBits;
  std::size_t epoch = 0;      // epochs completed within the phase
  std::size_t iteration = 0;  // cumulative optimizer steps over the run
  double lr = NAN;
  double train_loss = NAN;
  double eval_top1 = NAN;
  double eval_top5 = NAN;
  double eval_loss = NAN;
  double mean_abs_quant_error = NAN;
  std::size_t threads = 1;
  double wall_seconds = 0.0;  // kept out of metrics.csv, which must be reproducible
};

inline const char* metrics_header() {
  return "phase,part,bit_depth,epoch,iteration,lr,train_loss,eval_top1,eval_top5,eval_loss,mean_abs_quant_error,threads";
}

namespace detail {
inline std::string fmt(const char* spec, double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}
}  // namespace detail

inline std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.phase << ',' << to_string(r.part) << ',' << r.bit_depth << ',' << r.epoch << ',' << r.iteration << ','
     << detail::fmt("%.9g", r.lr) << ',' << detail::fmt("%.6f", r.train_loss) << ','
     << detail::fmt("%.6f", r.eval_top1) << ',' << detail::fmt("%.6f", r.eval_top5) << ','
     << detail::fmt("%.6f", r.eval_loss) << ',' << detail::fmt("%.6f", r.mean_abs_quant_error) << ',' << r.threads;
  return os.str();
}

inline MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) f.push_back(item);
  if (!line.empty() && line.back() == ',') f.emplace_back();
  if (f.size() != 12) throw Error("metrics row has " + std::to_string(f.size()) + " fields, expected 12: " + line);
  auto num = [](const std::string& s) { return s.empty() ? NAN : std::stod(s); };
  MetricsRow r;
  r.phase = std::stoull(f[0]);
  r.part = phase_part_from_string(f[1]);
  r.bit_depth = std::stoi(f[2]);
  r.epoch = std::stoull(f[3]);
  r.iteration = std::stoull(f[4]);
  r.lr = num(f[5]);
  r.train_loss = num(f[6]);
  r.eval_top1 = num(f[7]);
  r.eval_top5 = num(f[8]);
  r.eval_loss = num(f[9]);
  r.mean_abs_quant_error = num(f[10]);
  r.threads = std::stoull(f[11]);
  return r;
}

inline std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != metrics_header()) throw Error(path.string() + ": unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

/// Append-only CSV writer; every row is flushed so an interrupted run leaves a valid prefix.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, bool append) {
    const bool fresh = !append || !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw Error("cannot open metrics file " + path.string());
    if (fresh) out_ << metrics_header() << '\n' << std::flush;
  }

  void write(const MetricsRow& row) { out_ << format_metrics_row(row) << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

}  // namespace ctmq

#endif  // CTMQ_METRICS_HPP
