#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "fedsim/core.hpp"

namespace fedsim {

// One row per aggregation round. delay_s and bits are per-round figures;
// cumulative totals live in the round state.
struct MetricsRecord {
  long round = 0;
  double delay_s = 0.0;
  long long bits = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;  // NaN for regression tasks
  std::optional<double> bound_fedavg;
  std::optional<double> bound_uveqfed;
  std::optional<double> bound_cotaf;
  std::vector<int> participants;
};

namespace metricsdetail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace metricsdetail

// Fixed, documented column order:
//   round,delay_s,bits,train_loss,test_loss,test_acc[,bound_fedavg]
//   [,bound_uveqfed][,bound_cotaf],participants
// Bound columns appear only when the run emits bounds; participants is a
// semicolon-joined id list.
inline std::string metrics_header(bool with_fedavg_bound, bool with_uveqfed_bound,
                                  bool with_cotaf_bound) {
  std::string h = "round,delay_s,bits,train_loss,test_loss,test_acc";
  if (with_fedavg_bound) h += ",bound_fedavg";
  if (with_uveqfed_bound) h += ",bound_uveqfed";
  if (with_cotaf_bound) h += ",bound_cotaf";
  h += ",participants";
  return h;
}

inline std::string metrics_row(const MetricsRecord& r) {
  using metricsdetail::fmt;
  std::string line = std::to_string(r.round) + ',' + fmt(r.delay_s) + ',' +
                     std::to_string(r.bits) + ',' + fmt(r.train_loss) + ',' +
                     fmt(r.test_loss) + ',' + fmt(r.test_acc);
  if (r.bound_fedavg) line += ',' + fmt(*r.bound_fedavg);
  if (r.bound_uveqfed) line += ',' + fmt(*r.bound_uveqfed);
  if (r.bound_cotaf) line += ',' + fmt(*r.bound_cotaf);
  line += ',';
  for (std::size_t i = 0; i < r.participants.size(); ++i) {
    if (i) line += ';';
    line += std::to_string(r.participants[i]);
  }
  return line;
}

}  // namespace fedsim
