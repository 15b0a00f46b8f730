#pragma once

#include <sstream>
#include <string>
#include <vector>

namespace dpc {

// One published number. The config hash binds the row to the exact run
// configuration that produced it.
struct ReportRow {
  std::string experiment_id;
  std::string split;     // "seen", "unseen", "all", or a custom set name
  std::string category;  // category name, or "all" for split-level rows
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline std::string report_csv_header() {
  return "experiment_id,split,category,metric,value,seed,config_hash";
}

inline std::string to_csv_line(const ReportRow& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.experiment_id << ',' << r.split << ',' << r.category << ',' << r.metric << ','
     << r.value << ',' << r.seed << ',' << r.config_hash;
  return os.str();
}

inline std::string report_to_csv(const std::vector<ReportRow>& rows) {
  std::string out = report_csv_header() + "\n";
  for (const auto& r : rows) out += to_csv_line(r) + "\n";
  return out;
}

}  // namespace dpc
