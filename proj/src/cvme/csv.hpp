#ifndef CVME_CSV_HPP
#define CVME_CSV_HPP

#include <map>
#include <string>
#include <vector>

#include "cvme/dataset.hpp"
#include "cvme/experiments.hpp"

namespace cvme {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& text, const std::string& context);
long long parse_integer(const std::string& text, const std::string& context);

// Atomic write: temp file in the same directory, then rename.
void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

// Dataset file layout (header required, comma-separated):
//   y,a_star,s,a,x1..xp[,kappa][,a_full,y0,y1,kappa_true]
// `a` is empty where s = 0. The four trailing generator columns are optional
// and only present when a generated file was exported with them.
struct LoadedDataset {
  GeneratedSample sample;
  bool has_oracle = false;
};

LoadedDataset read_dataset_csv(const std::string& path);
std::string dataset_to_csv(const GeneratedSample& sample, bool include_oracle);
void write_dataset_csv(const GeneratedSample& sample, const std::string& path,
                       bool include_oracle);

// One output record per estimator invocation.
struct ResultRecord {
  std::string tag;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  // key=value pairs joined with ';' in the diagnostics column
  std::map<std::string, double> diagnostics;
};

std::string results_to_csv(const std::vector<ResultRecord>& records);
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);

}  // namespace cvme

#endif
