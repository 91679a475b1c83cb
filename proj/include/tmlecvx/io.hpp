#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmlecvx/median_reg.hpp"
#include "tmlecvx/missing_mean.hpp"
#include "tmlecvx/shift_effect.hpp"
#include "tmlecvx/simulate.hpp"

namespace tmle::io {

using json = nlohmann::json;

// CSV schemas (header row required, '.' decimal separator, UTF-8):
//   missing: x1,...,xd,m,y  (y empty when m = 0)
//   median:  x1,...,xd,y
//   shift:   w1,...,wd,a,y
// Parse failures throw UsageError with a "line L, column C" diagnostic.

missing_mean::MissingDataset read_missing_csv(const std::string& path);
median_reg::XYDataset read_median_csv(const std::string& path);
// gamma comes from the caller; the exposure range is the observed span
// unless explicit bounds are supplied.
shift_effect::ShiftDataset read_shift_csv(const std::string& path,
                                          double gamma,
                                          double a_min = std::numeric_limits<double>::quiet_NaN(),
                                          double a_max = std::numeric_limits<double>::quiet_NaN());

void write_missing_csv(const std::string& path,
                       const missing_mean::MissingDataset& d);
void write_median_csv(const std::string& path, const median_reg::XYDataset& d);
void write_shift_csv(const std::string& path,
                     const shift_effect::ShiftDataset& d);

json report_to_json(const EstimateReport& rep);
json oracle_to_json(const simulate::OracleResult& res);
json study_to_json(const simulate::StudyResult& res);
// One row per estimator: label, relative efficiency, percent bias, MSE,
// iterations, failures.
std::string study_to_csv(const simulate::StudyResult& res);

std::string sha256_file(const std::string& path);

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string version;
  double wall_seconds = 0.0;
  std::vector<std::pair<std::string, std::string>> outputs;  // path, digest

  void add_output(const std::string& path);  // digests the file now
  void write(const std::string& path) const;
};

}  // namespace tmle::io
