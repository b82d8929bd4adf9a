#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "distil/model.hpp"

namespace distil {

// Confused pairs are capped at the ten most frequent.
inline constexpr int kTopConfusedPairs = 10;

struct MetricsReport {
  double map_at_3 = 0.0;
  double map_at_10 = 0.0;
  double accuracy = 0.0;
  double f1_at_3 = 0.0;
  int n = 0;
  std::map<int, int> per_class_errors;  // true class -> top-1 error count
  // ((true, predicted), count), sorted by count descending then pair index.
  std::vector<std::pair<std::pair<int, int>, int>> top_confused_pairs;
};

// 1/rank of the true label if rank <= k, else 0 (single relevant label).
double ap_at_k(const ProbDist& p, int y, int k);

double map_at_k(const std::vector<ProbDist>& preds, const std::vector<int>& labels, int k);

// Per sample: precision hit/3, recall hit, so F1 is 0.5 on a top-3 hit and 0
// otherwise; the mean has a 0.5 ceiling.
double f1_at_3(const std::vector<ProbDist>& preds, const std::vector<int>& labels);

// Full report: ranking metrics, accuracy, per-class error counts, confused
// pairs. MAP@10 truncates at C when C < 10.
MetricsReport error_report(const std::vector<ProbDist>& preds, const std::vector<int>& labels);

std::string metrics_to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const std::string& text);

std::string metrics_csv_header();
std::string metrics_to_csv_row(const MetricsReport& r);

}  // namespace distil
