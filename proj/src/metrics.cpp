#include "distil/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"
#include "distil/selection.hpp"

namespace distil {

namespace {

void check_inputs(const std::vector<ProbDist>& preds, const std::vector<int>& labels) {
  if (preds.empty()) {
    throw DataError("no predictions to score");
  }
  if (preds.size() != labels.size()) {
    throw DataError("prediction/label count mismatch");
  }
}

}  // namespace

double ap_at_k(const ProbDist& p, int y, int k) {
  if (k < 1 || k > static_cast<int>(p.size())) {
    throw ConfigError("k must be in [1, C]");
  }
  const int rank = rank_of_label(p, y);
  return rank <= k ? 1.0 / rank : 0.0;
}

double map_at_k(const std::vector<ProbDist>& preds, const std::vector<int>& labels, int k) {
  check_inputs(preds, labels);
  if (k < 1) {
    throw ConfigError("k must be positive");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int kk = std::min(k, static_cast<int>(preds[i].size()));
    sum += ap_at_k(preds[i], labels[i], kk);
  }
  return sum / static_cast<double>(preds.size());
}

double f1_at_3(const std::vector<ProbDist>& preds, const std::vector<int>& labels) {
  check_inputs(preds, labels);
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (rank_of_label(preds[i], labels[i]) <= 3) {
      sum += 0.5;
    }
  }
  return sum / static_cast<double>(preds.size());
}

MetricsReport error_report(const std::vector<ProbDist>& preds, const std::vector<int>& labels) {
  check_inputs(preds, labels);
  MetricsReport r;
  r.n = static_cast<int>(preds.size());
  r.map_at_3 = map_at_k(preds, labels, 3);
  r.map_at_10 = map_at_k(preds, labels, 10);
  r.f1_at_3 = f1_at_3(preds, labels);

  int correct = 0;
  std::map<std::pair<int, int>, int> pair_counts;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= static_cast<int>(preds[i].size())) {
      throw DataError("label out of range");
    }
    const int top1 = predict_topk(preds[i], 1)[0];
    if (top1 == y) {
      ++correct;
    } else {
      r.per_class_errors[y] += 1;
      pair_counts[{y, top1}] += 1;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  std::vector<std::pair<std::pair<int, int>, int>> pairs(pair_counts.begin(), pair_counts.end());
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) {
      return a.second > b.second;
    }
    return a.first < b.first;
  });
  if (pairs.size() > static_cast<std::size_t>(kTopConfusedPairs)) {
    pairs.resize(static_cast<std::size_t>(kTopConfusedPairs));
  }
  r.top_confused_pairs = std::move(pairs);
  return r;
}

std::string metrics_to_json(const MetricsReport& r) {
  nlohmann::json doc;
  doc["map_at_3"] = r.map_at_3;
  doc["map_at_10"] = r.map_at_10;
  doc["accuracy"] = r.accuracy;
  doc["f1_at_3"] = r.f1_at_3;
  doc["n"] = r.n;
  nlohmann::json errs = nlohmann::json::object();
  for (const auto& [cls, count] : r.per_class_errors) {
    errs[std::to_string(cls)] = count;
  }
  doc["per_class_errors"] = std::move(errs);
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [pair, count] : r.top_confused_pairs) {
    pairs.push_back({{"true", pair.first}, {"predicted", pair.second}, {"count", count}});
  }
  doc["top_confused_pairs"] = std::move(pairs);
  return doc.dump();
}

MetricsReport metrics_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad metrics JSON: ") + e.what());
  }
  try {
    MetricsReport r;
    r.map_at_3 = doc.at("map_at_3").get<double>();
    r.map_at_10 = doc.at("map_at_10").get<double>();
    r.accuracy = doc.at("accuracy").get<double>();
    r.f1_at_3 = doc.at("f1_at_3").get<double>();
    r.n = doc.at("n").get<int>();
    for (const auto& [key, value] : doc.at("per_class_errors").items()) {
      r.per_class_errors[std::stoi(key)] = value.get<int>();
    }
    for (const auto& entry : doc.at("top_confused_pairs")) {
      r.top_confused_pairs.push_back(
          {{entry.at("true").get<int>(), entry.at("predicted").get<int>()},
           entry.at("count").get<int>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad metrics contents: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw DataError("bad class index in metrics JSON");
  }
}

std::string metrics_csv_header() {
  return "map_at_3,map_at_10,accuracy,f1_at_3,n";
}

std::string metrics_to_csv_row(const MetricsReport& r) {
  return format_double(r.map_at_3) + "," + format_double(r.map_at_10) + "," +
         format_double(r.accuracy) + "," + format_double(r.f1_at_3) + "," + std::to_string(r.n);
}

}  // namespace distil
