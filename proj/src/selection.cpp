#include "distil/selection.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include <json.hpp>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"

namespace distil {

std::string_view category_name(CategoryKind k) {
  switch (k) {
    case CategoryKind::NMclose:
      return "NM-close";
    case CategoryKind::NMfar:
      return "NM-far";
    case CategoryKind::HHclose:
      return "HH-close";
    case CategoryKind::HHfar:
      return "HH-far";
    case CategoryKind::Unselected:
      return "Unselected";
  }
  throw ConfigError("bad category kind");
}

CategoryKind category_from_name(std::string_view name) {
  for (int i = 0; i < kNumCategories; ++i) {
    const auto k = static_cast<CategoryKind>(i);
    if (name == category_name(k)) {
      return k;
    }
  }
  throw DataError("unknown category '" + std::string(name) + "'");
}

int rank_of_label(const ProbDist& p, int y) {
  if (y < 0 || y >= static_cast<int>(p.size())) {
    throw DataError("label out of range");
  }
  const double py = p[static_cast<std::size_t>(y)];
  int rank = 1;
  for (int j = 0; j < static_cast<int>(p.size()); ++j) {
    const double pj = p[static_cast<std::size_t>(j)];
    if (pj > py || (pj == py && j < y)) {
      ++rank;
    }
  }
  return rank;
}

Tier1 classify_tier1(const PredictionView& view, double delta) {
  const ProbDist& p = view.p_teacher;
  if (static_cast<int>(p.size()) < 4) {
    throw ConfigError("tier-1 classification needs at least 4 classes");
  }
  const int rank = rank_of_label(p, view.true_label);
  if (rank == 1) {
    const auto top = predict_topk(p, 2);
    const double gap =
        p[static_cast<std::size_t>(top[0])] - p[static_cast<std::size_t>(top[1])];
    return gap <= delta ? Tier1::NearMiss : Tier1::Unselected;
  }
  if (rank <= 3) {
    return Tier1::NearMiss;
  }
  return Tier1::HardHard;
}

double margin_d(const ProbDist& p_s, int y) {
  if (y < 0 || y >= static_cast<int>(p_s.size())) {
    throw DataError("label out of range");
  }
  const double pmax = *std::max_element(p_s.begin(), p_s.end());
  return std::abs(p_s[static_cast<std::size_t>(y)] - pmax);
}

double entropy_h(const ProbDist& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) {
      h -= v * std::log(v);
    }
  }
  return h;
}

double composite_m(const ProbDist& p_s, int y) {
  return margin_d(p_s, y) * std::exp(-entropy_h(p_s));
}

MedianSplitResult median_split(const std::vector<std::pair<std::string, double>>& scored) {
  MedianSplitResult out;
  if (scored.empty()) {
    return out;
  }
  std::vector<std::pair<std::string, double>> sorted(scored);
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) {
      return a.second < b.second;
    }
    return a.first < b.first;
  });
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1
                            ? sorted[n / 2].second
                            : 0.5 * (sorted[n / 2 - 1].second + sorted[n / 2].second);
  out.median = median;
  for (const auto& [id, m] : sorted) {
    (m <= median ? out.close_ids : out.far_ids).push_back(id);
  }
  return out;
}

SelectionReport categorize_dataset(const std::vector<PredictionView>& views, double delta) {
  SelectionReport report;
  report.counts.fill(0);
  report.per_sample.reserve(views.size());

  std::vector<std::pair<std::string, double>> nm_scored;
  std::vector<std::pair<std::string, double>> hh_scored;

  for (const auto& v : views) {
    validate_prob_dist(v.p_teacher);
    validate_prob_dist(v.p_student);
    SampleCategory cat;
    cat.sample_id = v.sample_id;
    cat.rank = rank_of_label(v.p_teacher, v.true_label);
    const auto top = predict_topk(v.p_teacher, 2);
    cat.top_gap = v.p_teacher[static_cast<std::size_t>(top[0])] -
                  v.p_teacher[static_cast<std::size_t>(top[1])];
    const Tier1 tier = classify_tier1(v, delta);
    if (tier == Tier1::Unselected) {
      cat.kind = CategoryKind::Unselected;
    } else {
      const double m = composite_m(v.p_student, v.true_label);
      cat.difficulty_m = m;
      (tier == Tier1::NearMiss ? nm_scored : hh_scored).emplace_back(v.sample_id, m);
      // Provisional far; the median split below demotes close samples.
      cat.kind = tier == Tier1::NearMiss ? CategoryKind::NMfar : CategoryKind::HHfar;
    }
    report.per_sample.push_back(std::move(cat));
  }

  std::unordered_map<std::string, std::size_t> by_id;
  by_id.reserve(report.per_sample.size());
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) {
    by_id.emplace(report.per_sample[i].sample_id, i);
  }

  const MedianSplitResult nm_split = median_split(nm_scored);
  const MedianSplitResult hh_split = median_split(hh_scored);
  report.median_m_nm = nm_split.median;
  report.median_m_hh = hh_split.median;
  for (const auto& id : nm_split.close_ids) {
    report.per_sample[by_id.at(id)].kind = CategoryKind::NMclose;
  }
  for (const auto& id : hh_split.close_ids) {
    report.per_sample[by_id.at(id)].kind = CategoryKind::HHclose;
  }

  int selected = 0;
  for (const auto& cat : report.per_sample) {
    report.counts[static_cast<int>(cat.kind)] += 1;
    if (cat.kind != CategoryKind::Unselected) {
      ++selected;
    }
  }
  report.selected_fraction =
      views.empty() ? 0.0 : static_cast<double>(selected) / static_cast<double>(views.size());
  return report;
}

WeightTriple weights_for(CategoryKind kind) {
  switch (kind) {
    case CategoryKind::NMclose:
      return {1.0, 0.0, 0.0};
    case CategoryKind::NMfar:
      return {1.0, 1.0, 1.0};
    case CategoryKind::HHclose:
      return {0.0, 1.0, 1.0};
    case CategoryKind::HHfar:
      return {1.0, 1.0, 1.0};
    case CategoryKind::Unselected:
      throw ConfigError("unselected samples carry no training weights");
  }
  throw ConfigError("bad category kind");
}

std::string selection_report_to_json(const SelectionReport& r) {
  nlohmann::json counts;
  for (int i = 0; i < kNumCategories; ++i) {
    counts[std::string(category_name(static_cast<CategoryKind>(i)))] = r.counts[i];
  }
  nlohmann::json medians;
  medians["near_miss"] = r.median_m_nm ? nlohmann::json(*r.median_m_nm) : nlohmann::json();
  medians["hard_hard"] = r.median_m_hh ? nlohmann::json(*r.median_m_hh) : nlohmann::json();
  nlohmann::json per_sample = nlohmann::json::array();
  for (const auto& cat : r.per_sample) {
    nlohmann::json entry;
    entry["id"] = cat.sample_id;
    entry["kind"] = std::string(category_name(cat.kind));
    entry["M"] = cat.difficulty_m ? nlohmann::json(*cat.difficulty_m) : nlohmann::json();
    per_sample.push_back(std::move(entry));
  }
  nlohmann::json doc;
  doc["counts"] = std::move(counts);
  doc["selected_fraction"] = r.selected_fraction;
  doc["medians"] = std::move(medians);
  doc["per_sample"] = std::move(per_sample);
  return doc.dump();
}

SelectionReport selection_report_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad selection JSON: ") + e.what());
  }
  try {
    SelectionReport r;
    r.counts.fill(0);
    for (int i = 0; i < kNumCategories; ++i) {
      r.counts[i] =
          doc.at("counts").at(std::string(category_name(static_cast<CategoryKind>(i)))).get<int>();
    }
    r.selected_fraction = doc.at("selected_fraction").get<double>();
    const auto& medians = doc.at("medians");
    if (!medians.at("near_miss").is_null()) {
      r.median_m_nm = medians.at("near_miss").get<double>();
    }
    if (!medians.at("hard_hard").is_null()) {
      r.median_m_hh = medians.at("hard_hard").get<double>();
    }
    for (const auto& entry : doc.at("per_sample")) {
      SampleCategory cat;
      cat.sample_id = entry.at("id").get<std::string>();
      cat.kind = category_from_name(entry.at("kind").get<std::string>());
      if (!entry.at("M").is_null()) {
        cat.difficulty_m = entry.at("M").get<double>();
      }
      r.per_sample.push_back(std::move(cat));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad selection contents: ") + e.what());
  }
}

std::string selection_report_to_csv(const SelectionReport& r) {
  std::string out = "id,kind,M,rank,top1_minus_top2\n";
  for (const auto& cat : r.per_sample) {
    out += cat.sample_id;
    out += ',';
    out += category_name(cat.kind);
    out += ',';
    if (cat.difficulty_m) {
      out += format_double(*cat.difficulty_m);
    }
    out += ',';
    out += std::to_string(cat.rank);
    out += ',';
    out += format_double(cat.top_gap);
    out += '\n';
  }
  return out;
}

}  // namespace distil
