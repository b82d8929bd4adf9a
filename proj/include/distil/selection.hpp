#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "distil/losses.hpp"
#include "distil/model.hpp"

namespace distil {

// One sample as seen by the selection mechanism: the teacher distribution
// drives tier-1 membership, the student distribution drives the tier-2
// difficulty score.
struct PredictionView {
  std::string sample_id;
  ProbDist p_teacher;
  ProbDist p_student;
  int true_label = 0;
};

enum class Tier1 { NearMiss, HardHard, Unselected };

enum class CategoryKind { NMclose, NMfar, HHclose, HHfar, Unselected };
inline constexpr int kNumCategories = 5;

std::string_view category_name(CategoryKind k);  // "NM-close", "NM-far", ...
CategoryKind category_from_name(std::string_view name);

struct SampleCategory {
  std::string sample_id;
  CategoryKind kind = CategoryKind::Unselected;
  std::optional<double> difficulty_m;  // present iff kind != Unselected
  int rank = 0;                        // teacher rank of the true label, 1-based
  double top_gap = 0.0;                // teacher top1 - top2 probability
};

struct SelectionReport {
  std::vector<SampleCategory> per_sample;  // input order
  std::array<int, kNumCategories> counts{};
  double selected_fraction = 0.0;
  std::optional<double> median_m_nm;
  std::optional<double> median_m_hh;

  int count(CategoryKind k) const { return counts[static_cast<int>(k)]; }
};

// 1-based position of y when classes are ordered by probability descending,
// ties to the lower index (same total order as predict_topk).
int rank_of_label(const ProbDist& p, int y);

// NearMiss: correct top-1 with top1-top2 <= delta, or true label at rank 2-3.
// HardHard: true label at rank > 3. Evaluated on the teacher distribution.
// Requires C >= 4, otherwise rank > 3 is unreachable and the split degenerates.
Tier1 classify_tier1(const PredictionView& view, double delta);

// |p_s(y) - max_j p_s(j)|
double margin_d(const ProbDist& p_s, int y);

// Shannon entropy, natural log, 0*log(0) = 0.
double entropy_h(const ProbDist& p);

// margin_d * exp(-entropy_h); in [0, 1].
double composite_m(const ProbDist& p_s, int y);

struct MedianSplitResult {
  std::vector<std::string> close_ids;  // M <= median
  std::vector<std::string> far_ids;    // M > median
  std::optional<double> median;        // none for empty input
};

// Median is the middle value (odd count) or the mean of the two middle
// values (even count), taken after a deterministic sort by (M, id).
MedianSplitResult median_split(const std::vector<std::pair<std::string, double>>& scored);

// Full dual-tier categorization: tier-1 on teacher probabilities, composite
// difficulty on student probabilities, close/far split at the per-tier median.
SelectionReport categorize_dataset(const std::vector<PredictionView>& views, double delta);

// Adaptive weight table; rejects Unselected.
WeightTriple weights_for(CategoryKind kind);

std::string selection_report_to_json(const SelectionReport& r);
SelectionReport selection_report_from_json(const std::string& text);

// Columns: id, kind, M, rank, top1_minus_top2. M empty for Unselected.
std::string selection_report_to_csv(const SelectionReport& r);

}  // namespace distil
