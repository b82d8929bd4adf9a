#pragma once

// Shared hand-built fixtures.

#include <string>
#include <utility>
#include <vector>

#include "distil/model.hpp"
#include "distil/selection.hpp"

namespace fixtures {

// Distribution over c classes with the given (index, probability) spikes and
// the leftover mass spread evenly across the other classes.
inline distil::ProbDist spiked_dist(int c, const std::vector<std::pair<int, double>>& spikes) {
  double used = 0.0;
  for (const auto& s : spikes) {
    used += s.second;
  }
  const double rest = (1.0 - used) / static_cast<double>(c - static_cast<int>(spikes.size()));
  distil::ProbDist p(static_cast<std::size_t>(c), rest);
  for (const auto& s : spikes) {
    p[static_cast<std::size_t>(s.first)] = s.second;
  }
  return p;
}

// Five reference predictions over a 37-way misconception label space: one
// confident-correct sample, two near-misses (boundary and confidently-wrong),
// and two severe failures. Teacher and student distributions coincide here;
// tier-1 behaviour is what the fixture pins down.
inline std::vector<distil::PredictionView> casebook_views() {
  const int c = 37;
  std::vector<distil::PredictionView> views;
  auto add = [&](const std::string& id, const std::vector<std::pair<int, double>>& spikes,
                 int label) {
    distil::PredictionView v;
    v.sample_id = id;
    v.p_teacher = spiked_dist(c, spikes);
    v.p_student = v.p_teacher;
    v.true_label = label;
    views.push_back(std::move(v));
  };
  add("case1", {{0, 0.910085}, {36, 0.060027}, {13, 0.002885}}, 0);
  add("case2", {{36, 0.532756}, {0, 0.428080}, {13, 0.004627}}, 0);
  add("case3", {{36, 0.936680}, {0, 0.043809}, {13, 0.003186}}, 0);
  add("case4", {{20, 0.877975}, {11, 0.029347}, {27, 0.017252}}, 36);
  add("case5", {{36, 0.912709}, {3, 0.037672}, {10, 0.008021}}, 0);
  return views;
}

// Ten predictions over six classes with hand-checked ranks
// [1, 1, 2, 3, 4, 6, 3, 6, 1, 2]:
//   accuracy 3/10, MAP@3 = 14/30, MAP@10 = 0.525, F1@3 = 0.35,
//   errors: class 0 twice, class 3 twice, class 4 once, class 5 twice.
struct RankedFixture {
  std::vector<distil::ProbDist> preds;
  std::vector<int> labels;
};

inline RankedFixture ten_sample_fixture() {
  // probs follow the permutation order, descending, no ties
  const std::vector<double> mass = {0.4, 0.25, 0.15, 0.1, 0.06, 0.04};
  auto dist = [&](const std::vector<int>& order) {
    distil::ProbDist p(6, 0.0);
    for (std::size_t i = 0; i < order.size(); ++i) {
      p[static_cast<std::size_t>(order[i])] = mass[i];
    }
    return p;
  };
  RankedFixture f;
  auto add = [&](const std::vector<int>& order, int label) {
    f.preds.push_back(dist(order));
    f.labels.push_back(label);
  };
  add({0, 1, 2, 3, 4, 5}, 0);  // rank 1
  add({1, 0, 2, 3, 4, 5}, 1);  // rank 1
  add({2, 3, 0, 1, 4, 5}, 3);  // rank 2, top-1 error 3 -> 2
  add({4, 5, 0, 1, 2, 3}, 0);  // rank 3, error 0 -> 4
  add({5, 2, 3, 0, 1, 4}, 0);  // rank 4, error 0 -> 5
  add({3, 0, 1, 2, 4, 5}, 5);  // rank 6, error 5 -> 3
  add({1, 2, 4, 0, 3, 5}, 4);  // rank 3, error 4 -> 1
  add({0, 1, 2, 3, 4, 5}, 5);  // rank 6, error 5 -> 0
  add({2, 0, 1, 3, 4, 5}, 2);  // rank 1
  add({1, 3, 5, 0, 2, 4}, 3);  // rank 2, error 3 -> 1
  return f;
}

}  // namespace fixtures
