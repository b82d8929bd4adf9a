#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "distil/model.hpp"

namespace distil {

// One ingested text record before featurization.
struct RawRecord {
  std::string id;
  std::vector<std::string> text_fields;  // question, answer, explanation order
  std::string label_name;
  std::map<std::string, std::string> meta;
};

struct Sample {
  std::string id;
  std::vector<double> features;
  int label = 0;
};

// Ordered label names; index <-> name is a bijection.
struct LabelSpace {
  std::vector<std::string> names;

  int size() const { return static_cast<int>(names.size()); }
  // -1 when absent.
  int index_of(const std::string& name) const;
  static LabelSpace from_observed(std::vector<std::string> names);  // sorts, dedups
};

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, int> assignment;  // sample id -> fold in [0, k)
  std::vector<std::string> warnings;      // rare-class notes

  int fold_of(const std::string& id) const;  // throws DataError when unknown
};

// Parses newline-delimited JSON records. When no LabelSpace is supplied, one
// is built from the observed labels in lexicographic order. Duplicate ids and
// unknown labels (under a fixed space) are rejected.
std::pair<std::vector<RawRecord>, LabelSpace> ingest_jsonl(
    std::istream& in, const std::optional<LabelSpace>& space);

// Signed hashed bag of tokens: lowercase, split on non-alphanumerics, each
// token hashed to a bucket with sign +-1, then L2-normalized. dim >= 8.
std::vector<double> featurize_text(const std::vector<std::string>& text_fields, int dim);
Sample featurize(const RawRecord& rec, int dim, const LabelSpace& space);

// Per class: seeded shuffle, then round-robin dealing, so per-fold class
// counts differ by at most one. Classes smaller than k are simply absent from
// some folds and noted in warnings.
FoldPlan stratified_kfold(const std::vector<Sample>& samples, int k, std::uint64_t seed);

std::string foldplan_to_json(const FoldPlan& plan);
FoldPlan foldplan_from_json(const std::string& text);

// Synthetic long-tail noisy-label generator. Class sizes follow
// rank^(-imbalance_exponent); each class has a Gaussian prototype;
// boundary_noise_rate of samples sit midway between two prototypes;
// flip_noise_rate of labels are reassigned uniformly at random.
struct SynthConfig {
  int num_classes = 12;  // C >= 4
  int dim = 64;
  int num_samples = 3000;  // N >= 10 * C
  double imbalance_exponent = 1.0;
  double boundary_noise_rate = 0.0;
  double flip_noise_rate = 0.0;
  std::uint64_t seed = 0;
};

std::pair<std::vector<Sample>, LabelSpace> synth_generate(const SynthConfig& cfg);

struct LoadedDataset {
  std::vector<Sample> samples;
  LabelSpace labels;
  int dim = 0;
};

// JSONL dataset IO. Records may carry either text fields (hashed to text_dim
// buckets) or an explicit "features" array (synthetic datasets); extra fields
// are ignored.
void write_dataset_jsonl(const std::string& path, const std::vector<Sample>& samples,
                         const LabelSpace& space);
LoadedDataset load_dataset(const std::string& path, int text_dim);

}  // namespace distil
