#include "distil/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <unordered_set>

#include <json.hpp>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"
#include "distil/rng.hpp"

namespace distil {

namespace {

// Expected squared prototype distance is kSeparation^2, comfortably above
// the unit per-entry sample noise.
constexpr double kSeparation = 8.0;

struct ParsedLine {
  RawRecord rec;
  std::optional<std::vector<double>> features;
};

[[noreturn]] void line_error(int line_no, const std::string& what) {
  throw DataError("line " + std::to_string(line_no) + ": " + what);
}

std::string require_string(const nlohmann::json& j, const char* key, int line_no) {
  const auto it = j.find(key);
  if (it == j.end()) {
    line_error(line_no, std::string("missing field '") + key + "'");
  }
  if (!it->is_string()) {
    line_error(line_no, std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

ParsedLine parse_dataset_line(const std::string& line, int line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    line_error(line_no, std::string("parse error: ") + e.what());
  }
  if (!j.is_object()) {
    line_error(line_no, "not a JSON object");
  }
  ParsedLine out;
  out.rec.id = require_string(j, "id", line_no);
  if (out.rec.id.empty()) {
    line_error(line_no, "empty id");
  }
  out.rec.label_name = require_string(j, "label", line_no);
  if (out.rec.label_name.empty()) {
    line_error(line_no, "empty label");
  }
  for (const char* key : {"question", "answer", "explanation"}) {
    const auto it = j.find(key);
    if (it == j.end()) {
      out.rec.text_fields.emplace_back();
    } else if (it->is_string()) {
      out.rec.text_fields.push_back(it->get<std::string>());
    } else {
      line_error(line_no, std::string("field '") + key + "' must be a string");
    }
  }
  if (const auto it = j.find("meta"); it != j.end() && it->is_object()) {
    for (const auto& [k, v] : it->items()) {
      out.rec.meta[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  if (const auto it = j.find("features"); it != j.end()) {
    if (!it->is_array()) {
      line_error(line_no, "field 'features' must be an array");
    }
    std::vector<double> f;
    f.reserve(it->size());
    for (const auto& v : *it) {
      if (!v.is_number()) {
        line_error(line_no, "non-numeric entry in 'features'");
      }
      f.push_back(v.get<double>());
    }
    out.features = std::move(f);
  }
  return out;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

int LabelSpace::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (names[static_cast<std::size_t>(i)] == name) {
      return i;
    }
  }
  return -1;
}

LabelSpace LabelSpace::from_observed(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  return LabelSpace{std::move(names)};
}

int FoldPlan::fold_of(const std::string& id) const {
  const auto it = assignment.find(id);
  if (it == assignment.end()) {
    throw DataError("sample '" + id + "' missing from fold plan");
  }
  return it->second;
}

std::pair<std::vector<RawRecord>, LabelSpace> ingest_jsonl(
    std::istream& in, const std::optional<LabelSpace>& space) {
  std::vector<RawRecord> records;
  std::unordered_set<std::string> seen;
  std::vector<std::string> observed;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) {
      continue;
    }
    ParsedLine parsed = parse_dataset_line(line, line_no);
    if (!seen.insert(parsed.rec.id).second) {
      throw DataError("duplicate id '" + parsed.rec.id + "'");
    }
    if (space) {
      if (space->index_of(parsed.rec.label_name) < 0) {
        throw DataError("unknown label '" + parsed.rec.label_name + "' for id '" +
                        parsed.rec.id + "'");
      }
    } else {
      observed.push_back(parsed.rec.label_name);
    }
    records.push_back(std::move(parsed.rec));
  }
  return {std::move(records),
          space ? *space : LabelSpace::from_observed(std::move(observed))};
}

std::vector<double> featurize_text(const std::vector<std::string>& text_fields, int dim) {
  if (dim < 8) {
    throw ConfigError("featurization dim must be at least 8");
  }
  std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) {
      return;
    }
    const std::uint64_t h = fnv1a64(token);
    const std::size_t bucket = h % static_cast<std::uint64_t>(dim);
    v[bucket] += ((h >> 63) & 1u) ? -1.0 : 1.0;
    token.clear();
  };
  for (const auto& field : text_fields) {
    for (unsigned char c : field) {
      if (std::isalnum(c)) {
        token.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();
  }
  double norm = 0.0;
  for (double x : v) {
    norm += x * x;
  }
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v) {
      x /= norm;
    }
  }
  return v;
}

Sample featurize(const RawRecord& rec, int dim, const LabelSpace& space) {
  const int label = space.index_of(rec.label_name);
  if (label < 0) {
    throw DataError("unknown label '" + rec.label_name + "' for id '" + rec.id + "'");
  }
  return Sample{rec.id, featurize_text(rec.text_fields, dim), label};
}

FoldPlan stratified_kfold(const std::vector<Sample>& samples, int k, std::uint64_t seed) {
  if (k < 2) {
    throw ConfigError("k must be at least 2");
  }
  if (static_cast<int>(samples.size()) < k) {
    throw ConfigError("need at least k samples");
  }
  std::map<int, std::vector<const std::string*>> by_class;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (s.label < 0) {
      throw DataError("negative label for id '" + s.id + "'");
    }
    if (!seen.insert(s.id).second) {
      throw DataError("duplicate id '" + s.id + "'");
    }
    by_class[s.label].push_back(&s.id);
  }
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  for (auto& [cls, ids] : by_class) {
    auto rng = make_stream(seed, "kfold", static_cast<std::uint64_t>(cls));
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      plan.assignment[*ids[i]] = static_cast<int>((cls + i) % static_cast<std::size_t>(k));
    }
    if (static_cast<int>(ids.size()) < k) {
      plan.warnings.push_back("class " + std::to_string(cls) + " has " +
                              std::to_string(ids.size()) + " samples; absent from " +
                              std::to_string(k - static_cast<int>(ids.size())) + " of " +
                              std::to_string(k) + " folds");
    }
  }
  return plan;
}

std::string foldplan_to_json(const FoldPlan& plan) {
  nlohmann::json doc;
  doc["K"] = plan.k;
  doc["seed"] = plan.seed;
  doc["assignment"] = plan.assignment;
  doc["warnings"] = plan.warnings;
  return doc.dump();
}

FoldPlan foldplan_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad fold plan JSON: ") + e.what());
  }
  try {
    FoldPlan plan;
    plan.k = doc.at("K").get<int>();
    plan.seed = doc.at("seed").get<std::uint64_t>();
    plan.assignment = doc.at("assignment").get<std::map<std::string, int>>();
    if (doc.contains("warnings")) {
      plan.warnings = doc.at("warnings").get<std::vector<std::string>>();
    }
    for (const auto& [id, fold] : plan.assignment) {
      if (fold < 0 || fold >= plan.k) {
        throw DataError("fold " + std::to_string(fold) + " out of range for id '" + id + "'");
      }
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad fold plan contents: ") + e.what());
  }
}

namespace {

// Largest-remainder apportionment of n over weights rank^(-e); every class
// gets at least one sample and the size sequence is non-increasing.
std::vector<int> apportion_sizes(int num_classes, int n, double exponent) {
  std::vector<double> w(static_cast<std::size_t>(num_classes));
  double total = 0.0;
  for (int r = 0; r < num_classes; ++r) {
    w[static_cast<std::size_t>(r)] = std::pow(static_cast<double>(r + 1), -exponent);
    total += w[static_cast<std::size_t>(r)];
  }
  std::vector<int> sizes(static_cast<std::size_t>(num_classes));
  std::vector<std::pair<double, int>> frac;
  int assigned = 0;
  for (int r = 0; r < num_classes; ++r) {
    const double q = n * w[static_cast<std::size_t>(r)] / total;
    sizes[static_cast<std::size_t>(r)] = static_cast<int>(std::floor(q));
    assigned += sizes[static_cast<std::size_t>(r)];
    frac.emplace_back(q - std::floor(q), r);
  }
  std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) {
      return a.first > b.first;
    }
    return a.second < b.second;
  });
  for (int i = 0; i < n - assigned; ++i) {
    sizes[static_cast<std::size_t>(frac[static_cast<std::size_t>(i)].second)] += 1;
  }
  bool bumped = false;
  for (auto& s : sizes) {
    if (s == 0) {
      const auto m = std::max_element(sizes.begin(), sizes.end());
      if (*m <= 1) {
        throw ConfigError("cannot give every class a sample");
      }
      *m -= 1;
      s = 1;
      bumped = true;
    }
  }
  if (bumped) {
    std::sort(sizes.begin(), sizes.end(), std::greater<int>());
  }
  return sizes;
}

std::string synth_label_names_entry(int index, int num_classes) {
  if (index == 0) {
    return "Correct:NA";
  }
  if (index == num_classes - 1) {
    return "Neither:NA";
  }
  int width = 2;
  for (int v = num_classes - 2; v >= 100; v /= 10) {
    ++width;
  }
  std::string digits = std::to_string(index);
  while (static_cast<int>(digits.size()) < width) {
    digits.insert(digits.begin(), '0');
  }
  return "Misconception:Type_" + digits;
}

}  // namespace

std::pair<std::vector<Sample>, LabelSpace> synth_generate(const SynthConfig& cfg) {
  if (cfg.num_classes < 4) {
    throw ConfigError("synth needs at least 4 classes");
  }
  if (cfg.dim < 8) {
    throw ConfigError("synth dim must be at least 8");
  }
  if (cfg.num_samples < 10 * cfg.num_classes) {
    throw ConfigError("synth needs at least 10 samples per class slot");
  }
  if (!(cfg.imbalance_exponent >= 0.0) || !std::isfinite(cfg.imbalance_exponent)) {
    throw ConfigError("imbalance exponent must be a finite nonnegative number");
  }
  for (double rate : {cfg.boundary_noise_rate, cfg.flip_noise_rate}) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("noise rates must lie in [0, 1)");
    }
  }

  const std::vector<int> sizes =
      apportion_sizes(cfg.num_classes, cfg.num_samples, cfg.imbalance_exponent);

  const double proto_std = kSeparation / std::sqrt(2.0 * cfg.dim);
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    auto rng = make_stream(cfg.seed, "synth.proto", static_cast<std::uint64_t>(c));
    std::normal_distribution<double> dist(0.0, proto_std);
    auto& proto = protos[static_cast<std::size_t>(c)];
    proto.resize(static_cast<std::size_t>(cfg.dim));
    for (double& x : proto) {
      x = dist(rng);
    }
  }

  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(cfg.num_classes));
  for (int c = 0; c < cfg.num_classes; ++c) {
    names.push_back(synth_label_names_entry(c, cfg.num_classes));
  }

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(cfg.num_samples));
  std::uint64_t idx = 0;
  for (int c = 0; c < cfg.num_classes; ++c) {
    for (int j = 0; j < sizes[static_cast<std::size_t>(c)]; ++j, ++idx) {
      auto rng = make_stream(cfg.seed, "synth.sample", idx);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      std::vector<double> x = protos[static_cast<std::size_t>(c)];
      if (u01(rng) < cfg.boundary_noise_rate) {
        std::uniform_int_distribution<int> other_dist(0, cfg.num_classes - 2);
        int other = other_dist(rng);
        if (other >= c) {
          ++other;
        }
        const auto& po = protos[static_cast<std::size_t>(other)];
        for (std::size_t d = 0; d < x.size(); ++d) {
          x[d] = 0.5 * (x[d] + po[d]);
        }
      }
      std::normal_distribution<double> noise(0.0, 1.0);
      for (double& v : x) {
        v += noise(rng);
      }
      int label = c;
      if (cfg.flip_noise_rate > 0.0 && u01(rng) < cfg.flip_noise_rate) {
        std::uniform_int_distribution<int> flip(0, cfg.num_classes - 1);
        label = flip(rng);
      }
      std::string id = std::to_string(idx);
      while (id.size() < 6) {
        id.insert(id.begin(), '0');
      }
      samples.push_back(Sample{"synth-" + id, std::move(x), label});
    }
  }
  return {std::move(samples), LabelSpace{std::move(names)}};
}

void write_dataset_jsonl(const std::string& path, const std::vector<Sample>& samples,
                         const LabelSpace& space) {
  std::string out;
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= space.size()) {
      throw DataError("label index out of range for id '" + s.id + "'");
    }
    nlohmann::json j;
    j["id"] = s.id;
    j["label"] = space.names[static_cast<std::size_t>(s.label)];
    j["features"] = s.features;
    out += j.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

LoadedDataset load_dataset(const std::string& path, int text_dim) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open '" + path + "'");
  }
  std::vector<ParsedLine> lines;
  std::unordered_set<std::string> seen;
  std::vector<std::string> observed;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) {
      continue;
    }
    ParsedLine parsed = parse_dataset_line(line, line_no);
    if (!seen.insert(parsed.rec.id).second) {
      throw DataError("duplicate id '" + parsed.rec.id + "'");
    }
    observed.push_back(parsed.rec.label_name);
    lines.push_back(std::move(parsed));
  }
  LoadedDataset out;
  out.labels = LabelSpace::from_observed(std::move(observed));
  if (lines.empty()) {
    out.dim = text_dim;
    return out;
  }

  const bool with_features = lines.front().features.has_value();
  for (const auto& l : lines) {
    if (l.features.has_value() != with_features) {
      throw DataError("dataset mixes explicit features with text records");
    }
  }
  out.dim = with_features ? static_cast<int>(lines.front().features->size()) : text_dim;
  out.samples.reserve(lines.size());
  for (auto& l : lines) {
    Sample s;
    s.id = l.rec.id;
    s.label = out.labels.index_of(l.rec.label_name);
    if (with_features) {
      if (static_cast<int>(l.features->size()) != out.dim) {
        throw DataError("inconsistent feature length for id '" + l.rec.id + "'");
      }
      for (double v : *l.features) {
        if (!std::isfinite(v)) {
          throw DataError("non-finite feature for id '" + l.rec.id + "'");
        }
      }
      s.features = std::move(*l.features);
    } else {
      s.features = featurize_text(l.rec.text_fields, text_dim);
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

}  // namespace distil
