#include "distil/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"
#include "distil/rng.hpp"

namespace distil {

namespace {

namespace fs = std::filesystem;

void check_arch(const ArchSpec& spec, const char* which) {
  if (spec.arch == Arch::OneHidden && spec.hidden_width <= 0) {
    throw ConfigError(std::string(which) + " hidden width must be positive");
  }
}

void check_dataset(const std::vector<Sample>& dataset, int num_classes) {
  if (dataset.empty()) {
    throw ConfigError("empty dataset");
  }
  const std::size_t dim = dataset.front().features.size();
  for (const auto& s : dataset) {
    if (s.label < 0 || s.label >= num_classes) {
      throw DataError("label out of range for id '" + s.id + "'");
    }
    if (s.features.size() != dim) {
      throw DataError("inconsistent feature length for id '" + s.id + "'");
    }
  }
}

// Fold tasks write disjoint slots; the loop is schedule-invariant because
// all randomness comes from per-fold streams.
void parallel_folds(int k, int jobs, const std::function<void(int)>& fn) {
  jobs = std::min(jobs, k);
  if (jobs <= 1) {
    for (int f = 0; f < k; ++f) {
      fn(f);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(k));
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(jobs));
  for (int t = 0; t < jobs; ++t) {
    threads.emplace_back([&, t] {
      for (int f = t; f < k; f += jobs) {
        try {
          fn(f);
        } catch (...) {
          errors[static_cast<std::size_t>(f)] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : threads) {
    th.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

MetricsReport evaluate_subset(const ModelParams& params, const std::vector<Sample>& dataset,
                              const std::vector<int>& indices, double tau) {
  std::vector<ProbDist> preds;
  std::vector<int> labels;
  preds.reserve(indices.size());
  labels.reserve(indices.size());
  for (int i : indices) {
    const auto& s = dataset[static_cast<std::size_t>(i)];
    preds.push_back(softmax_temp(forward(params, s.features), tau));
    labels.push_back(s.label);
  }
  return error_report(preds, labels);
}

std::vector<std::vector<int>> fold_membership(const FoldPlan& plan,
                                              const std::vector<Sample>& dataset) {
  std::vector<std::vector<int>> in_fold(static_cast<std::size_t>(plan.k));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    in_fold[static_cast<std::size_t>(plan.fold_of(dataset[i].id))].push_back(
        static_cast<int>(i));
  }
  for (int k = 0; k < plan.k; ++k) {
    if (in_fold[static_cast<std::size_t>(k)].empty()) {
      throw ConfigError("fold " + std::to_string(k) + " holds no samples");
    }
  }
  return in_fold;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

MetricSummary summarize_one(const std::vector<MetricsReport>& per_fold,
                            double MetricsReport::* field) {
  MetricSummary s;
  const std::size_t n = per_fold.size();
  if (n == 0) {
    return s;
  }
  for (const auto& r : per_fold) {
    s.mean += r.*field;
  }
  s.mean /= static_cast<double>(n);
  if (n > 1) {
    double sq = 0.0;
    for (const auto& r : per_fold) {
      const double d = r.*field - s.mean;
      sq += d * d;
    }
    s.stddev = std::sqrt(sq / static_cast<double>(n - 1));
  }
  return s;
}

nlohmann::json metrics_json_obj(const MetricsReport& r) {
  return nlohmann::json::parse(metrics_to_json(r));
}

nlohmann::json summary_json_obj(const StageSummary& s) {
  auto one = [](const MetricSummary& m) {
    return nlohmann::json{{"mean", m.mean}, {"stddev", m.stddev}};
  };
  return nlohmann::json{{"map_at_3", one(s.map_at_3)},
                        {"map_at_10", one(s.map_at_10)},
                        {"accuracy", one(s.accuracy)},
                        {"f1_at_3", one(s.f1_at_3)}};
}

}  // namespace

void validate_config(const TrainConfig& cfg) {
  check_arch(cfg.teacher_arch, "teacher");
  check_arch(cfg.student_arch, "student");
  if (cfg.k_folds < 2) {
    throw ConfigError("k_folds must be at least 2");
  }
  if (!(cfg.tau > 0.0) || !std::isfinite(cfg.tau)) {
    throw ConfigError("tau must be a positive finite number");
  }
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) {
    throw ConfigError("delta must lie in (0, 1)");
  }
  const auto& w = cfg.stage1_weights;
  if (!(w.alpha >= 0.0 && w.beta >= 0.0 && w.gamma >= 0.0) ||
      !(std::isfinite(w.alpha) && std::isfinite(w.beta) && std::isfinite(w.gamma))) {
    throw ConfigError("stage1 weights must be finite and nonnegative");
  }
  if (w.alpha + w.beta + w.gamma <= 0.0) {
    throw ConfigError("stage1 weights must not all be zero");
  }
  for (auto [lr, name] : {std::pair{cfg.teacher_lr, "teacher_lr"},
                          std::pair{cfg.student_lr, "student_lr"},
                          std::pair{cfg.stage2_lr, "stage2_lr"}}) {
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ConfigError(std::string(name) + " must be a positive finite number");
    }
  }
  if (!(cfg.max_grad_norm > 0.0)) {
    throw ConfigError("max_grad_norm must be positive");
  }
  if (cfg.teacher_epochs < 0 || cfg.student_epochs < 0 || cfg.stage2_epochs < 0) {
    throw ConfigError("epoch counts must be nonnegative");
  }
  if (cfg.batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (cfg.jobs < 1) {
    throw ConfigError("jobs must be at least 1");
  }
  if (cfg.dim < 8) {
    throw ConfigError("dim must be at least 8");
  }
}

const SoftLabelRecord* SoftLabelCache::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.sample_id == id) {
      return &r;
    }
  }
  return nullptr;
}

StageSummary summarize(const std::vector<MetricsReport>& per_fold) {
  StageSummary s;
  s.map_at_3 = summarize_one(per_fold, &MetricsReport::map_at_3);
  s.map_at_10 = summarize_one(per_fold, &MetricsReport::map_at_10);
  s.accuracy = summarize_one(per_fold, &MetricsReport::accuracy);
  s.f1_at_3 = summarize_one(per_fold, &MetricsReport::f1_at_3);
  return s;
}

TrainResult train_single(ModelParams params, const std::vector<Sample>& samples,
                         const std::vector<TrainExample>& examples, double tau,
                         int epochs, double lr, std::optional<double> max_grad_norm,
                         int batch_size, std::mt19937_64& rng) {
  if (examples.empty()) {
    throw ConfigError("no training examples");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (epochs < 0) {
    throw ConfigError("epochs must be nonnegative");
  }
  for (const TrainExample& ex : examples) {
    if (ex.sample_index < 0 || ex.sample_index >= static_cast<int>(samples.size())) {
      throw DataError("training example points outside the dataset");
    }
    const Sample& s = samples[static_cast<std::size_t>(ex.sample_index)];
    if (static_cast<int>(s.features.size()) != params.num_features) {
      throw DataError("feature width does not match the model");
    }
    if (ex.soft != nullptr && static_cast<int>(ex.soft->size()) != params.num_classes) {
      throw DataError("soft label width does not match the model");
    }
  }
  const std::size_t n = examples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainResult out;
  out.epoch_loss.reserve(static_cast<std::size_t>(epochs));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    int batch_index = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
      const double inv = 1.0 / static_cast<double>(stop - start);
      const std::string step = "epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batch_index);
      ModelGrads grads = zero_grads(params);
      double batch_loss = 0.0;
      // Shapes were checked up front, so a DataError here can only mean the
      // parameters stopped being finite.
      try {
        for (std::size_t i = start; i < stop; ++i) {
          const TrainExample& ex = examples[order[i]];
          const Sample& s = samples[static_cast<std::size_t>(ex.sample_index)];
          const Logits z = forward(params, s.features);
          const ProbDist p = softmax_temp(z, tau);
          batch_loss += composite_loss(p, s.label, ex.soft, ex.weights, tau).total;
          const Logits dz = composite_loss_grad(z, s.label, ex.soft, ex.weights, tau);
          accumulate(grads, backward(params, s.features, dz), inv);
        }
      } catch (const DataError&) {
        throw DivergenceError("non-finite activations at " + step);
      }
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("non-finite loss at " + step);
      }
      try {
        params = apply_update(std::move(params), grads, lr, max_grad_norm);
      } catch (const DivergenceError&) {
        throw DivergenceError("non-finite gradient at " + step);
      }
      epoch_total += batch_loss;
      ++batch_index;
    }
    out.epoch_loss.push_back(epoch_total / static_cast<double>(n));
  }
  out.params = std::move(params);
  return out;
}

StageArtifacts stage1(const std::vector<Sample>& dataset, int num_classes,
                      const TrainConfig& cfg) {
  validate_config(cfg);
  if (num_classes < 4) {
    throw ConfigError("need at least 4 classes");
  }
  check_dataset(dataset, num_classes);
  if (static_cast<int>(dataset.size()) < cfg.k_folds) {
    throw ConfigError("fewer samples than folds");
  }
  const int dim = static_cast<int>(dataset.front().features.size());
  const int k_folds = cfg.k_folds;

  StageArtifacts art;
  art.plan = stratified_kfold(dataset, k_folds, cfg.seed);
  const auto in_fold = fold_membership(art.plan, dataset);

  std::vector<int> fold_of_sample(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    fold_of_sample[i] = art.plan.fold_of(dataset[i].id);
  }

  art.fold_teachers.resize(static_cast<std::size_t>(k_folds));
  art.teacher_metrics.resize(static_cast<std::size_t>(k_folds));
  parallel_folds(k_folds, cfg.jobs, [&](int k) {
    auto rng = make_stream(cfg.seed, "teacher", static_cast<std::uint64_t>(k));
    ModelParams params = init_params(cfg.teacher_arch, dim, num_classes, rng);
    std::vector<TrainExample> examples;
    examples.reserve(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      if (fold_of_sample[i] != k) {
        examples.push_back({static_cast<int>(i), WeightTriple{1.0, 0.0, 0.0}, nullptr});
      }
    }
    params = train_single(std::move(params), dataset, examples, cfg.tau,
                          cfg.teacher_epochs, cfg.teacher_lr, cfg.max_grad_norm,
                          cfg.batch_size, rng)
                 .params;
    art.teacher_metrics[static_cast<std::size_t>(k)] =
        evaluate_subset(params, dataset, in_fold[static_cast<std::size_t>(k)], cfg.tau);
    art.fold_teachers[static_cast<std::size_t>(k)] = std::move(params);
  });

  art.soft_labels.records.resize(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const int f = fold_of_sample[i];
    SoftLabelRecord rec;
    rec.sample_id = dataset[i].id;
    rec.fold = f;
    rec.p_teacher = softmax_temp(
        forward(art.fold_teachers[static_cast<std::size_t>(f)], dataset[i].features), cfg.tau);
    rec.tau = cfg.tau;
    art.soft_labels.records[i] = std::move(rec);
  }

  std::vector<TrainExample> student_examples;
  student_examples.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    student_examples.push_back({static_cast<int>(i), cfg.stage1_weights,
                                &art.soft_labels.records[i].p_teacher});
  }

  art.fold_students.resize(static_cast<std::size_t>(k_folds));
  art.metrics_per_fold.resize(static_cast<std::size_t>(k_folds));
  parallel_folds(k_folds, cfg.jobs, [&](int k) {
    auto rng = make_stream(cfg.seed, "student", static_cast<std::uint64_t>(k));
    ModelParams params = init_params(cfg.student_arch, dim, num_classes, rng);
    params = train_single(std::move(params), dataset, student_examples, cfg.tau,
                          cfg.student_epochs, cfg.student_lr, cfg.max_grad_norm,
                          cfg.batch_size, rng)
                 .params;
    art.metrics_per_fold[static_cast<std::size_t>(k)] =
        evaluate_subset(params, dataset, in_fold[static_cast<std::size_t>(k)], cfg.tau);
    art.fold_students[static_cast<std::size_t>(k)] = std::move(params);
  });
  art.summary = summarize(art.metrics_per_fold);
  return art;
}

std::vector<PredictionView> build_views(const ModelParams& student,
                                        const std::vector<Sample>& dataset,
                                        const StageArtifacts& artifacts,
                                        const TrainConfig& cfg) {
  check_dataset(dataset, student.num_classes);
  std::vector<PredictionView> views;
  views.reserve(dataset.size());

  std::unordered_map<std::string, const SoftLabelRecord*> by_id;
  if (cfg.teacher_signal == TeacherSignal::Cache) {
    by_id.reserve(artifacts.soft_labels.records.size());
    for (const auto& rec : artifacts.soft_labels.records) {
      by_id.emplace(rec.sample_id, &rec);
    }
  } else if (artifacts.fold_teachers.empty()) {
    throw DataError("no fold teachers available for the ensemble signal");
  }

  for (const auto& s : dataset) {
    PredictionView v;
    v.sample_id = s.id;
    v.true_label = s.label;
    if (cfg.teacher_signal == TeacherSignal::Cache) {
      const auto it = by_id.find(s.id);
      if (it == by_id.end()) {
        throw DataError("no cached soft label for id '" + s.id + "'");
      }
      if (it->second->tau != cfg.tau) {
        throw DataError("soft label for id '" + s.id + "' cached at tau " +
                        format_double(it->second->tau) + ", config expects " +
                        format_double(cfg.tau));
      }
      v.p_teacher = it->second->p_teacher;
    } else {
      ProbDist mean(static_cast<std::size_t>(student.num_classes), 0.0);
      for (const auto& teacher : artifacts.fold_teachers) {
        const ProbDist p = softmax_temp(forward(teacher, s.features), cfg.tau);
        for (std::size_t j = 0; j < mean.size(); ++j) {
          mean[j] += p[j];
        }
      }
      for (double& x : mean) {
        x /= static_cast<double>(artifacts.fold_teachers.size());
      }
      v.p_teacher = std::move(mean);
    }
    v.p_student = softmax_temp(forward(student, s.features), cfg.tau);
    views.push_back(std::move(v));
  }
  return views;
}

StageArtifacts stage2(const StageArtifacts& artifacts, const std::vector<Sample>& dataset,
                      int num_classes, const TrainConfig& cfg) {
  validate_config(cfg);
  check_dataset(dataset, num_classes);
  const int k_folds = cfg.k_folds;
  if (artifacts.plan.k != k_folds ||
      static_cast<int>(artifacts.fold_students.size()) != k_folds) {
    throw DataError("stage-1 artifacts do not match k_folds");
  }
  if (artifacts.soft_labels.records.size() != dataset.size()) {
    throw DataError("soft-label cache does not cover the dataset");
  }

  StageArtifacts out;
  out.plan = artifacts.plan;
  out.fold_teachers = artifacts.fold_teachers;
  out.soft_labels = artifacts.soft_labels;
  out.teacher_metrics = artifacts.teacher_metrics;
  const auto in_fold = fold_membership(out.plan, dataset);

  out.fold_students.resize(static_cast<std::size_t>(k_folds));
  out.metrics_per_fold.resize(static_cast<std::size_t>(k_folds));
  out.selection.resize(static_cast<std::size_t>(k_folds));
  out.stage2_noop.assign(static_cast<std::size_t>(k_folds), false);

  parallel_folds(k_folds, cfg.jobs, [&](int k) {
    const ModelParams& before = artifacts.fold_students[static_cast<std::size_t>(k)];
    const std::vector<PredictionView> views = build_views(before, dataset, artifacts, cfg);
    SelectionReport report = categorize_dataset(views, cfg.delta);

    std::vector<TrainExample> examples;
    for (std::size_t i = 0; i < views.size(); ++i) {
      const CategoryKind kind = report.per_sample[i].kind;
      if (kind == CategoryKind::Unselected) {
        continue;
      }
      const WeightTriple w = cfg.stage2_scheme == Stage2Scheme::Adaptive
                                 ? weights_for(kind)
                                 : WeightTriple{1.0, 1.0, 1.0};
      examples.push_back({static_cast<int>(i), w, &views[i].p_teacher});
    }

    ModelParams after = before;
    if (examples.empty()) {
      out.stage2_noop[static_cast<std::size_t>(k)] = true;
    } else {
      auto rng = make_stream(cfg.seed, "stage2", static_cast<std::uint64_t>(k));
      after = train_single(std::move(after), dataset, examples, cfg.tau, cfg.stage2_epochs,
                           cfg.stage2_lr, cfg.max_grad_norm, cfg.batch_size, rng)
                  .params;
    }
    out.metrics_per_fold[static_cast<std::size_t>(k)] =
        evaluate_subset(after, dataset, in_fold[static_cast<std::size_t>(k)], cfg.tau);
    out.selection[static_cast<std::size_t>(k)] = std::move(report);
    out.fold_students[static_cast<std::size_t>(k)] = std::move(after);
  });
  out.summary = summarize(out.metrics_per_fold);
  return out;
}

MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       double tau) {
  check_dataset(samples, params.num_classes);
  std::vector<int> all(samples.size());
  std::iota(all.begin(), all.end(), 0);
  return evaluate_subset(params, samples, all, tau);
}

MetricsReport evaluate_ensemble(const std::vector<ModelParams>& models,
                                const std::vector<Sample>& samples, double tau) {
  if (models.empty()) {
    throw ConfigError("no models to ensemble");
  }
  check_dataset(samples, models.front().num_classes);
  std::vector<ProbDist> preds;
  std::vector<int> labels;
  preds.reserve(samples.size());
  labels.reserve(samples.size());
  for (const auto& s : samples) {
    ProbDist mean(static_cast<std::size_t>(models.front().num_classes), 0.0);
    for (const auto& m : models) {
      const ProbDist p = softmax_temp(forward(m, s.features), tau);
      for (std::size_t j = 0; j < mean.size(); ++j) {
        mean[j] += p[j];
      }
    }
    for (double& x : mean) {
      x /= static_cast<double>(models.size());
    }
    preds.push_back(std::move(mean));
    labels.push_back(s.label);
  }
  return error_report(preds, labels);
}

std::vector<SweepRow> sweep(const std::vector<Sample>& dataset, int num_classes,
                            const TrainConfig& base, const std::vector<SweepPoint>& grid) {
  if (grid.empty()) {
    throw ConfigError("empty sweep grid");
  }
  std::vector<SweepRow> rows;
  rows.reserve(grid.size());
  for (const auto& point : grid) {
    TrainConfig cfg = base;
    if (point.stage1_weights) {
      cfg.stage1_weights = *point.stage1_weights;
    }
    if (point.delta) {
      cfg.delta = *point.delta;
    }
    if (point.k_folds) {
      cfg.k_folds = *point.k_folds;
    }
    SweepRow row;
    row.config = cfg;
    try {
      const StageArtifacts art1 = stage1(dataset, num_classes, cfg);
      const StageArtifacts art2 = stage2(art1, dataset, num_classes, cfg);
      row.stage1_per_fold = art1.metrics_per_fold;
      row.stage1_summary = art1.summary;
      row.stage2_per_fold = art2.metrics_per_fold;
      row.stage2_summary = art2.summary;
      double frac = 0.0;
      for (const auto& sel : art2.selection) {
        frac += sel.selected_fraction;
      }
      row.mean_selected_fraction = frac / static_cast<double>(art2.selection.size());
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.failed != b.failed) {
      return !a.failed;
    }
    return a.stage2_summary.map_at_3.mean > b.stage2_summary.map_at_3.mean;
  });
  return rows;
}

std::string config_to_json(const TrainConfig& cfg) {
  nlohmann::json doc;
  doc["teacher_arch"] = arch_to_string(cfg.teacher_arch);
  doc["student_arch"] = arch_to_string(cfg.student_arch);
  doc["k_folds"] = cfg.k_folds;
  doc["tau"] = cfg.tau;
  doc["delta"] = cfg.delta;
  doc["stage1_weights"] = {{"alpha", cfg.stage1_weights.alpha},
                          {"beta", cfg.stage1_weights.beta},
                          {"gamma", cfg.stage1_weights.gamma}};
  doc["teacher_lr"] = cfg.teacher_lr;
  doc["student_lr"] = cfg.student_lr;
  doc["stage2_lr"] = cfg.stage2_lr;
  doc["max_grad_norm"] = cfg.max_grad_norm;
  doc["teacher_epochs"] = cfg.teacher_epochs;
  doc["student_epochs"] = cfg.student_epochs;
  doc["stage2_epochs"] = cfg.stage2_epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["seed"] = cfg.seed;
  doc["jobs"] = cfg.jobs;
  doc["stage2_scheme"] = cfg.stage2_scheme == Stage2Scheme::Adaptive ? "adaptive" : "uniform";
  doc["teacher_signal"] =
      cfg.teacher_signal == TeacherSignal::Cache ? "cache" : "ensemble_mean";
  doc["data_path"] = cfg.data_path;
  doc["dim"] = cfg.dim;
  return doc.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config JSON: ") + e.what());
  }
  try {
    TrainConfig cfg;
    if (doc.contains("teacher_arch")) {
      cfg.teacher_arch = parse_arch(doc.at("teacher_arch").get<std::string>());
    }
    if (doc.contains("student_arch")) {
      cfg.student_arch = parse_arch(doc.at("student_arch").get<std::string>());
    }
    auto read = [&doc](const char* key, auto& target) {
      if (doc.contains(key)) {
        target = doc.at(key).get<std::decay_t<decltype(target)>>();
      }
    };
    read("k_folds", cfg.k_folds);
    read("tau", cfg.tau);
    read("delta", cfg.delta);
    if (doc.contains("stage1_weights")) {
      const auto& w = doc.at("stage1_weights");
      cfg.stage1_weights = {w.at("alpha").get<double>(), w.at("beta").get<double>(),
                            w.at("gamma").get<double>()};
    }
    read("teacher_lr", cfg.teacher_lr);
    read("student_lr", cfg.student_lr);
    read("stage2_lr", cfg.stage2_lr);
    read("max_grad_norm", cfg.max_grad_norm);
    read("teacher_epochs", cfg.teacher_epochs);
    read("student_epochs", cfg.student_epochs);
    read("stage2_epochs", cfg.stage2_epochs);
    read("batch_size", cfg.batch_size);
    read("seed", cfg.seed);
    read("jobs", cfg.jobs);
    if (doc.contains("stage2_scheme")) {
      const std::string s = doc.at("stage2_scheme").get<std::string>();
      if (s == "adaptive") {
        cfg.stage2_scheme = Stage2Scheme::Adaptive;
      } else if (s == "uniform") {
        cfg.stage2_scheme = Stage2Scheme::Uniform;
      } else {
        throw DataError("unknown stage2_scheme '" + s + "'");
      }
    }
    if (doc.contains("teacher_signal")) {
      const std::string s = doc.at("teacher_signal").get<std::string>();
      if (s == "cache") {
        cfg.teacher_signal = TeacherSignal::Cache;
      } else if (s == "ensemble_mean") {
        cfg.teacher_signal = TeacherSignal::EnsembleMean;
      } else {
        throw DataError("unknown teacher_signal '" + s + "'");
      }
    }
    read("data_path", cfg.data_path);
    read("dim", cfg.dim);
    validate_config(cfg);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config contents: ") + e.what());
  }
}

std::string softlabels_to_csv(const SoftLabelCache& cache, int num_classes) {
  std::string out = "id,fold,tau";
  for (int j = 0; j < num_classes; ++j) {
    out += ",p_" + std::to_string(j);
  }
  out += '\n';
  for (const auto& rec : cache.records) {
    if (static_cast<int>(rec.p_teacher.size()) != num_classes) {
      throw DataError("soft label for id '" + rec.sample_id + "' has wrong length");
    }
    if (rec.sample_id.find_first_of(",\"\n") != std::string::npos) {
      throw DataError("id '" + rec.sample_id + "' cannot be stored in CSV");
    }
    out += rec.sample_id;
    out += ',';
    out += std::to_string(rec.fold);
    out += ',';
    out += format_double(rec.tau);
    for (double p : rec.p_teacher) {
      out += ',';
      out += format_double(p);
    }
    out += '\n';
  }
  return out;
}

SoftLabelCache softlabels_from_csv(const std::string& text, int num_classes) {
  std::vector<std::string> lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) {
    lines.pop_back();
  }
  if (lines.empty()) {
    throw DataError("soft-label CSV is empty");
  }
  std::string header = "id,fold,tau";
  for (int j = 0; j < num_classes; ++j) {
    header += ",p_" + std::to_string(j);
  }
  if (lines.front() != header) {
    throw DataError("unexpected soft-label CSV header");
  }
  SoftLabelCache cache;
  cache.records.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split(lines[i], ',');
    if (static_cast<int>(fields.size()) != 3 + num_classes) {
      throw DataError("soft-label CSV row " + std::to_string(i + 1) +
                      " has wrong field count");
    }
    SoftLabelRecord rec;
    rec.sample_id = fields[0];
    try {
      rec.fold = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw DataError("bad fold in soft-label CSV row " + std::to_string(i + 1));
    }
    rec.tau = parse_double(fields[2]);
    rec.p_teacher.reserve(static_cast<std::size_t>(num_classes));
    for (int j = 0; j < num_classes; ++j) {
      rec.p_teacher.push_back(parse_double(fields[static_cast<std::size_t>(3 + j)]));
    }
    validate_prob_dist(rec.p_teacher);
    cache.records.push_back(std::move(rec));
  }
  return cache;
}

std::string stage_metrics_to_json(const StageArtifacts& art) {
  nlohmann::json doc;
  nlohmann::json per_fold = nlohmann::json::array();
  for (const auto& m : art.metrics_per_fold) {
    per_fold.push_back(metrics_json_obj(m));
  }
  doc["per_fold"] = std::move(per_fold);
  doc["summary"] = summary_json_obj(art.summary);
  nlohmann::json teacher = nlohmann::json::array();
  for (const auto& m : art.teacher_metrics) {
    teacher.push_back(metrics_json_obj(m));
  }
  doc["teacher_per_fold"] = std::move(teacher);
  nlohmann::json noop = nlohmann::json::array();
  for (bool b : art.stage2_noop) {
    noop.push_back(b);
  }
  doc["stage2_noop"] = std::move(noop);
  return doc.dump(2) + "\n";
}

namespace {

void parse_stage_metrics(const std::string& text, StageArtifacts& art) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad stage metrics JSON: ") + e.what());
  }
  try {
    for (const auto& entry : doc.at("per_fold")) {
      art.metrics_per_fold.push_back(metrics_from_json(entry.dump()));
    }
    for (const auto& entry : doc.at("teacher_per_fold")) {
      art.teacher_metrics.push_back(metrics_from_json(entry.dump()));
    }
    if (doc.contains("stage2_noop")) {
      for (const auto& entry : doc.at("stage2_noop")) {
        art.stage2_noop.push_back(entry.get<bool>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad stage metrics contents: ") + e.what());
  }
  art.summary = summarize(art.metrics_per_fold);
}

}  // namespace

void write_stage1_outputs(const std::string& run_dir, const StageArtifacts& art,
                          const TrainConfig& cfg) {
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  const fs::path dir(run_dir);
  write_text_file((dir / "config.json").string(), config_to_json(cfg));
  write_text_file((dir / "foldplan.json").string(), foldplan_to_json(art.plan));
  if (art.fold_teachers.empty()) {
    throw DataError("stage-1 artifacts carry no teachers");
  }
  const int num_classes = art.fold_teachers.front().num_classes;
  write_text_file((dir / "softlabels.csv").string(),
                  softlabels_to_csv(art.soft_labels, num_classes));
  for (std::size_t k = 0; k < art.fold_teachers.size(); ++k) {
    save_checkpoint_file(art.fold_teachers[k],
                         (dir / "checkpoints" / ("teacher_" + std::to_string(k) + ".json"))
                             .string());
  }
  for (std::size_t k = 0; k < art.fold_students.size(); ++k) {
    save_checkpoint_file(
        art.fold_students[k],
        (dir / "checkpoints" / ("student_stage1_" + std::to_string(k) + ".json")).string());
  }
  write_text_file((dir / "metrics_stage1.json").string(), stage_metrics_to_json(art));
}

void write_stage2_outputs(const std::string& run_dir, const StageArtifacts& art) {
  const fs::path dir(run_dir);
  fs::create_directories(dir / "checkpoints");
  for (std::size_t k = 0; k < art.fold_students.size(); ++k) {
    save_checkpoint_file(
        art.fold_students[k],
        (dir / "checkpoints" / ("student_stage2_" + std::to_string(k) + ".json")).string());
  }
  write_text_file((dir / "metrics_stage2.json").string(), stage_metrics_to_json(art));
  write_selection_outputs(run_dir, art.selection);
}

void write_selection_outputs(const std::string& run_dir,
                             const std::vector<SelectionReport>& reports) {
  const fs::path dir(run_dir);
  fs::create_directories(dir);
  for (std::size_t k = 0; k < reports.size(); ++k) {
    write_text_file((dir / ("selection_" + std::to_string(k) + ".json")).string(),
                    selection_report_to_json(reports[k]));
    write_text_file((dir / ("selection_" + std::to_string(k) + ".csv")).string(),
                    selection_report_to_csv(reports[k]));
  }
}

void write_sweep_outputs(const std::string& out_dir, const std::vector<SweepRow>& rows) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  std::string csv =
      "index,k_folds,delta,alpha,beta,gamma,stage1_map3_mean,stage1_map3_std,"
      "stage2_map3_mean,stage2_map3_std,stage2_map10_mean,stage2_accuracy_mean,"
      "stage2_f1_mean,mean_selected_fraction,failed,error\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SweepRow& row = rows[i];
    csv += std::to_string(i);
    csv += ',' + std::to_string(row.config.k_folds);
    csv += ',' + format_double(row.config.delta);
    csv += ',' + format_double(row.config.stage1_weights.alpha);
    csv += ',' + format_double(row.config.stage1_weights.beta);
    csv += ',' + format_double(row.config.stage1_weights.gamma);
    csv += ',' + format_double(row.stage1_summary.map_at_3.mean);
    csv += ',' + format_double(row.stage1_summary.map_at_3.stddev);
    csv += ',' + format_double(row.stage2_summary.map_at_3.mean);
    csv += ',' + format_double(row.stage2_summary.map_at_3.stddev);
    csv += ',' + format_double(row.stage2_summary.map_at_10.mean);
    csv += ',' + format_double(row.stage2_summary.accuracy.mean);
    csv += ',' + format_double(row.stage2_summary.f1_at_3.mean);
    csv += ',' + format_double(row.mean_selected_fraction);
    csv += row.failed ? ",1," : ",0,";
    csv += csv_escape(row.error);
    csv += '\n';
  }
  write_text_file((dir / "sweep.csv").string(), csv);

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SweepRow& row = rows[i];
    if (row.failed) {
      continue;
    }
    std::string table =
        "fold,stage1_map_at_3,stage2_map_at_3,stage2_map_at_10,stage2_accuracy,"
        "stage2_f1_at_3\n";
    for (std::size_t k = 0; k < row.stage2_per_fold.size(); ++k) {
      table += std::to_string(k);
      table += ',' + format_double(row.stage1_per_fold[k].map_at_3);
      table += ',' + format_double(row.stage2_per_fold[k].map_at_3);
      table += ',' + format_double(row.stage2_per_fold[k].map_at_10);
      table += ',' + format_double(row.stage2_per_fold[k].accuracy);
      table += ',' + format_double(row.stage2_per_fold[k].f1_at_3);
      table += '\n';
    }
    table += "mean," + format_double(row.stage1_summary.map_at_3.mean);
    table += ',' + format_double(row.stage2_summary.map_at_3.mean);
    table += ',' + format_double(row.stage2_summary.map_at_10.mean);
    table += ',' + format_double(row.stage2_summary.accuracy.mean);
    table += ',' + format_double(row.stage2_summary.f1_at_3.mean);
    table += '\n';
    table += "std," + format_double(row.stage1_summary.map_at_3.stddev);
    table += ',' + format_double(row.stage2_summary.map_at_3.stddev);
    table += ',' + format_double(row.stage2_summary.map_at_10.stddev);
    table += ',' + format_double(row.stage2_summary.accuracy.stddev);
    table += ',' + format_double(row.stage2_summary.f1_at_3.stddev);
    table += '\n';
    write_text_file((dir / ("sweep_folds_" + std::to_string(i) + ".csv")).string(), table);
  }
}

StageArtifacts read_stage1_artifacts(const std::string& run_dir, const TrainConfig& cfg,
                                     const std::vector<Sample>& dataset) {
  const fs::path dir(run_dir);
  StageArtifacts art;
  art.plan = foldplan_from_json(read_text_file((dir / "foldplan.json").string()));
  if (art.plan.k != cfg.k_folds) {
    throw DataError("fold plan has K=" + std::to_string(art.plan.k) +
                    ", config expects " + std::to_string(cfg.k_folds));
  }
  for (int k = 0; k < art.plan.k; ++k) {
    art.fold_teachers.push_back(load_checkpoint_file(
        (dir / "checkpoints" / ("teacher_" + std::to_string(k) + ".json")).string()));
    art.fold_students.push_back(load_checkpoint_file(
        (dir / "checkpoints" / ("student_stage1_" + std::to_string(k) + ".json")).string()));
  }
  const int num_classes = art.fold_teachers.front().num_classes;
  SoftLabelCache on_disk = softlabels_from_csv(
      read_text_file((dir / "softlabels.csv").string()), num_classes);

  std::unordered_map<std::string, SoftLabelRecord*> by_id;
  by_id.reserve(on_disk.records.size());
  for (auto& rec : on_disk.records) {
    if (!by_id.emplace(rec.sample_id, &rec).second) {
      throw DataError("duplicate soft label for id '" + rec.sample_id + "'");
    }
  }
  art.soft_labels.records.reserve(dataset.size());
  for (const auto& s : dataset) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      throw DataError("no cached soft label for id '" + s.id + "'");
    }
    if (it->second->fold != art.plan.fold_of(s.id)) {
      throw DataError("soft label fold mismatch for id '" + s.id + "'");
    }
    art.soft_labels.records.push_back(std::move(*it->second));
  }
  if (art.soft_labels.records.size() != on_disk.records.size()) {
    throw DataError("soft-label cache does not cover the dataset");
  }

  parse_stage_metrics(read_text_file((dir / "metrics_stage1.json").string()), art);
  return art;
}

}  // namespace distil
