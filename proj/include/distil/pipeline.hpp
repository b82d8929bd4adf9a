#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "distil/data.hpp"
#include "distil/losses.hpp"
#include "distil/metrics.hpp"
#include "distil/model.hpp"
#include "distil/selection.hpp"

namespace distil {

enum class Stage2Scheme { Adaptive, Uniform };  // Uniform: (1,1,1) on every selected sample
enum class TeacherSignal { Cache, EnsembleMean };

// Learning rates are scaled to the small-model regime here; the ratios
// between phases (stage2 far below stage1) are what carries over.
struct TrainConfig {
  ArchSpec teacher_arch{Arch::OneHidden, 32};
  ArchSpec student_arch{Arch::OneHidden, 8};
  int k_folds = 5;
  double tau = 1.0;
  double delta = 0.05;
  WeightTriple stage1_weights{0.33, 0.33, 0.34};
  double teacher_lr = 0.1;
  double student_lr = 0.1;
  double stage2_lr = 1e-3;
  double max_grad_norm = 4.0;
  int teacher_epochs = 40;
  int student_epochs = 40;
  int stage2_epochs = 8;
  int batch_size = 16;
  std::uint64_t seed = 0;
  int jobs = 1;
  Stage2Scheme stage2_scheme = Stage2Scheme::Adaptive;
  TeacherSignal teacher_signal = TeacherSignal::Cache;
  std::string data_path;  // recorded so later stages can reopen the dataset
  int dim = 64;           // text featurization width
};

void validate_config(const TrainConfig& cfg);

struct SoftLabelRecord {
  std::string sample_id;
  int fold = 0;  // the fold holding the sample; its teacher never saw it
  ProbDist p_teacher;
  double tau = 1.0;
};

struct SoftLabelCache {
  std::vector<SoftLabelRecord> records;  // dataset order, one per sample

  const SoftLabelRecord* find(const std::string& id) const;
};

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample std over folds
};

struct StageSummary {
  MetricSummary map_at_3, map_at_10, accuracy, f1_at_3;
};

StageSummary summarize(const std::vector<MetricsReport>& per_fold);

struct StageArtifacts {
  FoldPlan plan;
  std::vector<ModelParams> fold_teachers;
  std::vector<ModelParams> fold_students;
  SoftLabelCache soft_labels;
  std::vector<SelectionReport> selection;    // one per fold after stage2, else empty
  std::vector<bool> stage2_noop;             // per fold: selection was empty
  std::vector<MetricsReport> teacher_metrics;  // held-out fold evaluation
  std::vector<MetricsReport> metrics_per_fold;  // student held-out evaluation
  StageSummary summary;                         // over metrics_per_fold
};

// One resolved training example: dataset index, loss weights, optional
// teacher distribution.
struct TrainExample {
  int sample_index = 0;
  WeightTriple weights;
  const ProbDist* soft = nullptr;
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

// Mini-batch gradient descent over seeded-shuffled passes; gradients are
// averaged per batch and clipped by global norm. Throws DivergenceError
// naming the step when the loss stops being finite.
TrainResult train_single(ModelParams params, const std::vector<Sample>& samples,
                         const std::vector<TrainExample>& examples, double tau,
                         int epochs, double lr, std::optional<double> max_grad_norm,
                         int batch_size, std::mt19937_64& rng);

// Stage 1: stratified fold plan, per-fold teachers trained out-of-fold,
// soft labels cached for each teacher's held-out fold, students trained on
// the full set under stage1_weights, per-fold held-out evaluation.
StageArtifacts stage1(const std::vector<Sample>& dataset, int num_classes,
                      const TrainConfig& cfg);

// Stage 2: per-fold dual-tier selection against the cached teacher signal,
// then low-rate refinement on the selected samples only, each weighted by
// its category. Folds with an empty selection pass through bit-identical.
StageArtifacts stage2(const StageArtifacts& artifacts, const std::vector<Sample>& dataset,
                      int num_classes, const TrainConfig& cfg);

MetricsReport evaluate(const ModelParams& params, const std::vector<Sample>& samples,
                       double tau);

// Mean of the per-model probability outputs. Extension beyond per-fold
// reporting; not part of the two-stage procedure itself.
MetricsReport evaluate_ensemble(const std::vector<ModelParams>& models,
                                const std::vector<Sample>& samples, double tau);

// Per-fold selection views for one student, teacher signal per config.
std::vector<PredictionView> build_views(const ModelParams& student,
                                        const std::vector<Sample>& dataset,
                                        const StageArtifacts& artifacts,
                                        const TrainConfig& cfg);

struct SweepPoint {
  std::optional<WeightTriple> stage1_weights;
  std::optional<double> delta;
  std::optional<int> k_folds;
};

struct SweepRow {
  TrainConfig config;
  bool failed = false;
  std::string error;
  std::vector<MetricsReport> stage1_per_fold;
  std::vector<MetricsReport> stage2_per_fold;
  StageSummary stage1_summary;
  StageSummary stage2_summary;
  double mean_selected_fraction = 0.0;
};

// Full two-stage run per grid point with a shared seed. Rows come back
// sorted by stage-2 MAP@3 mean, best first; failures sort last and carry
// the error text instead of aborting the sweep.
std::vector<SweepRow> sweep(const std::vector<Sample>& dataset, int num_classes,
                            const TrainConfig& base, const std::vector<SweepPoint>& grid);

// ---- run directory artifacts ----
//
// config.json, foldplan.json, softlabels.csv, checkpoints/teacher_<k>.json,
// checkpoints/student_stage1_<k>.json, checkpoints/student_stage2_<k>.json,
// selection_<k>.json, metrics_stage1.json, metrics_stage2.json, sweep.csv

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

// Columns: id, fold, tau, p_0..p_{C-1}; probabilities round-trip exactly.
std::string softlabels_to_csv(const SoftLabelCache& cache, int num_classes);
SoftLabelCache softlabels_from_csv(const std::string& text, int num_classes);

std::string stage_metrics_to_json(const StageArtifacts& art);

void write_stage1_outputs(const std::string& run_dir, const StageArtifacts& art,
                          const TrainConfig& cfg);
void write_stage2_outputs(const std::string& run_dir, const StageArtifacts& art);
void write_selection_outputs(const std::string& run_dir,
                             const std::vector<SelectionReport>& reports);
void write_sweep_outputs(const std::string& out_dir, const std::vector<SweepRow>& rows);

// Rebuilds stage-1 artifacts (plan, cache, checkpoints, metrics) from a run
// directory; errors name the missing file.
StageArtifacts read_stage1_artifacts(const std::string& run_dir, const TrainConfig& cfg,
                                     const std::vector<Sample>& dataset);

}  // namespace distil
