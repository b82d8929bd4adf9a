#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace distil {

// Raw logits over the label set.
using Logits = std::vector<double>;

// Point on the probability simplex: entries in [0,1], summing to 1 within
// 1e-9. Produced by softmax_temp; validated at ingest boundaries.
using ProbDist = std::vector<double>;

enum class Arch { Linear, OneHidden };

struct ArchSpec {
  Arch arch = Arch::Linear;
  int hidden_width = 0;  // used iff arch == OneHidden, > 0 there
};

ArchSpec parse_arch(const std::string& s);  // "linear" or "hidden:<width>"
std::string arch_to_string(const ArchSpec& s);

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  double& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct LayerParams {
  Matrix weights;            // out x in
  std::vector<double> bias;  // out
};

// Dense classifier parameters. Teachers and students are the same structure
// at different sizes.
struct ModelParams {
  Arch arch = Arch::Linear;
  int hidden_width = 0;
  int num_features = 0;
  int num_classes = 0;
  std::vector<LayerParams> layers;  // 1 for Linear, 2 for OneHidden
};

// Gradients share the parameter layout exactly.
using ModelGrads = ModelParams;

// Uniform [-s, s] weights with s = sqrt(6 / (fan_in + fan_out)), zero biases.
ModelParams init_params(const ArchSpec& spec, int num_features, int num_classes,
                        std::mt19937_64& rng);

// Throws DataError if shapes are inconsistent or entries non-finite.
void validate_params(const ModelParams& p);
void validate_prob_dist(const ProbDist& p);

Logits forward(const ModelParams& p, const std::vector<double>& features);

// softmax(z / tau) with max subtraction. tau > 0, logits finite.
ProbDist softmax_temp(const Logits& z, double tau);

// Top-k class indices by probability, descending; ties go to the lower index.
std::vector<int> predict_topk(const ProbDist& p, int k);

// Parameter gradients for dloss/dlogits at the given input. Activations are
// recomputed; models here are small enough that this never matters.
ModelGrads backward(const ModelParams& p, const std::vector<double>& features,
                    const Logits& dloss_dlogits);

ModelGrads zero_grads(const ModelParams& p);
void accumulate(ModelGrads& acc, const ModelGrads& g, double scale = 1.0);
double global_grad_norm(const ModelGrads& g);

// Gradient step with optional global-norm clipping. Returns new parameters.
ModelParams apply_update(ModelParams params, const ModelGrads& grads, double lr,
                         std::optional<double> max_grad_norm);

// Checkpoint JSON; load(save(p)) reproduces bit-identical forward outputs.
std::string save_checkpoint(const ModelParams& p);
ModelParams load_checkpoint(const std::string& json_text);
void save_checkpoint_file(const ModelParams& p, const std::string& path);
ModelParams load_checkpoint_file(const std::string& path);

}  // namespace distil
