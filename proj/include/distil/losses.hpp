#pragma once

#include "distil/model.hpp"

namespace distil {

// Mixing coefficients (alpha, beta, gamma) for CE / KD / cosine terms.
struct WeightTriple {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

struct LossBreakdown {
  double ce = 0.0;
  double kd = 0.0;
  double cos = 0.0;
  double total = 0.0;  // alpha*ce + beta*kd + gamma*cos
};

// Probabilities are clamped to this floor inside every log.
inline constexpr double kProbFloor = 1e-12;

// -log p_s(y), natural log.
double ce_loss(const ProbDist& p_s, int y);

// tau^2 * KL(p_t || p_s). Both distributions are expected to have been
// produced at temperature tau by the caller.
double kd_loss(const ProbDist& p_t, const ProbDist& p_s, double tau);

// 1 - cosine(p_s, p_t), taken over the probability vectors.
double cos_loss(const ProbDist& p_s, const ProbDist& p_t);

// p_t may be null only when beta == gamma == 0; kd and cos report 0 then.
LossBreakdown composite_loss(const ProbDist& p_s, int y, const ProbDist* p_t,
                             const WeightTriple& w, double tau);

// Exact gradient of composite_loss(...).total with respect to the student
// logits, with p_s = softmax_temp(logits_s, tau) computed internally.
Logits composite_loss_grad(const Logits& logits_s, int y, const ProbDist* p_t,
                           const WeightTriple& w, double tau);

}  // namespace distil
