#include "distil/losses.hpp"

#include <algorithm>
#include <cmath>

#include "distil/errors.hpp"
#include "distil/model.hpp"

namespace distil {

namespace {

double clamped_log(double p) {
  return std::log(std::max(p, kProbFloor));
}

double dot(const ProbDist& a, const ProbDist& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += a[i] * b[i];
  }
  return acc;
}

double norm2(const ProbDist& a) {
  return std::sqrt(dot(a, a));
}

void check_pair(const ProbDist& a, const ProbDist& b) {
  if (a.size() != b.size()) {
    throw DataError("distribution length mismatch");
  }
}

}  // namespace

double ce_loss(const ProbDist& p_s, int y) {
  if (y < 0 || y >= static_cast<int>(p_s.size())) {
    throw DataError("label out of range");
  }
  return -clamped_log(p_s[static_cast<std::size_t>(y)]);
}

double kd_loss(const ProbDist& p_t, const ProbDist& p_s, double tau) {
  check_pair(p_t, p_s);
  if (!(tau > 0.0)) {
    throw ConfigError("tau must be positive");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p_t.size(); ++i) {
    if (p_t[i] > 0.0) {
      kl += p_t[i] * (clamped_log(p_t[i]) - clamped_log(p_s[i]));
    }
  }
  return tau * tau * kl;
}

double cos_loss(const ProbDist& p_s, const ProbDist& p_t) {
  check_pair(p_s, p_t);
  const double denom = norm2(p_s) * norm2(p_t);
  if (denom <= 0.0) {
    throw DataError("zero-norm distribution in cosine loss");
  }
  return 1.0 - dot(p_s, p_t) / denom;
}

LossBreakdown composite_loss(const ProbDist& p_s, int y, const ProbDist* p_t,
                             const WeightTriple& w, double tau) {
  if (p_t == nullptr && (w.beta > 0.0 || w.gamma > 0.0)) {
    throw ConfigError("distillation terms weighted but no teacher distribution given");
  }
  LossBreakdown out;
  out.ce = ce_loss(p_s, y);
  if (p_t != nullptr) {
    out.kd = kd_loss(*p_t, p_s, tau);
    out.cos = cos_loss(p_s, *p_t);
  }
  out.total = w.alpha * out.ce + w.beta * out.kd + w.gamma * out.cos;
  return out;
}

Logits composite_loss_grad(const Logits& logits_s, int y, const ProbDist* p_t,
                           const WeightTriple& w, double tau) {
  if (p_t == nullptr && (w.beta > 0.0 || w.gamma > 0.0)) {
    throw ConfigError("distillation terms weighted but no teacher distribution given");
  }
  const ProbDist s = softmax_temp(logits_s, tau);
  const std::size_t c = s.size();
  if (y < 0 || y >= static_cast<int>(c)) {
    throw DataError("label out of range");
  }
  Logits grad(c, 0.0);

  // dCE/dz = (1/tau) (s - onehot(y)); valid while p_s(y) stays above the floor.
  for (std::size_t i = 0; i < c; ++i) {
    grad[i] += w.alpha * (s[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) / tau;
  }

  if (p_t != nullptr) {
    const ProbDist& t = *p_t;
    check_pair(t, s);

    // dKD/dz = tau (s - t)
    for (std::size_t i = 0; i < c; ++i) {
      grad[i] += w.beta * tau * (s[i] - t[i]);
    }

    // dCOS/dz via dL/ds_j = -t_j/(ab) + (s.t) s_j / (a^3 b), then the softmax Jacobian.
    const double a = norm2(s);
    const double b = norm2(t);
    if (a <= 0.0 || b <= 0.0) {
      throw DataError("zero-norm distribution in cosine loss");
    }
    const double u = dot(s, t);
    std::vector<double> g(c);
    for (std::size_t j = 0; j < c; ++j) {
      g[j] = -t[j] / (a * b) + u * s[j] / (a * a * a * b);
    }
    double sg = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      sg += s[j] * g[j];
    }
    for (std::size_t i = 0; i < c; ++i) {
      grad[i] += w.gamma * s[i] * (g[i] - sg) / tau;
    }
  }
  return grad;
}

}  // namespace distil
