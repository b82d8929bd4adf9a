#include "distil/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "distil/errors.hpp"
#include "distil/ioutil.hpp"

namespace distil {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// x -> W x + b
std::vector<double> affine(const LayerParams& layer, const std::vector<double>& x) {
  std::vector<double> out(layer.bias);
  for (int r = 0; r < layer.weights.rows; ++r) {
    double acc = 0.0;
    const double* row = layer.weights.data.data() + static_cast<std::size_t>(r) * layer.weights.cols;
    for (int c = 0; c < layer.weights.cols; ++c) {
      acc += row[c] * x[static_cast<std::size_t>(c)];
    }
    out[static_cast<std::size_t>(r)] += acc;
  }
  return out;
}

}  // namespace

ArchSpec parse_arch(const std::string& s) {
  if (s == "linear") {
    return {Arch::Linear, 0};
  }
  if (s.rfind("hidden:", 0) == 0) {
    int width = 0;
    try {
      width = std::stoi(s.substr(7));
    } catch (const std::exception&) {
      throw ConfigError("bad arch spec '" + s + "'");
    }
    if (width <= 0) {
      throw ConfigError("hidden width must be positive in '" + s + "'");
    }
    return {Arch::OneHidden, width};
  }
  throw ConfigError("bad arch spec '" + s + "' (expected 'linear' or 'hidden:<width>')");
}

std::string arch_to_string(const ArchSpec& s) {
  return s.arch == Arch::Linear ? "linear" : "hidden:" + std::to_string(s.hidden_width);
}

ModelParams init_params(const ArchSpec& spec, int num_features, int num_classes,
                        std::mt19937_64& rng) {
  if (num_features <= 0 || num_classes < 2) {
    throw ConfigError("need num_features > 0 and num_classes >= 2");
  }
  ModelParams p;
  p.arch = spec.arch;
  p.hidden_width = spec.arch == Arch::OneHidden ? spec.hidden_width : 0;
  p.num_features = num_features;
  p.num_classes = num_classes;

  auto make_layer = [&rng](int out, int in) {
    LayerParams layer;
    layer.weights = Matrix(out, in);
    layer.bias.assign(static_cast<std::size_t>(out), 0.0);
    const double s = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-s, s);
    for (double& w : layer.weights.data) {
      w = dist(rng);
    }
    return layer;
  };

  if (spec.arch == Arch::Linear) {
    p.layers.push_back(make_layer(num_classes, num_features));
  } else {
    if (spec.hidden_width <= 0) {
      throw ConfigError("OneHidden needs a positive hidden width");
    }
    p.layers.push_back(make_layer(spec.hidden_width, num_features));
    p.layers.push_back(make_layer(num_classes, spec.hidden_width));
  }
  return p;
}

void validate_params(const ModelParams& p) {
  const std::size_t expect_layers = p.arch == Arch::Linear ? 1 : 2;
  if (p.layers.size() != expect_layers) {
    throw DataError("wrong layer count for arch");
  }
  if (p.num_features <= 0 || p.num_classes < 2) {
    throw DataError("bad model dimensions");
  }
  const int mid = p.arch == Arch::Linear ? p.num_classes : p.hidden_width;
  if (p.arch == Arch::OneHidden && p.hidden_width <= 0) {
    throw DataError("OneHidden without a hidden width");
  }
  if (p.layers[0].weights.rows != mid || p.layers[0].weights.cols != p.num_features ||
      static_cast<int>(p.layers[0].bias.size()) != mid) {
    throw DataError("layer 0 shape mismatch");
  }
  if (p.arch == Arch::OneHidden) {
    if (p.layers[1].weights.rows != p.num_classes ||
        p.layers[1].weights.cols != p.hidden_width ||
        static_cast<int>(p.layers[1].bias.size()) != p.num_classes) {
      throw DataError("layer 1 shape mismatch");
    }
  }
  for (const auto& layer : p.layers) {
    if (!all_finite(layer.weights.data) || !all_finite(layer.bias)) {
      throw DataError("non-finite model parameter");
    }
  }
}

void validate_prob_dist(const ProbDist& p) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DataError("probability outside [0, 1]");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DataError("probabilities sum to " + format_double(sum));
  }
}

Logits forward(const ModelParams& p, const std::vector<double>& features) {
  if (static_cast<int>(features.size()) != p.num_features) {
    throw DataError("feature vector length " + std::to_string(features.size()) +
                    ", model expects " + std::to_string(p.num_features));
  }
  if (p.arch == Arch::Linear) {
    return affine(p.layers[0], features);
  }
  std::vector<double> hidden = affine(p.layers[0], features);
  for (double& h : hidden) {
    h = std::tanh(h);
  }
  return affine(p.layers[1], hidden);
}

ProbDist softmax_temp(const Logits& z, double tau) {
  if (!(tau > 0.0)) {
    throw ConfigError("tau must be positive");
  }
  if (z.empty() || !all_finite(z)) {
    throw DataError("logits must be finite and non-empty");
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  ProbDist p(z.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < z.size(); ++j) {
    p[j] = std::exp((z[j] - zmax) / tau);
    sum += p[j];
  }
  for (double& v : p) {
    v /= sum;
  }
  return p;
}

std::vector<int> predict_topk(const ProbDist& p, int k) {
  const int c = static_cast<int>(p.size());
  if (k < 1 || k > c) {
    throw ConfigError("k must be in [1, C]");
  }
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&p](int a, int b) {
    if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)]) {
      return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
    }
    return a < b;
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

ModelGrads backward(const ModelParams& p, const std::vector<double>& features,
                    const Logits& dloss_dlogits) {
  if (static_cast<int>(dloss_dlogits.size()) != p.num_classes) {
    throw DataError("gradient length does not match num_classes");
  }
  ModelGrads g = zero_grads(p);
  if (p.arch == Arch::Linear) {
    for (int r = 0; r < p.num_classes; ++r) {
      const double gr = dloss_dlogits[static_cast<std::size_t>(r)];
      g.layers[0].bias[static_cast<std::size_t>(r)] = gr;
      for (int c = 0; c < p.num_features; ++c) {
        g.layers[0].weights(r, c) = gr * features[static_cast<std::size_t>(c)];
      }
    }
    return g;
  }

  std::vector<double> hidden = affine(p.layers[0], features);
  for (double& h : hidden) {
    h = std::tanh(h);
  }
  std::vector<double> dhidden(hidden.size(), 0.0);
  for (int r = 0; r < p.num_classes; ++r) {
    const double gr = dloss_dlogits[static_cast<std::size_t>(r)];
    g.layers[1].bias[static_cast<std::size_t>(r)] = gr;
    for (int c = 0; c < p.hidden_width; ++c) {
      g.layers[1].weights(r, c) = gr * hidden[static_cast<std::size_t>(c)];
      dhidden[static_cast<std::size_t>(c)] += gr * p.layers[1].weights(r, c);
    }
  }
  for (int r = 0; r < p.hidden_width; ++r) {
    const double h = hidden[static_cast<std::size_t>(r)];
    const double dpre = dhidden[static_cast<std::size_t>(r)] * (1.0 - h * h);
    g.layers[0].bias[static_cast<std::size_t>(r)] = dpre;
    for (int c = 0; c < p.num_features; ++c) {
      g.layers[0].weights(r, c) = dpre * features[static_cast<std::size_t>(c)];
    }
  }
  return g;
}

ModelGrads zero_grads(const ModelParams& p) {
  ModelGrads g = p;
  for (auto& layer : g.layers) {
    std::fill(layer.weights.data.begin(), layer.weights.data.end(), 0.0);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
  return g;
}

void accumulate(ModelGrads& acc, const ModelGrads& g, double scale) {
  for (std::size_t l = 0; l < acc.layers.size(); ++l) {
    auto& a = acc.layers[l];
    const auto& b = g.layers[l];
    for (std::size_t i = 0; i < a.weights.data.size(); ++i) {
      a.weights.data[i] += scale * b.weights.data[i];
    }
    for (std::size_t i = 0; i < a.bias.size(); ++i) {
      a.bias[i] += scale * b.bias[i];
    }
  }
}

double global_grad_norm(const ModelGrads& g) {
  double sq = 0.0;
  for (const auto& layer : g.layers) {
    for (double v : layer.weights.data) {
      sq += v * v;
    }
    for (double v : layer.bias) {
      sq += v * v;
    }
  }
  return std::sqrt(sq);
}

ModelParams apply_update(ModelParams params, const ModelGrads& grads, double lr,
                         std::optional<double> max_grad_norm) {
  for (const auto& layer : grads.layers) {
    if (!all_finite(layer.weights.data) || !all_finite(layer.bias)) {
      throw DivergenceError("non-finite gradient");
    }
  }
  double scale = 1.0;
  if (max_grad_norm) {
    const double norm = global_grad_norm(grads);
    if (norm > *max_grad_norm && norm > 0.0) {
      scale = *max_grad_norm / norm;
    }
  }
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& dst = params.layers[l];
    const auto& src = grads.layers[l];
    for (std::size_t i = 0; i < dst.weights.data.size(); ++i) {
      dst.weights.data[i] -= lr * scale * src.weights.data[i];
    }
    for (std::size_t i = 0; i < dst.bias.size(); ++i) {
      dst.bias[i] -= lr * scale * src.bias[i];
    }
  }
  return params;
}

std::string save_checkpoint(const ModelParams& p) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["arch"] = p.arch == Arch::Linear ? "linear" : "one_hidden";
  if (p.arch == Arch::OneHidden) {
    doc["hidden_width"] = p.hidden_width;
  }
  doc["num_features"] = p.num_features;
  doc["num_classes"] = p.num_classes;
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : p.layers) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < layer.weights.rows; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < layer.weights.cols; ++c) {
        row.push_back(layer.weights(r, c));
      }
      rows.push_back(std::move(row));
    }
    layers.push_back({{"weights", std::move(rows)}, {"bias", layer.bias}});
  }
  doc["layers"] = std::move(layers);
  return doc.dump();
}

ModelParams load_checkpoint(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != 1) {
      throw DataError("unsupported checkpoint format_version");
    }
    ModelParams p;
    const std::string arch = doc.at("arch").get<std::string>();
    if (arch == "linear") {
      p.arch = Arch::Linear;
    } else if (arch == "one_hidden") {
      p.arch = Arch::OneHidden;
      p.hidden_width = doc.at("hidden_width").get<int>();
    } else {
      throw DataError("unknown arch '" + arch + "'");
    }
    p.num_features = doc.at("num_features").get<int>();
    p.num_classes = doc.at("num_classes").get<int>();
    for (const auto& jl : doc.at("layers")) {
      LayerParams layer;
      const auto& rows = jl.at("weights");
      layer.weights = Matrix(static_cast<int>(rows.size()),
                             rows.empty() ? 0 : static_cast<int>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (static_cast<int>(rows[r].size()) != layer.weights.cols) {
          throw DataError("ragged weight matrix in checkpoint");
        }
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
          layer.weights(static_cast<int>(r), static_cast<int>(c)) = rows[r][c].get<double>();
        }
      }
      layer.bias = jl.at("bias").get<std::vector<double>>();
      p.layers.push_back(std::move(layer));
    }
    validate_params(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint contents: ") + e.what());
  }
}

void save_checkpoint_file(const ModelParams& p, const std::string& path) {
  write_text_file(path, save_checkpoint(p));
}

ModelParams load_checkpoint_file(const std::string& path) {
  return load_checkpoint(read_text_file(path));
}

}  // namespace distil
