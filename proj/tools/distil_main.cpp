#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "distil/data.hpp"
#include "distil/errors.hpp"
#include "distil/ioutil.hpp"
#include "distil/metrics.hpp"
#include "distil/pipeline.hpp"

namespace fs = std::filesystem;
using namespace distil;

namespace {

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

// --out/--run fall back to DISTIL_RUN_ROOT so scripted runs can omit the flag.
std::string resolve_dir(const std::string& flag_value, const char* flag_name) {
  if (!flag_value.empty()) {
    return flag_value;
  }
  if (const char* env = std::getenv("DISTIL_RUN_ROOT")) {
    if (*env != '\0') {
      return env;
    }
  }
  throw ConfigError(std::string("missing ") + flag_name +
                    " and DISTIL_RUN_ROOT is unset");
}

std::vector<double> parse_double_list(const std::string& text, const char* flag_name) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t pos = text.find(',', start);
    const std::string tok =
        text.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (tok.empty()) {
      throw ConfigError(std::string("empty entry in ") + flag_name);
    }
    try {
      out.push_back(parse_double(tok));
    } catch (const DataError&) {
      throw ConfigError(std::string("bad number '") + tok + "' in " + flag_name);
    }
    if (pos == std::string::npos) {
      break;
    }
    start = pos + 1;
  }
  return out;
}

WeightTriple parse_weight_triple(const std::string& text, const char* flag_name) {
  const auto vals = parse_double_list(text, flag_name);
  if (vals.size() != 3) {
    throw ConfigError(std::string(flag_name) + " entries need exactly three numbers");
  }
  return {vals[0], vals[1], vals[2]};
}

Stage2Scheme parse_scheme(const std::string& s) {
  if (s == "adaptive") {
    return Stage2Scheme::Adaptive;
  }
  if (s == "uniform") {
    return Stage2Scheme::Uniform;
  }
  throw ConfigError("unknown --scheme '" + s + "'");
}

TeacherSignal parse_signal(const std::string& s) {
  if (s == "cache") {
    return TeacherSignal::Cache;
  }
  if (s == "ensemble-mean") {
    return TeacherSignal::EnsembleMean;
  }
  throw ConfigError("unknown --teacher-signal '" + s + "'");
}

std::string weights_str(const WeightTriple& w) {
  return "(" + fmt4(w.alpha) + "," + fmt4(w.beta) + "," + fmt4(w.gamma) + ")";
}

LoadedDataset load_or_die(const std::string& path, int dim) {
  LoadedDataset ds = load_dataset(path, dim);
  if (ds.samples.empty()) {
    throw DataError("dataset '" + path + "' is empty");
  }
  return ds;
}

struct ConfusedRow {
  int true_label = 0;
  int predicted = 0;
  int stage1 = 0;
  int stage2 = 0;
};

std::vector<MetricsReport> parse_per_fold(const std::string& text, const std::string& name) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad JSON in " + name + ": " + e.what());
  }
  std::vector<MetricsReport> out;
  try {
    for (const auto& entry : doc.at("per_fold")) {
      out.push_back(metrics_from_json(entry.dump()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad contents in " + name + ": " + e.what());
  }
  return out;
}

void run_report_sweep(const std::string& run_dir) {
  const std::string csv = read_text_file((fs::path(run_dir) / "sweep.csv").string());
  std::vector<std::vector<std::string>> table;
  std::size_t line_start = 0;
  while (line_start < csv.size()) {
    std::size_t line_end = csv.find('\n', line_start);
    if (line_end == std::string::npos) {
      line_end = csv.size();
    }
    const std::string line = csv.substr(line_start, line_end - line_start);
    line_start = line_end + 1;
    if (line.empty()) {
      continue;
    }
    // The error column is last and may be quoted; split the first 15 commas only.
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (fields.size() < 15) {
      const std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    fields.push_back(line.substr(start));
    table.push_back(std::move(fields));
  }
  std::vector<std::size_t> widths;
  for (const auto& row : table) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t i = 0; i < row.size(); ++i) {
      widths[i] = std::max(widths[i], row[i].size());
    }
  }
  for (const auto& row : table) {
    std::string out;
    for (std::size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      if (i + 1 < row.size()) {
        out.append(widths[i] - row[i].size() + 2, ' ');
      }
    }
    std::cout << out << "\n";
  }
}

void run_report_stages(const std::string& run_dir) {
  const fs::path dir(run_dir);
  const auto stage1_folds =
      parse_per_fold(read_text_file((dir / "metrics_stage1.json").string()),
                     "metrics_stage1.json");
  const auto stage2_folds =
      parse_per_fold(read_text_file((dir / "metrics_stage2.json").string()),
                     "metrics_stage2.json");
  const StageSummary s1 = summarize(stage1_folds);
  const StageSummary s2 = summarize(stage2_folds);

  auto print_row = [](const std::string& name, const MetricSummary& a,
                      const MetricSummary& b) {
    std::printf("%-10s  %8s ±%-8s  %8s ±%-8s  %+0.4f\n", name.c_str(),
                fmt4(a.mean).c_str(), fmt4(a.stddev).c_str(), fmt4(b.mean).c_str(),
                fmt4(b.stddev).c_str(), b.mean - a.mean);
  };
  std::printf("%-10s  %-19s %-19s %s\n", "metric", "stage1 (mean±std)", "stage2 (mean±std)",
              "delta");
  print_row("map@3", s1.map_at_3, s2.map_at_3);
  print_row("map@10", s1.map_at_10, s2.map_at_10);
  print_row("accuracy", s1.accuracy, s2.accuracy);
  print_row("f1@3", s1.f1_at_3, s2.f1_at_3);

  std::map<std::pair<int, int>, ConfusedRow> confused;
  for (const auto& fold : stage1_folds) {
    for (const auto& [pair, count] : fold.top_confused_pairs) {
      auto& row = confused[pair];
      row.true_label = pair.first;
      row.predicted = pair.second;
      row.stage1 += count;
    }
  }
  for (const auto& fold : stage2_folds) {
    for (const auto& [pair, count] : fold.top_confused_pairs) {
      auto& row = confused[pair];
      row.true_label = pair.first;
      row.predicted = pair.second;
      row.stage2 += count;
    }
  }
  std::vector<ConfusedRow> rows;
  rows.reserve(confused.size());
  for (const auto& [pair, row] : confused) {
    rows.push_back(row);
  }
  std::sort(rows.begin(), rows.end(), [](const ConfusedRow& a, const ConfusedRow& b) {
    const int ma = std::max(a.stage1, a.stage2);
    const int mb = std::max(b.stage1, b.stage2);
    if (ma != mb) {
      return ma > mb;
    }
    return std::pair(a.true_label, a.predicted) < std::pair(b.true_label, b.predicted);
  });
  if (rows.size() > static_cast<std::size_t>(kTopConfusedPairs)) {
    rows.resize(static_cast<std::size_t>(kTopConfusedPairs));
  }
  if (!rows.empty()) {
    std::printf("\n%-18s  %7s  %7s  %s\n", "true -> predicted", "stage1", "stage2", "delta");
    for (const auto& row : rows) {
      std::printf("%-18s  %7d  %7d  %+d\n",
                  (std::to_string(row.true_label) + " -> " + std::to_string(row.predicted))
                      .c_str(),
                  row.stage1, row.stage2, row.stage2 - row.stage1);
    }
  }

  nlohmann::json doc;
  auto summary_json = [](const StageSummary& s) {
    auto one = [](const MetricSummary& m) {
      return nlohmann::json{{"mean", m.mean}, {"stddev", m.stddev}};
    };
    return nlohmann::json{{"map_at_3", one(s.map_at_3)},
                          {"map_at_10", one(s.map_at_10)},
                          {"accuracy", one(s.accuracy)},
                          {"f1_at_3", one(s.f1_at_3)}};
  };
  doc["stage1"] = summary_json(s1);
  doc["stage2"] = summary_json(s2);
  doc["delta"] = {{"map_at_3", s2.map_at_3.mean - s1.map_at_3.mean},
                  {"map_at_10", s2.map_at_10.mean - s1.map_at_10.mean},
                  {"accuracy", s2.accuracy.mean - s1.accuracy.mean},
                  {"f1_at_3", s2.f1_at_3.mean - s1.f1_at_3.mean}};
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& row : rows) {
    pairs.push_back({{"true", row.true_label},
                     {"predicted", row.predicted},
                     {"stage1", row.stage1},
                     {"stage2", row.stage2},
                     {"delta", row.stage2 - row.stage1}});
  }
  doc["top_confused"] = std::move(pairs);
  write_text_file((dir / "report.json").string(), doc.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage distillation workbench for small classifiers"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  TrainConfig cfg;
  std::string teacher_arch = arch_to_string(cfg.teacher_arch);
  std::string student_arch = arch_to_string(cfg.student_arch);
  std::string teacher_signal = "cache";
  std::string scheme = "adaptive";
  std::string data_path;
  std::string out_dir;
  std::string run_dir;
  std::string checkpoint_path;
  std::string metrics_out;
  std::string deltas_flag;
  std::string ks_flag;
  std::string weights_flag;
  double delta_override = -1.0;
  SynthConfig synth_cfg;

  auto add_config_flags = [&](CLI::App* sub) {
    sub->add_option("--teacher-arch", teacher_arch, "teacher architecture, linear or hidden:<width>");
    sub->add_option("--student-arch", student_arch, "student architecture, linear or hidden:<width>");
    sub->add_option("--k", cfg.k_folds, "number of folds");
    sub->add_option("--tau", cfg.tau, "distillation temperature");
    sub->add_option("--delta", cfg.delta, "near-miss confidence threshold");
    sub->add_option("--alpha", cfg.stage1_weights.alpha, "stage-1 CE weight");
    sub->add_option("--beta", cfg.stage1_weights.beta, "stage-1 KD weight");
    sub->add_option("--gamma", cfg.stage1_weights.gamma, "stage-1 cosine weight");
    sub->add_option("--teacher-lr", cfg.teacher_lr, "teacher learning rate");
    sub->add_option("--student-lr", cfg.student_lr, "student learning rate");
    sub->add_option("--stage2-lr", cfg.stage2_lr, "stage-2 refinement learning rate");
    sub->add_option("--max-grad-norm", cfg.max_grad_norm, "global gradient clip");
    sub->add_option("--teacher-epochs", cfg.teacher_epochs, "teacher epochs");
    sub->add_option("--student-epochs", cfg.student_epochs, "student epochs");
    sub->add_option("--stage2-epochs", cfg.stage2_epochs, "stage-2 epochs");
    sub->add_option("--batch-size", cfg.batch_size, "mini-batch size");
    sub->add_option("--seed", cfg.seed, "master seed");
    sub->add_option("--jobs", cfg.jobs, "parallel fold workers");
    sub->add_option("--dim", cfg.dim, "text hashing width");
    sub->add_option("--teacher-signal", teacher_signal, "stage-2 teacher signal")
        ->check(CLI::IsMember({"cache", "ensemble-mean"}));
  };
  auto finish_config = [&] {
    cfg.teacher_arch = parse_arch(teacher_arch);
    cfg.student_arch = parse_arch(student_arch);
    cfg.teacher_signal = parse_signal(teacher_signal);
    cfg.stage2_scheme = parse_scheme(scheme);
    validate_config(cfg);
  };

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic long-tail dataset");
  synth->add_option("--classes", synth_cfg.num_classes, "number of classes");
  synth->add_option("--dim", synth_cfg.dim, "feature dimension");
  synth->add_option("--n", synth_cfg.num_samples, "number of samples");
  synth->add_option("--imbalance", synth_cfg.imbalance_exponent, "long-tail exponent");
  synth->add_option("--boundary-noise", synth_cfg.boundary_noise_rate,
                    "fraction drawn between two prototypes");
  synth->add_option("--flip-noise", synth_cfg.flip_noise_rate, "fraction of labels reassigned");
  synth->add_option("--seed", synth_cfg.seed, "generator seed");
  synth->add_option("--out", out_dir, "output directory");
  synth->callback([&] {
    const std::string dir = resolve_dir(out_dir, "--out");
    auto [samples, labels] = synth_generate(synth_cfg);
    fs::create_directories(dir);
    const std::string path = (fs::path(dir) / "dataset.jsonl").string();
    write_dataset_jsonl(path, samples, labels);
    std::cout << "synth wrote " << path << " n=" << samples.size()
              << " classes=" << labels.size() << " dim=" << synth_cfg.dim << "\n";
  });

  CLI::App* stage1_cmd = app.add_subcommand("stage1", "Fold teachers, soft labels, students");
  stage1_cmd->add_option("--data", data_path, "dataset JSONL path")->required();
  stage1_cmd->add_option("--out", out_dir, "run directory");
  add_config_flags(stage1_cmd);
  stage1_cmd->callback([&] {
    finish_config();
    const std::string dir = resolve_dir(out_dir, "--out");
    cfg.data_path = data_path;
    const LoadedDataset ds = load_or_die(data_path, cfg.dim);
    const StageArtifacts art = stage1(ds.samples, ds.labels.size(), cfg);
    write_stage1_outputs(dir, art, cfg);
    std::cout << "stage1 k=" << cfg.k_folds << " map@3 " << fmt4(art.summary.map_at_3.mean)
              << "±" << fmt4(art.summary.map_at_3.stddev) << " acc "
              << fmt4(art.summary.accuracy.mean) << " f1@3 "
              << fmt4(art.summary.f1_at_3.mean) << " -> " << dir << "\n";
  });

  CLI::App* select_cmd = app.add_subcommand("select", "Dual-tier selection for each fold student");
  select_cmd->add_option("--run", run_dir, "run directory with stage-1 artifacts");
  select_cmd->add_option("--delta", delta_override, "override the near-miss threshold");
  select_cmd->callback([&] {
    const std::string dir = resolve_dir(run_dir, "--run");
    TrainConfig run_cfg =
        config_from_json(read_text_file((fs::path(dir) / "config.json").string()));
    if (delta_override >= 0.0) {
      run_cfg.delta = delta_override;
      validate_config(run_cfg);
    }
    const LoadedDataset ds = load_or_die(run_cfg.data_path, run_cfg.dim);
    const StageArtifacts art = read_stage1_artifacts(dir, run_cfg, ds.samples);
    std::vector<SelectionReport> reports;
    reports.reserve(art.fold_students.size());
    std::array<long, kNumCategories> totals{};
    double frac = 0.0;
    for (const auto& student : art.fold_students) {
      reports.push_back(
          categorize_dataset(build_views(student, ds.samples, art, run_cfg), run_cfg.delta));
      for (int i = 0; i < kNumCategories; ++i) {
        totals[static_cast<std::size_t>(i)] += reports.back().counts[i];
      }
      frac += reports.back().selected_fraction;
    }
    write_selection_outputs(dir, reports);
    std::cout << "select folds=" << reports.size() << " mean_selected_fraction="
              << fmt4(frac / static_cast<double>(reports.size()));
    for (int i = 0; i < kNumCategories; ++i) {
      std::cout << " " << category_name(static_cast<CategoryKind>(i)) << "="
                << totals[static_cast<std::size_t>(i)];
    }
    std::cout << " -> " << dir << "\n";
  });

  CLI::App* stage2_cmd = app.add_subcommand("stage2", "Selection-driven adaptive refinement");
  stage2_cmd->add_option("--run", run_dir, "run directory with stage-1 artifacts");
  stage2_cmd->add_option("--scheme", scheme, "stage-2 weighting scheme")
      ->check(CLI::IsMember({"adaptive", "uniform"}));
  auto* s2_lr = stage2_cmd->add_option("--stage2-lr", cfg.stage2_lr, "refinement learning rate");
  auto* s2_ep = stage2_cmd->add_option("--stage2-epochs", cfg.stage2_epochs, "refinement epochs");
  auto* s2_jobs = stage2_cmd->add_option("--jobs", cfg.jobs, "parallel fold workers");
  auto* s2_sig = stage2_cmd->add_option("--teacher-signal", teacher_signal, "teacher signal")
                     ->check(CLI::IsMember({"cache", "ensemble-mean"}));
  stage2_cmd->callback([&] {
    const std::string dir = resolve_dir(run_dir, "--run");
    TrainConfig run_cfg =
        config_from_json(read_text_file((fs::path(dir) / "config.json").string()));
    run_cfg.stage2_scheme = parse_scheme(scheme);
    if (s2_lr->count() > 0) {
      run_cfg.stage2_lr = cfg.stage2_lr;
    }
    if (s2_ep->count() > 0) {
      run_cfg.stage2_epochs = cfg.stage2_epochs;
    }
    if (s2_jobs->count() > 0) {
      run_cfg.jobs = cfg.jobs;
    }
    if (s2_sig->count() > 0) {
      run_cfg.teacher_signal = parse_signal(teacher_signal);
    }
    validate_config(run_cfg);
    const LoadedDataset ds = load_or_die(run_cfg.data_path, run_cfg.dim);
    const StageArtifacts art1 = read_stage1_artifacts(dir, run_cfg, ds.samples);
    const StageArtifacts art2 = stage2(art1, ds.samples, ds.labels.size(), run_cfg);
    write_stage2_outputs(dir, art2);
    double frac = 0.0;
    for (const auto& sel : art2.selection) {
      frac += sel.selected_fraction;
    }
    std::cout << "stage2 scheme=" << scheme << " map@3 " << fmt4(art2.summary.map_at_3.mean)
              << "±" << fmt4(art2.summary.map_at_3.stddev) << " (stage1 "
              << fmt4(art1.summary.map_at_3.mean) << ") selected "
              << fmt4(frac / static_cast<double>(art2.selection.size())) << " -> " << dir
              << "\n";
  });

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint JSON")->required();
  eval_cmd->add_option("--data", data_path, "dataset JSONL path")->required();
  eval_cmd->add_option("--tau", cfg.tau, "softmax temperature");
  eval_cmd->add_option("--dim", cfg.dim, "text hashing width");
  eval_cmd->add_option("--out", metrics_out, "optional metrics JSON output path");
  eval_cmd->callback([&] {
    const ModelParams params = load_checkpoint_file(checkpoint_path);
    const LoadedDataset ds = load_or_die(data_path, cfg.dim);
    const MetricsReport r = evaluate(params, ds.samples, cfg.tau);
    if (!metrics_out.empty()) {
      write_text_file(metrics_out, metrics_to_json(r) + "\n");
    }
    std::cout << "eval n=" << r.n << " map@3 " << fmt4(r.map_at_3) << " map@10 "
              << fmt4(r.map_at_10) << " acc " << fmt4(r.accuracy) << " f1@3 "
              << fmt4(r.f1_at_3) << "\n";
  });

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Two-stage runs across a config grid");
  sweep_cmd->add_option("--data", data_path, "dataset JSONL path")->required();
  sweep_cmd->add_option("--out", out_dir, "output directory");
  sweep_cmd->add_option("--deltas", deltas_flag, "comma-separated delta grid");
  sweep_cmd->add_option("--ks", ks_flag, "comma-separated fold-count grid");
  sweep_cmd->add_option("--weights", weights_flag,
                        "semicolon-separated alpha,beta,gamma triples");
  add_config_flags(sweep_cmd);
  sweep_cmd->callback([&] {
    finish_config();
    const std::string dir = resolve_dir(out_dir, "--out");
    cfg.data_path = data_path;

    std::vector<std::optional<WeightTriple>> weight_axis{std::nullopt};
    if (!weights_flag.empty()) {
      weight_axis.clear();
      std::size_t start = 0;
      while (start <= weights_flag.size()) {
        const std::size_t pos = weights_flag.find(';', start);
        const std::string tok = weights_flag.substr(
            start, pos == std::string::npos ? std::string::npos : pos - start);
        weight_axis.push_back(parse_weight_triple(tok, "--weights"));
        if (pos == std::string::npos) {
          break;
        }
        start = pos + 1;
      }
    }
    std::vector<std::optional<double>> delta_axis{std::nullopt};
    if (!deltas_flag.empty()) {
      delta_axis.clear();
      for (double d : parse_double_list(deltas_flag, "--deltas")) {
        delta_axis.push_back(d);
      }
    }
    std::vector<std::optional<int>> k_axis{std::nullopt};
    if (!ks_flag.empty()) {
      k_axis.clear();
      for (double k : parse_double_list(ks_flag, "--ks")) {
        if (k != static_cast<int>(k)) {
          throw ConfigError("--ks entries must be integers");
        }
        k_axis.push_back(static_cast<int>(k));
      }
    }
    std::vector<SweepPoint> grid;
    for (const auto& w : weight_axis) {
      for (const auto& d : delta_axis) {
        for (const auto& k : k_axis) {
          grid.push_back(SweepPoint{w, d, k});
        }
      }
    }
    const LoadedDataset ds = load_or_die(data_path, cfg.dim);
    const std::vector<SweepRow> rows = sweep(ds.samples, ds.labels.size(), cfg, grid);
    write_sweep_outputs(dir, rows);
    const auto& best = rows.front();
    std::cout << "sweep points=" << rows.size();
    if (best.failed) {
      std::cout << " all_failed";
    } else {
      std::cout << " best map@3=" << fmt4(best.stage2_summary.map_at_3.mean) << " (k="
                << best.config.k_folds << " delta=" << format_double(best.config.delta)
                << " weights=" << weights_str(best.config.stage1_weights) << ")";
    }
    std::cout << " -> " << dir << "\n";
  });

  CLI::App* report_cmd = app.add_subcommand("report", "Stage comparison or sweep table");
  report_cmd->add_option("--run", run_dir, "run or sweep directory");
  report_cmd->callback([&] {
    const std::string dir = resolve_dir(run_dir, "--run");
    if (fs::exists(fs::path(dir) / "sweep.csv")) {
      run_report_sweep(dir);
    } else {
      run_report_stages(dir);
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
