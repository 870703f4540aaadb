#include "cliptta/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cliptta/csv_io.hpp"
#include "cliptta/gradcheck.hpp"
#include "cliptta/gradients.hpp"

namespace cliptta {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

nlohmann::ordered_json manifest_json(const ExperimentConfig& cfg, const std::string& command,
                                     const std::vector<fs::path>& outputs,
                                     std::optional<double> duration) {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = cfg.engine.seed;
  nlohmann::ordered_json c;
  for (const auto& [k, v] : config_entries(cfg)) c[k] = v;
  j["config"] = c;
  std::vector<std::string> paths;
  for (const auto& p : outputs) paths.push_back(p.string());
  j["outputs"] = paths;
  j["duration_seconds"] = duration ? nlohmann::ordered_json(*duration) : nlohmann::ordered_json();
  return j;
}

// The manifest is written before any result and completed with the duration at the end.
class Manifest {
 public:
  Manifest(fs::path dir, ExperimentConfig cfg, std::string command, std::vector<fs::path> outputs)
      : path_(dir / "manifest.json"), cfg_(std::move(cfg)), command_(std::move(command)),
        outputs_(std::move(outputs)), start_(Clock::now()) {
    write(std::nullopt);
  }
  void finish() { write(seconds_since(start_)); }

 private:
  void write(std::optional<double> duration) const {
    auto f = open_output(path_);
    f << manifest_json(cfg_, command_, outputs_, duration).dump(2) << '\n';
  }
  fs::path path_;
  ExperimentConfig cfg_;
  std::string command_;
  std::vector<fs::path> outputs_;
  Clock::time_point start_;
};

template <typename Body>
int guarded(std::ostream& err, Body&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  } catch (const NumericError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumericError;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfigError;
  }
}

ExperimentConfig with_seed(ExperimentConfig cfg, std::uint64_t seed) {
  cfg.set_seed(seed);
  return cfg;
}

struct SummaryColumn {
  std::string name;
  std::optional<double> (*get)(const MetricRecord&);
};

const std::vector<SummaryColumn>& summary_columns() {
  static const std::vector<SummaryColumn> cols = {
      {"accuracy", [](const MetricRecord& r) -> std::optional<double> { return r.accuracy; }},
      {"prediction_entropy",
       [](const MetricRecord& r) -> std::optional<double> { return r.mean_prediction_entropy; }},
      {"mean_sample_entropy",
       [](const MetricRecord& r) -> std::optional<double> { return r.mean_sample_entropy; }},
      {"unique_predicted_classes",
       [](const MetricRecord& r) -> std::optional<double> {
         return static_cast<double>(r.unique_predicted_classes);
       }},
      {"improvement_ratio", [](const MetricRecord& r) { return r.improvement_ratio; }},
      {"deterioration_ratio", [](const MetricRecord& r) { return r.deterioration_ratio; }},
      {"auroc", [](const MetricRecord& r) { return r.auroc; }},
      {"fpr95", [](const MetricRecord& r) { return r.fpr95; }},
      {"mu_id_minus_mu_ood", [](const MetricRecord& r) { return r.mu_id_minus_mu_ood; }},
  };
  return cols;
}

// One summary row over seeds; a cell stays empty unless every seed has the value.
std::string summary_row(const std::string& label, const std::vector<const MetricRecord*>& recs) {
  std::ostringstream row;
  row << label;
  for (const auto& col : summary_columns()) {
    std::vector<double> values;
    for (const auto* r : recs)
      if (auto v = col.get(*r)) values.push_back(*v);
    if (values.size() == recs.size()) {
      const SeedSummary s = summarize_seeds(values);
      row << ',' << format_double(s.mean) << ',' << format_double(s.half_width);
    } else {
      row << ",,";
    }
  }
  return row.str();
}

void write_seed_summary(const fs::path& path, const std::vector<RunResult>& runs) {
  auto f = open_output(path);
  f << "batch";
  for (const auto& col : summary_columns()) f << ',' << col.name << "_mean," << col.name << "_half_width";
  f << '\n';
  for (std::size_t b = 0; b < runs.front().history.size(); ++b) {
    std::vector<const MetricRecord*> recs;
    for (const auto& r : runs) recs.push_back(&r.history[b]);
    f << summary_row(std::to_string(b), recs) << '\n';
  }
  std::vector<const MetricRecord*> finals;
  for (const auto& r : runs) finals.push_back(&r.final_eval);
  f << summary_row("final", finals) << '\n';
}

void write_memory_dump(const fs::path& path, const MemoryState& memory) {
  auto f = open_output(path);
  write_memory_csv(f, memory);
}

std::string summary_line(const RunResult& r) {
  return "final_accuracy=" + format_double(r.final_eval.accuracy) +
         " final_entropy=" + format_double(r.final_eval.mean_prediction_entropy) +
         " final_unique_classes=" + std::to_string(r.final_eval.unique_predicted_classes);
}

}  // namespace

ExperimentConfig resolve_config(const CommandOptions& opts) {
  ExperimentConfig cfg = opts.config_path ? load_config(*opts.config_path) : ExperimentConfig{};
  if (opts.seed) cfg.set_seed(*opts.seed);
  cfg.validate();
  return cfg;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const SyntheticWorld world = make_world(cfg.stream);
  const Engine engine = make_engine(cfg.engine, world, cfg.eps_norm);
  return engine.run_stream(world.stream, world.eval);
}

int cmd_simulate(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve_config(opts);
    fs::create_directories(opts.out_dir);
    const fs::path metrics = opts.out_dir / "metrics.csv";
    const fs::path memory = opts.out_dir / "memory.csv";

    if (opts.multi_seed > 0) {
      std::vector<fs::path> outputs;
      for (std::size_t k = 0; k < opts.multi_seed; ++k)
        outputs.push_back(opts.out_dir / ("metrics_seed" + std::to_string(cfg.engine.seed + k) + ".csv"));
      outputs.push_back(opts.out_dir / "metrics_summary.csv");
      Manifest manifest(opts.out_dir, cfg, "simulate", outputs);
      std::vector<RunResult> runs;
      for (std::size_t k = 0; k < opts.multi_seed; ++k) {
        runs.push_back(run_experiment(with_seed(cfg, cfg.engine.seed + k)));
        write_metrics_csv(outputs[k], runs.back().history);
      }
      write_seed_summary(outputs.back(), runs);
      std::vector<double> acc;
      for (const auto& r : runs) acc.push_back(r.final_eval.accuracy);
      const SeedSummary s = summarize_seeds(acc);
      manifest.finish();
      out << "seeds=" << opts.multi_seed << " final_accuracy_mean=" << format_double(s.mean)
          << " final_accuracy_half_width=" << format_double(s.half_width) << '\n';
      return static_cast<int>(kExitOk);
    }

    std::vector<fs::path> outputs{metrics};
    if (opts.dump_memory) outputs.push_back(memory);
    Manifest manifest(opts.out_dir, cfg, "simulate", outputs);
    const RunResult result = run_experiment(cfg);
    write_metrics_csv(metrics, result.history);
    if (opts.dump_memory) write_memory_dump(memory, result.state.memory);
    manifest.finish();
    out << summary_line(result) << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_gradcheck(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    GradcheckOptions g;
    g.configurations = opts.configurations;
    g.seed = opts.seed.value_or(0);
    g.flip_reg_sign = opts.flip_reg_sign;
    const GradcheckReport report = run_gradcheck(g);
    fs::create_directories(opts.out_dir);
    {
      auto f = open_output(opts.out_dir / "gradcheck.csv");
      write_gradcheck_csv(f, report);
    }
    write_gradcheck_csv(out, report);
    for (const auto& l : report.losses) {
      if (!l.passed) {
        err << "gradient check failed: loss=" << l.loss
            << " max_rel_error=" << format_double(l.max_rel_error)
            << " configuration=" << l.worst_configuration << " seed=" << g.seed << " n=" << l.worst_n
            << " c=" << l.worst_c << " tau=" << format_double(l.worst_tau) << '\n';
      }
    }
    out << "gradcheck " << (report.passed ? "passed" : "FAILED") << " in "
        << format_double(std::round(report.seconds * 1000.0) / 1000.0) << " s\n";
    return static_cast<int>(report.passed ? kExitOk : kExitAcceptanceFailure);
  });
}

AmbiguousSampleDemo ambiguous_sample_demo(double tau, double lambda_reg) {
  // Three orthonormal prototypes in four dimensions; the fourth axis keeps rows off the span.
  const ClassPrototypes protos(Matrix::from_rows(
      {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}), {"a", "b", "c"});
  auto row = [](double a, double b, double c) {
    const double r = std::sqrt(std::max(0.0, 1.0 - a * a - b * b - c * c));
    return std::vector<double>{a, b, c, r};
  };
  // Margin between the two leading classes: tau * log(0.55 / 0.45).
  const double gap = tau * std::log(0.55 / 0.45);
  const Matrix z = Matrix::from_rows({
      row(0.60, 0.10, 0.05),
      row(0.55, 0.05, 0.10),
      row(0.62, 0.12, 0.00),
      row(0.58, 0.00, 0.08),
      row(0.30 + gap, 0.30, 0.00),  // ambiguous sample, truly of class b
      row(0.05, 0.60, 0.10),
  });
  const std::size_t sample = 4;
  const EmbeddingMatrix emb{z};
  const ProbMatrix q = class_probabilities(emb, protos, tau);
  const PseudoLabelSummary ps = assign_pseudo_captions(q, protos);

  AmbiguousSampleDemo demo;
  demo.true_class = 1;
  demo.q.assign(q.q.row(sample).begin(), q.q.row(sample).end());
  std::vector<std::size_t> order{0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return demo.q[a] > demo.q[b]; });
  demo.predicted_class = order[0];
  demo.runner_up_class = order[1];
  demo.pseudo_counts = ps.counts;

  auto decompose = [&](const std::string& name, const Matrix& grad) {
    DirectionDecomposition d{name, {}};
    for (std::size_t k = 0; k < protos.num_classes(); ++k) {
      double v = 0.0;
      for (std::size_t e = 0; e < protos.dim(); ++e) v -= grad(sample, e) * protos.row(k)[e];
      d.inner_products.push_back(v);
    }
    demo.directions.push_back(std::move(d));
  };
  decompose("tent", grad_tent_wrt_z(q, protos, tau));
  decompose("cliptta",
            grad_cliptta_wrt_z(BatchView{emb, ps, q}, nullptr, protos, tau, lambda_reg).current);
  return demo;
}

int cmd_collapse_demo(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = resolve_config(opts);
    fs::create_directories(opts.out_dir);
    const fs::path comparison = opts.out_dir / "collapse_comparison.csv";
    const fs::path directions = opts.out_dir / "gradient_directions.csv";
    const fs::path tent_metrics = opts.out_dir / "metrics_tent.csv";
    const fs::path cliptta_metrics = opts.out_dir / "metrics_cliptta.csv";
    Manifest manifest(opts.out_dir, cfg, "collapse-demo",
                      {comparison, directions, tent_metrics, cliptta_metrics});

    ExperimentConfig tent = cfg;
    tent.engine.method = Method::kTent;
    ExperimentConfig clip = cfg;
    clip.engine.method = Method::kCliptta;
    const SyntheticWorld world = make_world(cfg.stream);
    const RunResult rt = make_engine(tent.engine, world, cfg.eps_norm).run_stream(world.stream, world.eval);
    const RunResult rc = make_engine(clip.engine, world, cfg.eps_norm).run_stream(world.stream, world.eval);
    write_metrics_csv(tent_metrics, rt.history);
    write_metrics_csv(cliptta_metrics, rc.history);

    {
      auto f = open_output(comparison);
      f << "batch,tent_accuracy,tent_prediction_entropy,tent_unique_predicted_classes,"
           "tent_deterioration_ratio,cliptta_accuracy,cliptta_prediction_entropy,"
           "cliptta_unique_predicted_classes,cliptta_deterioration_ratio\n";
      for (std::size_t b = 0; b < rt.history.size(); ++b) {
        const auto& a = rt.history[b];
        const auto& c = rc.history[b];
        f << b << ',' << format_double(a.accuracy) << ',' << format_double(a.mean_prediction_entropy)
          << ',' << a.unique_predicted_classes << ',' << format_optional(a.deterioration_ratio) << ','
          << format_double(c.accuracy) << ',' << format_double(c.mean_prediction_entropy) << ','
          << c.unique_predicted_classes << ',' << format_optional(c.deterioration_ratio) << '\n';
      }
    }

    const AmbiguousSampleDemo demo = ambiguous_sample_demo(0.1, cfg.engine.lambda_reg);
    {
      auto f = open_output(directions);
      f << "method,predicted_class,runner_up_class,true_class";
      for (std::size_t k = 0; k < demo.q.size(); ++k) f << ",descent_dot_t" << k;
      f << '\n';
      for (const auto& d : demo.directions) {
        f << d.method << ',' << demo.predicted_class << ',' << demo.runner_up_class << ','
          << demo.true_class;
        for (double v : d.inner_products) f << ',' << format_double(v);
        f << '\n';
      }
    }
    manifest.finish();

    const double t0 = rt.history.front().mean_prediction_entropy;
    const double c0 = rc.history.front().mean_prediction_entropy;
    out << "tent_entropy_ratio=" << format_double(rt.history.back().mean_prediction_entropy / t0)
        << " cliptta_entropy_ratio="
        << format_double(rc.history.back().mean_prediction_entropy / c0)
        << " tent_final_accuracy=" << format_double(rt.final_eval.accuracy)
        << " cliptta_final_accuracy=" << format_double(rc.final_eval.accuracy) << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_openset(const CommandOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg = resolve_config(opts);
    if (!cfg.engine.open_set) throw ConfigError("open_set: must be true for the openset command");
    fs::create_directories(opts.out_dir);
    const fs::path comparison = opts.out_dir / "openset_comparison.csv";
    const fs::path with_path = opts.out_dir / "metrics_oce.csv";
    const fs::path without_path = opts.out_dir / "metrics_no_oce.csv";
    Manifest manifest(opts.out_dir, cfg, "openset", {comparison, with_path, without_path});

    ExperimentConfig with_oce = cfg;
    if (with_oce.engine.lambda_oce == 0.0) with_oce.engine.lambda_oce = 1.0;
    ExperimentConfig without = cfg;
    without.engine.lambda_oce = 0.0;
    const SyntheticWorld world = make_world(cfg.stream);
    const RunResult a = make_engine(with_oce.engine, world, cfg.eps_norm).run_stream(world.stream, world.eval);
    const RunResult b = make_engine(without.engine, world, cfg.eps_norm).run_stream(world.stream, world.eval);
    write_metrics_csv(with_path, a.history);
    write_metrics_csv(without_path, b.history);

    auto f = open_output(comparison);
    f << "batch,oce_accuracy,oce_auroc,oce_fpr95,oce_gap,oce_alpha,no_oce_accuracy,no_oce_auroc,"
         "no_oce_fpr95,no_oce_gap,gap_difference\n";
    auto line = [&](const std::string& label, const MetricRecord& x, const MetricRecord& y) {
      f << label << ',' << format_double(x.accuracy) << ',' << format_optional(x.auroc) << ','
        << format_optional(x.fpr95) << ',' << format_optional(x.mu_id_minus_mu_ood) << ','
        << format_optional(x.alpha) << ',' << format_double(y.accuracy) << ','
        << format_optional(y.auroc) << ',' << format_optional(y.fpr95) << ','
        << format_optional(y.mu_id_minus_mu_ood) << ',';
      if (x.mu_id_minus_mu_ood && y.mu_id_minus_mu_ood)
        f << format_double(*x.mu_id_minus_mu_ood - *y.mu_id_minus_mu_ood);
      f << '\n';
    };
    for (std::size_t k = 0; k < a.history.size(); ++k)
      line(std::to_string(k), a.history[k], b.history[k]);
    line("final", a.final_eval, b.final_eval);
    f.close();
    manifest.finish();

    out << "oce_auroc=" << format_optional(a.final_eval.auroc)
        << " no_oce_auroc=" << format_optional(b.final_eval.auroc)
        << " oce_gap=" << format_optional(a.final_eval.mu_id_minus_mu_ood)
        << " no_oce_gap=" << format_optional(b.final_eval.mu_id_minus_mu_ood) << '\n';
    return static_cast<int>(kExitOk);
  });
}

}  // namespace cliptta
