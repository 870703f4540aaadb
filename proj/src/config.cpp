#include "cliptta/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cliptta/csv_io.hpp"

namespace cliptta {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

void apply(ExperimentConfig& cfg, const std::string& key, const std::string& v) {
  auto& e = cfg.engine;
  auto& s = cfg.stream;
  try {
    if (key == "method") e.method = parse_method(v);
    else if (key == "batch_size" || key == "samples_per_batch") e.batch_size = s.samples_per_batch = to_u64(key, v);
    else if (key == "inner_iterations") e.inner_iterations = to_u64(key, v);
    else if (key == "learning_rate") e.learning_rate = to_double(key, v);
    else if (key == "lambda_reg") e.lambda_reg = to_double(key, v);
    else if (key == "lambda_oce") e.lambda_oce = to_double(key, v);
    else if (key == "oce_enabled") e.oce_enabled = to_bool(key, v);
    else if (key == "open_set") e.open_set = to_bool(key, v);
    else if (key == "alpha_init") e.alpha_init = to_double(key, v);
    else if (key == "tau") e.tau = to_double(key, v);
    else if (key == "seed") cfg.set_seed(to_u64(key, v));
    else if (key == "scont_mode") e.scont_mode = parse_scont_mode(v);
    else if (key == "memory_enabled") e.memory_enabled = to_bool(key, v);
    else if (key == "episodic") e.episodic = to_bool(key, v);
    else if (key == "n_classes") s.n_classes = to_u64(key, v);
    else if (key == "d_in") s.d_in = to_u64(key, v);
    else if (key == "d_emb") s.d_emb = to_u64(key, v);
    else if (key == "n_batches") s.n_batches = to_u64(key, v);
    else if (key == "cluster_spread") s.cluster_spread = to_double(key, v);
    else if (key == "shift") s.shift.kind = parse_shift_kind(v);
    else if (key == "shift_magnitude") s.shift.magnitude = to_double(key, v);
    else if (key == "ood_fraction") s.ood_fraction = to_double(key, v);
    else if (key == "prototype_margin") s.prototype_margin = to_double(key, v);
    else if (key == "residual_scale") s.residual_scale = to_double(key, v);
    else if (key == "eval_samples") s.eval_samples = to_u64(key, v);
    else if (key == "eps_norm") cfg.eps_norm = to_double(key, v);
    else throw ConfigError(key + ": unknown configuration key");
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
}

}  // namespace

void ExperimentConfig::set_seed(std::uint64_t seed) {
  engine.seed = seed;
  stream.seed = seed;
}

void ExperimentConfig::validate() const {
  try {
    engine.validate();
    stream.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  if (engine.batch_size != stream.samples_per_batch) {
    throw ConfigError("batch_size: engine and stream batch sizes differ");
  }
  if (stream.ood_fraction > 0.0 && !engine.open_set) {
    throw ConfigError("ood_fraction: must be 0 unless open_set = true");
  }
  if (!(eps_norm > 0.0)) throw ConfigError("eps_norm: must be > 0");
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    }
    apply(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

std::map<std::string, std::string> config_entries(const ExperimentConfig& cfg) {
  const auto& e = cfg.engine;
  const auto& s = cfg.stream;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"method", to_string(e.method)},
      {"batch_size", std::to_string(e.batch_size)},
      {"inner_iterations", std::to_string(e.inner_iterations)},
      {"learning_rate", format_double(e.learning_rate)},
      {"lambda_reg", format_double(e.lambda_reg)},
      {"lambda_oce", format_double(e.lambda_oce)},
      {"oce_enabled", b(e.oce_enabled)},
      {"open_set", b(e.open_set)},
      {"alpha_init", format_double(e.alpha_init)},
      {"tau", format_double(e.tau)},
      {"seed", std::to_string(e.seed)},
      {"scont_mode", to_string(e.scont_mode)},
      {"memory_enabled", b(e.memory_enabled)},
      {"episodic", b(e.episodic)},
      {"n_classes", std::to_string(s.n_classes)},
      {"d_in", std::to_string(s.d_in)},
      {"d_emb", std::to_string(s.d_emb)},
      {"n_batches", std::to_string(s.n_batches)},
      {"cluster_spread", format_double(s.cluster_spread)},
      {"shift", to_string(s.shift.kind)},
      {"shift_magnitude", format_double(s.shift.magnitude)},
      {"ood_fraction", format_double(s.ood_fraction)},
      {"prototype_margin", format_double(s.prototype_margin)},
      {"residual_scale", format_double(s.residual_scale)},
      {"eval_samples", std::to_string(s.eval_samples)},
      {"eps_norm", format_double(cfg.eps_norm)},
  };
}

std::string render_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

std::string to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::kNone: return "none";
    case ShiftKind::kRotation: return "rotation";
    case ShiftKind::kAdditiveBias: return "additive_bias";
    case ShiftKind::kNoise: return "noise";
  }
  return "none";
}

ShiftKind parse_shift_kind(const std::string& s) {
  if (s == "none") return ShiftKind::kNone;
  if (s == "rotation") return ShiftKind::kRotation;
  if (s == "additive_bias") return ShiftKind::kAdditiveBias;
  if (s == "noise") return ShiftKind::kNoise;
  throw std::invalid_argument("shift: unknown value '" + s + "'");
}

}  // namespace cliptta
