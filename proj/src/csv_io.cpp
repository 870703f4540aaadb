#include "cliptta/csv_io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace cliptta {

namespace {

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("csv: malformed number '" + s + "'");
  }
  return v;
}

std::size_t parse_index(const std::string& s) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw std::runtime_error("csv: malformed integer '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::string format_optional(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "batch",          "accuracy",      "prediction_entropy", "mean_sample_entropy",
      "unique_predicted_classes",        "improvement_ratio",  "deterioration_ratio",
      "auroc",          "fpr95",         "mu_id_minus_mu_ood", "alpha",
      "l_scont",        "l_scont_mem",   "l_reg",              "l_total",
      "l_tent",         "l_cont_hard",   "l_oce"};
  return cols;
}

std::string metrics_header() {
  std::string out;
  for (const auto& c : metrics_columns()) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out;
}

std::string metrics_row(const MetricRecord& r) {
  const std::vector<std::string> cells = {
      std::to_string(r.batch_index),
      format_double(r.accuracy),
      format_double(r.mean_prediction_entropy),
      format_double(r.mean_sample_entropy),
      std::to_string(r.unique_predicted_classes),
      format_optional(r.improvement_ratio),
      format_optional(r.deterioration_ratio),
      format_optional(r.auroc),
      format_optional(r.fpr95),
      format_optional(r.mu_id_minus_mu_ood),
      format_optional(r.alpha),
      format_double(r.losses.l_scont),
      format_optional(r.losses.l_scont_mem),
      format_double(r.losses.l_reg),
      format_double(r.losses.l_total),
      format_optional(r.losses.l_tent),
      format_optional(r.losses.l_cont_hard),
      format_optional(r.losses.l_oce)};
  std::string out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (k) out += ',';
    out += cells[k];
  }
  return out;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records) {
  out << metrics_header() << '\n';
  for (const auto& r : records) out << metrics_row(r) << '\n';
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_metrics_csv(out, records);
}

void write_prototypes_csv(std::ostream& out, const ClassPrototypes& protos) {
  out << "class";
  for (std::size_t d = 0; d < protos.dim(); ++d) out << ",dim" << d;
  out << '\n';
  for (std::size_t c = 0; c < protos.num_classes(); ++c) {
    out << protos.names()[c];
    for (double v : protos.row(c)) out << ',' << format_double(v);
    out << '\n';
  }
}

ClassPrototypes read_prototypes_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("prototypes csv: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 2 || header[0] != "class") {
    throw std::runtime_error("prototypes csv: header must start with 'class,dim0'");
  }
  const std::size_t dim = header.size() - 1;
  std::vector<std::string> names;
  std::vector<double> data;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dim + 1) throw std::runtime_error("prototypes csv: ragged row");
    names.push_back(cells[0]);
    for (std::size_t d = 0; d < dim; ++d) data.push_back(parse_double(cells[d + 1]));
  }
  const std::size_t rows = names.size();
  return ClassPrototypes(Matrix(rows, dim, std::move(data)), std::move(names));
}

void write_stream_csv(std::ostream& out, const std::vector<LabeledBatch>& stream) {
  const std::size_t d_in = stream.empty() ? 0 : stream.front().x_raw.cols();
  out << "batch,row,label_or_unknown,ood_flag";
  for (std::size_t f = 0; f < d_in; ++f) out << ",x" << f;
  out << '\n';
  for (std::size_t b = 0; b < stream.size(); ++b) {
    const auto& batch = stream[b];
    for (std::size_t i = 0; i < batch.size(); ++i) {
      out << b << ',' << i << ',';
      if (batch.true_labels[i] == kUnknownLabel) out << "unknown";
      else out << batch.true_labels[i];
      out << ',' << (batch.ood_mask[i] ? 1 : 0);
      for (double v : batch.x_raw.row(i)) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

std::vector<LabeledBatch> read_stream_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("stream csv: missing header");
  const auto header = split_csv_line(line);
  if (header.size() < 5 || header[0] != "batch") throw std::runtime_error("stream csv: bad header");
  const std::size_t d_in = header.size() - 4;

  struct Pending {
    std::vector<double> data;
    std::vector<std::size_t> labels;
    std::vector<bool> ood;
  };
  std::vector<Pending> pending;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != d_in + 4) throw std::runtime_error("stream csv: ragged row");
    const std::size_t b = parse_index(cells[0]);
    if (b >= pending.size()) pending.resize(b + 1);
    auto& p = pending[b];
    if (parse_index(cells[1]) != p.labels.size()) throw std::runtime_error("stream csv: rows out of order");
    p.labels.push_back(cells[2] == "unknown" ? kUnknownLabel : parse_index(cells[2]));
    p.ood.push_back(cells[3] == "1");
    for (std::size_t f = 0; f < d_in; ++f) p.data.push_back(parse_double(cells[f + 4]));
  }
  std::vector<LabeledBatch> stream;
  for (auto& p : pending) {
    const std::size_t n = p.labels.size();
    stream.push_back({Matrix(n, d_in, std::move(p.data)), std::move(p.labels), std::move(p.ood)});
  }
  return stream;
}

void write_memory_csv(std::ostream& out, const MemoryState& memory) {
  std::size_t d_in = 0;
  for (std::size_t c = 0; c < memory.num_classes(); ++c)
    if (!memory.bucket(c).empty()) d_in = memory.bucket(c).front().x_raw.size();
  out << "class,rank,confidence,age";
  for (std::size_t f = 0; f < d_in; ++f) out << ",x" << f;
  out << '\n';
  for (std::size_t c = 0; c < memory.num_classes(); ++c) {
    const auto& bucket = memory.bucket(c);
    for (std::size_t r = 0; r < bucket.size(); ++r) {
      out << c << ',' << r << ',' << format_double(bucket[r].confidence) << ',' << bucket[r].age;
      for (double v : bucket[r].x_raw) out << ',' << format_double(v);
      out << '\n';
    }
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace cliptta
