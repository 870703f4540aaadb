#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cliptta/datagen.hpp"
#include "cliptta/memory.hpp"
#include "cliptta/metrics.hpp"
#include "cliptta/model.hpp"

namespace cliptta {

/// Shortest round-trip decimal form ('.' separator, locale independent).
std::string format_double(double v);
std::string format_optional(const std::optional<double>& v);

/// Column order of metrics.csv.
const std::vector<std::string>& metrics_columns();
std::string metrics_header();
std::string metrics_row(const MetricRecord& r);
void write_metrics_csv(std::ostream& out, const std::vector<MetricRecord>& records);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRecord>& records);

/// `class,dim0,...` header, one prototype per row.
void write_prototypes_csv(std::ostream& out, const ClassPrototypes& protos);
ClassPrototypes read_prototypes_csv(std::istream& in);

/// `batch,row,label_or_unknown,ood_flag,x0..` one sample per row.
void write_stream_csv(std::ostream& out, const std::vector<LabeledBatch>& stream);
std::vector<LabeledBatch> read_stream_csv(std::istream& in);

/// `class,rank,confidence,age,x0..` for every stored memory entry.
void write_memory_csv(std::ostream& out, const MemoryState& memory);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace cliptta
