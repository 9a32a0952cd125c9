#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "isoprune/importance.hpp"
#include "isoprune/isomorph.hpp"
#include "isoprune/pruner.hpp"

namespace isoprune {

inline constexpr const char* kToolVersion = "0.1.0";

/// Shortest round-trip decimal form, '.' separator, locale independent.
std::string format_double(double x);

struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = kToolVersion;
  std::string input_bundle_sha256;
};

/// SHA-256 over the bundle files present in `dir`, in a fixed order.
std::string bundle_content_hash(const std::filesystem::path& dir);
std::string manifest_to_json_text(const RunManifest& manifest);

struct ReportInputs {
  const ModelBundle* bundle = nullptr;
  const std::vector<SubStructure>* subs = nullptr;
  const std::vector<IsoGroup>* groups = nullptr;
  const std::vector<ImportanceVector>* scores = nullptr;
  const PruningPlan* plan = nullptr;  // optional
  Criterion criterion;
  std::size_t bins = 20;
  double ratio = 0.5;
};

// Schemas: report.json "isoprune.report/1"; CSVs carry a header row.
std::string report_json_text(const ReportInputs& in);
std::string histogram_csv(const HistogramTable& table);
std::string groupstats_csv(const ReportInputs& in, const HistogramTable& table);

/// Writes report.json, histogram.csv and groupstats.csv into `dir`.
void emit_report(const ReportInputs& in, const std::filesystem::path& dir);

}  // namespace isoprune
