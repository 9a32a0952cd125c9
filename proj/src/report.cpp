#include "isoprune/report.hpp"

#include <algorithm>
#include <charconv>
#include <system_error>

#include "json.hpp"

namespace isoprune {

using nlohmann::json;
namespace fs = std::filesystem;

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string bundle_content_hash(const fs::path& dir) {
  std::string material;
  for (const char* name : {"graph.json", "tensors.json", "tensors.bin", "grads.json", "grads.bin"}) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) continue;
    const std::vector<std::uint8_t> bytes = read_binary(p);
    material += std::string(name) + '\0' + std::to_string(bytes.size()) + '\0';
    material.append(bytes.begin(), bytes.end());
  }
  return sha256_hex(material);
}

std::string manifest_to_json_text(const RunManifest& m) {
  json config = json::object();
  for (const auto& [k, v] : m.config) config[k] = v;
  json j = {{"schema", "isoprune.manifest/1"},
            {"command", m.command},
            {"config", config},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"tool_version", m.tool_version},
            {"input_bundle_sha256", m.input_bundle_sha256}};
  return j.dump(2) + "\n";
}

namespace {

struct Summary {
  double min = 0.0, max = 0.0, mean = 0.0;
};

Summary summarize(const std::vector<double>& s) {
  Summary out;
  if (s.empty()) return out;
  out.min = *std::min_element(s.begin(), s.end());
  out.max = *std::max_element(s.begin(), s.end());
  CompensatedSum acc;
  for (double x : s) acc.add(x);
  out.mean = acc.value() / static_cast<double>(s.size());
  return out;
}

void require(const ReportInputs& in) {
  if (!in.bundle || !in.subs || !in.groups || !in.scores) throw Error(ErrorKind::usage, "report inputs are incomplete");
}

}  // namespace

std::string report_json_text(const ReportInputs& in) {
  require(in);
  const HistogramTable table = histogram(*in.groups, *in.scores, in.bins, in.ratio);
  json groups = json::array();
  for (std::size_t g = 0; g < in.groups->size(); ++g) {
    const IsoGroup& grp = (*in.groups)[g];
    const Summary s = summarize((*in.scores)[g].scores);
    json labels = json::object();
    for (const auto& [label, n] : grp.stats.label_counts) labels[label] = n;
    groups.push_back({{"id", g},
                      {"signature", grp.signature.hash()},
                      {"signature_text", grp.signature.text()},
                      {"family", to_string(grp.family)},
                      {"member_count", grp.stats.member_count},
                      {"vertices_per_member", grp.stats.vertices_per_member},
                      {"params_per_member", grp.stats.params_per_member},
                      {"label_counts", labels},
                      {"score_min", s.min},
                      {"score_max", s.max},
                      {"score_mean", s.mean},
                      {"group_threshold", table.groups[g].group_threshold},
                      {"histogram", {{"edges", table.groups[g].edges}, {"counts", table.groups[g].counts}}}});
  }
  json j = {{"schema", "isoprune.report/1"},
            {"criterion", to_string(in.criterion.kind)},
            {"ratio", in.ratio},
            {"bins", in.bins},
            {"substructure_count", in.subs->size()},
            {"global_threshold", table.global_threshold},
            {"groups", groups}};
  if (in.plan) {
    json removals = json::array();
    for (const Removal& r : in.plan->removals) {
      removals.push_back({{"group", r.group}, {"member", r.member}, {"substructure", r.sub}, {"score", r.score}});
    }
    j["removals"] = removals;
  }
  return j.dump(2) + "\n";
}

std::string histogram_csv(const HistogramTable& table) {
  std::string out = "group_id,bin_lo,bin_hi,count,group_threshold,global_threshold\n";
  for (const GroupHistogram& h : table.groups) {
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      out += std::to_string(h.group) + "," + format_double(h.edges[b]) + "," + format_double(h.edges[b + 1]) + "," +
             std::to_string(h.counts[b]) + "," + format_double(h.group_threshold) + "," +
             format_double(table.global_threshold) + "\n";
    }
  }
  return out;
}

std::string groupstats_csv(const ReportInputs& in, const HistogramTable& table) {
  require(in);
  std::string out =
      "group_id,signature,family,member_count,vertices_per_member,params_per_member,score_min,score_max,score_mean,"
      "group_threshold\n";
  for (std::size_t g = 0; g < in.groups->size(); ++g) {
    const IsoGroup& grp = (*in.groups)[g];
    const Summary s = summarize((*in.scores)[g].scores);
    out += std::to_string(g) + "," + grp.signature.hash() + "," + to_string(grp.family) + "," +
           std::to_string(grp.stats.member_count) + "," + std::to_string(grp.stats.vertices_per_member) + "," +
           std::to_string(grp.stats.params_per_member) + "," + format_double(s.min) + "," + format_double(s.max) +
           "," + format_double(s.mean) + "," + format_double(table.groups[g].group_threshold) + "\n";
  }
  return out;
}

void emit_report(const ReportInputs& in, const fs::path& dir) {
  require(in);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, "cannot create report directory '" + dir.string() + "': " + ec.message());
  const HistogramTable table = histogram(*in.groups, *in.scores, in.bins, in.ratio);
  write_file(dir / "report.json", report_json_text(in));
  write_file(dir / "histogram.csv", histogram_csv(table));
  write_file(dir / "groupstats.csv", groupstats_csv(in, table));
}

}  // namespace isoprune
