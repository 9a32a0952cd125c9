#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "isoprune/dep_graph.hpp"

namespace isoprune {

/// Vertex label: layer type, pruning dimension and unit pattern. The unit
/// index is deliberately not part of it.
struct VertexLabel {
  NodeKind op_kind = NodeKind::linear;
  AxisRole axis_role = AxisRole::out;
  UnitPattern pattern;

  bool operator==(const VertexLabel&) const = default;
  auto operator<=>(const VertexLabel&) const = default;
};

std::string to_string(const VertexLabel& label);

/// Edge count plus the label pair of every edge in canonical edge order.
struct IsoSignature {
  std::size_t edge_count = 0;
  std::vector<std::pair<VertexLabel, VertexLabel>> label_sequence;

  bool operator==(const IsoSignature&) const = default;
  auto operator<=>(const IsoSignature&) const = default;

  std::string text() const;
  /// First 16 hex digits of SHA-256 over text().
  std::string hash() const;
};

struct GroupStats {
  std::size_t member_count = 0;
  std::size_t vertices_per_member = 0;
  std::int64_t params_per_member = 0;
  std::map<std::string, std::size_t> label_counts;  // per member: label -> vertex count
};

struct IsoGroup {
  IsoSignature signature;
  std::vector<std::size_t> members;  // indices into the partition's subs, ascending
  FamilyTag family = FamilyTag::other;
  GroupStats stats;
};

VertexLabel vertex_label(const PruningVertex& v, const ModelGraph& graph);
IsoSignature signature_of(const SubStructure& sub, const ModelGraph& graph);

bool is_isomorphic(const SubStructure& a, const ModelGraph& graph_a, const SubStructure& b,
                   const ModelGraph& graph_b);
inline bool is_isomorphic(const SubStructure& a, const SubStructure& b, const ModelGraph& graph) {
  return is_isomorphic(a, graph, b, graph);
}

/// Groups sorted by signature; members keep partition order.
std::vector<IsoGroup> cluster_isomorphic(const std::vector<SubStructure>& subs, const ModelGraph& graph);

std::string sha256_hex(const std::string& bytes);

}  // namespace isoprune
