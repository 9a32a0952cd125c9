#pragma once

// Pruning vertices, coupling rules, and discovery of minimal removable
// sub-structures.
//
// A vertex (tensor, axis role, unit k, pattern) names the slice removed when
// unit k is pruned. Vertices attach to channel "slots": one slot per channel
// of every activation port, where ports joined by act/norm/pool/add/output are
// aliased into a single class. Two vertices are coupled when they share a slot.
// Depthwise convs and attention blocks add layer-internal slots (dw channel k,
// head h, head-dim j). Slots on graph input/output ports are protected.

#include <cstdint>
#include <map>
#include <unordered_map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isoprune/model_ir.hpp"

namespace isoprune {

enum class AxisRole { out, in };
const char* to_string(AxisRole role);

enum class PatternKind { single, block, strided };
const char* to_string(PatternKind kind);

/// Maps a unit index to raw indices along a tensor axis.
///   single:  {k}
///   block:   for r < count: r*stride + k*block_size + [0, block_size)
///   strided: for i < count: k + i*stride
struct UnitPattern {
  PatternKind kind = PatternKind::single;
  std::int64_t block_size = 1;
  std::int64_t stride = 0;
  std::int64_t count = 1;

  std::vector<std::int64_t> resolve(std::int64_t unit) const;
  std::int64_t raw_per_unit() const;
  bool operator==(const UnitPattern&) const = default;
  auto operator<=>(const UnitPattern&) const = default;
};

struct PruningVertex {
  std::string tensor;
  std::string role;  // tensor role inside the owner node ("weight", "b_qkv", ...)
  AxisRole axis_role = AxisRole::out;
  std::int64_t unit_index = 0;
  UnitPattern pattern;
  std::string owner_node;

  bool operator==(const PruningVertex&) const = default;
};

std::string describe(const PruningVertex& v);

/// Physical tensor axis a vertex slices along. Depthwise conv in-units and
/// norm parameters resolve to axis 0.
std::size_t physical_axis(const ModelGraph& graph, const PruningVertex& v);

enum class FamilyTag { width, head, head_dim, embedding, other };
const char* to_string(FamilyTag tag);
std::optional<FamilyTag> family_tag_from_string(const std::string& s);

struct SubStructure {
  std::vector<PruningVertex> vertices;                  // canonical order; [0] is the root
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (earlier, later), sorted
  FamilyTag family = FamilyTag::other;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t edge_count() const { return edges.size(); }
};

struct SubStructurePartition {
  std::vector<SubStructure> subs;      // sorted by root vertex canonical rank
  std::vector<PruningVertex> protected_vertices;
};

/// Distinct parameter elements covered by a sub-structure.
std::int64_t parameter_count(const ModelGraph& graph, const SubStructure& sub);

/// Vertex enumeration and the coupling relation over one graph.
class DependencyGraph {
 public:
  explicit DependencyGraph(const ModelGraph& graph);

  const ModelGraph& graph() const { return *graph_; }
  const std::vector<PruningVertex>& vertices() const { return vertices_; }
  std::optional<std::size_t> find(const PruningVertex& v) const;

  /// Vertex ids coupled to `id`, ascending (= canonical order).
  std::vector<std::size_t> neighbors(std::size_t id) const;
  bool is_protected(std::size_t id) const { return protected_[id]; }
  std::size_t topo_index(const std::string& node) const;

  /// Connected components from seeds visited in `seed_order` (defaults to
  /// canonical order). The result is canonicalized, so any seed order gives
  /// the same partition.
  SubStructurePartition identify(std::span<const std::size_t> seed_order = {}) const;

 private:
  struct Slot {
    std::size_t cls;
    std::int64_t channel;
    auto operator<=>(const Slot&) const = default;
  };

  void add_vertex(const NodeSpec& node, const std::string& role, AxisRole axis, std::int64_t units,
                  UnitPattern pattern, const std::vector<std::pair<std::size_t, bool>>& slot_classes);
  SubStructure build(std::vector<std::size_t> members) const;

  const ModelGraph* graph_;
  std::vector<std::size_t> topo_rank_;       // node index -> position in canonical order
  std::vector<PruningVertex> vertices_;
  std::vector<std::vector<Slot>> vertex_slots_;
  std::vector<std::vector<std::size_t>> slot_members_;  // dense slot id -> vertices
  std::map<Slot, std::size_t> slot_index_;
  std::unordered_map<std::string, std::size_t> vertex_index_;
  std::vector<std::vector<std::size_t>> vertex_slot_ids_;
  std::vector<bool> protected_;
  std::vector<bool> class_protected_;
  std::vector<bool> class_has_add_;
  std::vector<std::int64_t> class_width_;
};

std::vector<PruningVertex> enumerate_pruning_vertices(const ModelGraph& graph);
std::vector<PruningVertex> dependencies_of(const ModelGraph& graph, const PruningVertex& v);
SubStructurePartition identify_substructures(const ModelGraph& graph);

}  // namespace isoprune
