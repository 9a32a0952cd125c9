#include "isoprune/dep_graph.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <numeric>
#include <set>
#include <tuple>

namespace isoprune {

const char* to_string(AxisRole role) { return role == AxisRole::out ? "out" : "in"; }

const char* to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::single: return "single";
    case PatternKind::block: return "block";
    case PatternKind::strided: return "strided";
  }
  return "?";
}

const char* to_string(FamilyTag tag) {
  switch (tag) {
    case FamilyTag::width: return "width";
    case FamilyTag::head: return "head";
    case FamilyTag::head_dim: return "head_dim";
    case FamilyTag::embedding: return "embedding";
    case FamilyTag::other: return "other";
  }
  return "?";
}

std::optional<FamilyTag> family_tag_from_string(const std::string& s) {
  for (FamilyTag t : {FamilyTag::width, FamilyTag::head, FamilyTag::head_dim, FamilyTag::embedding, FamilyTag::other}) {
    if (s == to_string(t)) return t;
  }
  return std::nullopt;
}

std::vector<std::int64_t> UnitPattern::resolve(std::int64_t unit) const {
  std::vector<std::int64_t> raw;
  switch (kind) {
    case PatternKind::single:
      raw.push_back(unit);
      break;
    case PatternKind::block:
      for (std::int64_t r = 0; r < count; ++r) {
        for (std::int64_t i = 0; i < block_size; ++i) raw.push_back(r * stride + unit * block_size + i);
      }
      break;
    case PatternKind::strided:
      for (std::int64_t i = 0; i < count; ++i) raw.push_back(unit + i * stride);
      break;
  }
  std::sort(raw.begin(), raw.end());
  return raw;
}

std::int64_t UnitPattern::raw_per_unit() const {
  switch (kind) {
    case PatternKind::single: return 1;
    case PatternKind::block: return block_size * count;
    case PatternKind::strided: return count;
  }
  return 1;
}

std::string describe(const PruningVertex& v) {
  std::string s = v.tensor + "[" + to_string(v.axis_role) + "," + to_string(v.pattern.kind);
  if (v.pattern.kind != PatternKind::single) {
    s += "(" + std::to_string(v.pattern.block_size) + "," + std::to_string(v.pattern.stride) + "," +
         std::to_string(v.pattern.count) + ")";
  }
  return s + ",k=" + std::to_string(v.unit_index) + "]";
}

std::size_t physical_axis(const ModelGraph& graph, const PruningVertex& v) {
  const NodeSpec& node = graph.at(v.owner_node);
  if (v.axis_role == AxisRole::out) return 0;
  if (node.kind == NodeKind::conv2d && node.params.groups > 1) return 0;
  if (v.role == "weight" || v.role == "w_qkv" || v.role == "w_proj") return 1;
  return 0;
}

std::int64_t parameter_count(const ModelGraph& graph, const SubStructure& sub) {
  std::set<std::tuple<std::string, std::size_t, std::vector<std::int64_t>>> seen;
  std::int64_t total = 0;
  for (const PruningVertex& v : sub.vertices) {
    const std::size_t axis = physical_axis(graph, v);
    auto raw = v.pattern.resolve(v.unit_index);
    const std::int64_t n = static_cast<std::int64_t>(raw.size());
    if (!seen.emplace(v.tensor, axis, std::move(raw)).second) continue;
    const Shape shape = expected_tensor_shapes(graph.at(v.owner_node)).at(v.role);
    total += n * (shape_numel(shape) / shape[axis]);
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t root(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void join(std::size_t a, std::size_t b) {
    a = root(a);
    b = root(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

bool aliases_input(NodeKind kind) {
  switch (kind) {
    case NodeKind::act:
    case NodeKind::layernorm:
    case NodeKind::batchnorm2d:
    case NodeKind::global_avg_pool:
    case NodeKind::output:
    case NodeKind::add:
      return true;
    default:
      return false;
  }
}

std::string vertex_key(const PruningVertex& v) { return describe(v) + "@" + v.role; }

}  // namespace

DependencyGraph::DependencyGraph(const ModelGraph& graph) : graph_(&graph) {
  const std::vector<std::size_t> order = canonical_order(graph);
  const std::vector<Shape> shapes = infer_shapes(graph);
  const std::size_t n_nodes = graph.nodes.size();
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n_nodes; ++i) index.emplace(graph.nodes[i].id, i);
  topo_rank_.assign(n_nodes, 0);
  for (std::size_t r = 0; r < order.size(); ++r) topo_rank_[order[r]] = r;

  // Port aliasing.
  UnionFind uf(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const NodeSpec& n = graph.nodes[i];
    if (!aliases_input(n.kind)) continue;
    for (const std::string& in : n.inputs) uf.join(i, index.at(in));
  }
  std::vector<std::size_t> port_class(n_nodes);
  std::map<std::size_t, std::size_t> root_to_class;
  for (std::size_t i : order) {
    const std::size_t r = uf.root(i);
    auto [it, inserted] = root_to_class.emplace(r, root_to_class.size());
    port_class[i] = it->second;
    if (inserted) {
      class_width_.push_back(shapes[i][channel_axis(shapes[i])]);
      class_protected_.push_back(false);
      class_has_add_.push_back(false);
    }
  }
  const std::size_t n_port_classes = class_width_.size();
  for (std::size_t i = 0; i < n_nodes; ++i) {
    const NodeKind k = graph.nodes[i].kind;
    if (k == NodeKind::input || k == NodeKind::output) class_protected_[port_class[i]] = true;
    if (k == NodeKind::add) class_has_add_[port_class[i]] = true;
  }
  auto internal_class = [&](std::int64_t width) {
    class_width_.push_back(width);
    class_protected_.push_back(false);
    class_has_add_.push_back(false);
    return class_width_.size() - 1;
  };

  // Vertices, in canonical order: node topo rank, role, axis, pattern, unit.
  for (std::size_t i : order) {
    const NodeSpec& n = graph.nodes[i];
    const NodeParams& p = n.params;
    const std::size_t out_cls = port_class[i];
    const std::size_t in_cls = n.inputs.empty() ? 0 : port_class[index.at(n.inputs[0])];
    const UnitPattern single{};
    switch (n.kind) {
      case NodeKind::linear:
        add_vertex(n, "weight", AxisRole::out, p.out_features, single, {{out_cls, true}});
        add_vertex(n, "weight", AxisRole::in, p.in_features, single, {{in_cls, true}});
        if (p.has_bias) add_vertex(n, "bias", AxisRole::out, p.out_features, single, {{out_cls, true}});
        break;
      case NodeKind::conv2d:
        if (p.groups > 1) {
          const std::size_t dw = internal_class(p.out_channels);
          add_vertex(n, "weight", AxisRole::out, p.out_channels, single, {{out_cls, true}, {dw, false}});
          add_vertex(n, "weight", AxisRole::in, p.in_channels, single, {{in_cls, true}, {dw, false}});
        } else {
          add_vertex(n, "weight", AxisRole::out, p.out_channels, single, {{out_cls, true}});
          add_vertex(n, "weight", AxisRole::in, p.in_channels, single, {{in_cls, true}});
        }
        if (p.has_bias) add_vertex(n, "bias", AxisRole::out, p.out_channels, single, {{out_cls, true}});
        break;
      case NodeKind::layernorm:
        add_vertex(n, "gamma", AxisRole::out, p.dim, single, {{out_cls, true}});
        add_vertex(n, "beta", AxisRole::out, p.dim, single, {{out_cls, true}});
        break;
      case NodeKind::batchnorm2d:
        for (const char* role : {"gamma", "beta", "running_mean", "running_var"}) {
          add_vertex(n, role, AxisRole::out, p.channels, single, {{out_cls, true}});
        }
        break;
      case NodeKind::attention: {
        const std::int64_t H = p.num_heads;
        const std::int64_t D = p.head_dim;
        const std::size_t heads = internal_class(H);
        const std::size_t dims = internal_class(D);
        const UnitPattern qkv_head{PatternKind::block, D, H * D, 3};
        const UnitPattern qkv_dim{PatternKind::strided, 1, D, 3 * H};
        const UnitPattern proj_head{PatternKind::block, D, H * D, 1};
        const UnitPattern proj_dim{PatternKind::strided, 1, D, H};
        add_vertex(n, "w_qkv", AxisRole::out, H, qkv_head, {{heads, false}});
        add_vertex(n, "w_qkv", AxisRole::out, D, qkv_dim, {{dims, false}});
        add_vertex(n, "w_qkv", AxisRole::in, p.embed_dim, single, {{in_cls, true}});
        if (p.has_bias) {
          add_vertex(n, "b_qkv", AxisRole::out, H, qkv_head, {{heads, false}});
          add_vertex(n, "b_qkv", AxisRole::out, D, qkv_dim, {{dims, false}});
        }
        add_vertex(n, "w_proj", AxisRole::out, p.embed_dim, single, {{out_cls, true}});
        add_vertex(n, "w_proj", AxisRole::in, H, proj_head, {{heads, false}});
        add_vertex(n, "w_proj", AxisRole::in, D, proj_dim, {{dims, false}});
        if (p.has_bias) add_vertex(n, "b_proj", AxisRole::out, p.embed_dim, single, {{out_cls, true}});
        break;
      }
      default:
        break;
    }
  }

  // Granularity check on port classes: every attached unit must be one
  // channel of that port.
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    for (const Slot& s : vertex_slots_[v]) {
      if (s.cls >= n_port_classes) continue;
      if (vertices_[v].pattern.kind != PatternKind::single) {
        throw Error(ErrorKind::design, "vertex " + describe(vertices_[v]) +
                                           " couples a grouped unit pattern to a channel port");
      }
    }
  }

  protected_.assign(vertices_.size(), false);
  for (std::size_t v = 0; v < vertices_.size(); ++v) {
    for (const Slot& s : vertex_slots_[v]) protected_[v] = protected_[v] || class_protected_[s.cls];
  }
}

void DependencyGraph::add_vertex(const NodeSpec& node, const std::string& role, AxisRole axis, std::int64_t units,
                                 UnitPattern pattern,
                                 const std::vector<std::pair<std::size_t, bool>>& slot_classes) {
  for (auto [cls, is_port] : slot_classes) {
    if (is_port && class_width_[cls] != units) {
      throw Error(ErrorKind::design, "node '" + node.id + "' " + role + " " + to_string(axis) + " has " +
                                         std::to_string(units) + " units but its port carries " +
                                         std::to_string(class_width_[cls]) + " channels");
    }
  }
  for (std::int64_t k = 0; k < units; ++k) {
    const std::size_t id = vertices_.size();
    vertices_.push_back({node.tensors.at(role), role, axis, k, pattern, node.id});
    vertex_index_.emplace(vertex_key(vertices_.back()), id);
    std::vector<Slot> slots;
    std::vector<std::size_t> slot_ids;
    for (auto [cls, _] : slot_classes) {
      const Slot s{cls, k};
      slots.push_back(s);
      auto [it, inserted] = slot_index_.emplace(s, slot_members_.size());
      if (inserted) slot_members_.emplace_back();
      const std::size_t sid = it->second;
      slot_members_[sid].push_back(id);
      slot_ids.push_back(sid);
    }
    vertex_slots_.push_back(std::move(slots));
    vertex_slot_ids_.push_back(std::move(slot_ids));
  }
}

std::optional<std::size_t> DependencyGraph::find(const PruningVertex& v) const {
  auto it = vertex_index_.find(vertex_key(v));
  if (it == vertex_index_.end() || !(vertices_[it->second] == v)) return std::nullopt;
  return it->second;
}

std::vector<std::size_t> DependencyGraph::neighbors(std::size_t id) const {
  std::vector<std::size_t> out;
  for (std::size_t sid : vertex_slot_ids_.at(id)) {
    for (std::size_t m : slot_members_[sid]) {
      if (m != id) out.push_back(m);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t DependencyGraph::topo_index(const std::string& node) const {
  for (std::size_t i = 0; i < graph_->nodes.size(); ++i) {
    if (graph_->nodes[i].id == node) return topo_rank_[i];
  }
  throw Error(ErrorKind::usage, "unknown node '" + node + "'");
}

SubStructure DependencyGraph::build(std::vector<std::size_t> members) const {
  std::sort(members.begin(), members.end());
  std::unordered_map<std::size_t, std::size_t> local;
  for (std::size_t i = 0; i < members.size(); ++i) local.emplace(members[i], i);

  SubStructure sub;
  for (std::size_t m : members) sub.vertices.push_back(vertices_[m]);

  // Spanning tree by BFS from the canonical root, neighbours in canonical order.
  std::vector<bool> seen(members.size(), false);
  std::deque<std::size_t> queue{members.front()};
  seen[0] = true;
  while (!queue.empty()) {
    const std::size_t u = queue.front();
    queue.pop_front();
    for (std::size_t w : neighbors(u)) {
      const std::size_t lw = local.at(w);
      if (seen[lw]) continue;
      seen[lw] = true;
      const std::size_t lu = local.at(u);
      sub.edges.emplace_back(std::min(lu, lw), std::max(lu, lw));
      queue.push_back(w);
    }
  }
  std::sort(sub.edges.begin(), sub.edges.end());

  bool head = false, head_dim = false, residual = false, produces = false;
  for (std::size_t m : members) {
    const PruningVertex& v = vertices_[m];
    head = head || v.pattern.kind == PatternKind::block;
    head_dim = head_dim || v.pattern.kind == PatternKind::strided;
    for (const Slot& s : vertex_slots_[m]) residual = residual || class_has_add_[s.cls];
    produces = produces || (v.axis_role == AxisRole::out &&
                            (v.role == "weight" || v.role == "w_proj" || v.role == "w_qkv"));
  }
  sub.family = head       ? FamilyTag::head
               : head_dim ? FamilyTag::head_dim
               : residual ? FamilyTag::embedding
               : produces ? FamilyTag::width
                          : FamilyTag::other;
  return sub;
}

SubStructurePartition DependencyGraph::identify(std::span<const std::size_t> seed_order) const {
  std::vector<std::size_t> seeds;
  if (seed_order.empty()) {
    seeds.resize(vertices_.size());
    std::iota(seeds.begin(), seeds.end(), 0);
  } else {
    seeds.assign(seed_order.begin(), seed_order.end());
  }
  std::vector<bool> assigned(vertices_.size(), false);
  std::vector<std::pair<std::size_t, SubStructure>> found;
  std::vector<std::size_t> protected_ids;
  for (std::size_t seed : seeds) {
    if (seed >= vertices_.size()) throw Error(ErrorKind::usage, "seed vertex out of range");
    if (assigned[seed]) continue;
    std::vector<std::size_t> members{seed};
    assigned[seed] = true;
    for (std::size_t head = 0; head < members.size(); ++head) {
      for (std::size_t w : neighbors(members[head])) {
        if (!assigned[w]) {
          assigned[w] = true;
          members.push_back(w);
        }
      }
    }
    const bool is_prot = std::any_of(members.begin(), members.end(), [&](std::size_t m) { return protected_[m]; });
    if (is_prot) {
      protected_ids.insert(protected_ids.end(), members.begin(), members.end());
      continue;
    }
    const std::size_t root = *std::min_element(members.begin(), members.end());
    found.emplace_back(root, build(std::move(members)));
  }
  std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::sort(protected_ids.begin(), protected_ids.end());

  SubStructurePartition out;
  for (auto& [_, s] : found) out.subs.push_back(std::move(s));
  for (std::size_t id : protected_ids) out.protected_vertices.push_back(vertices_[id]);
  return out;
}

std::vector<PruningVertex> enumerate_pruning_vertices(const ModelGraph& graph) {
  return DependencyGraph(graph).vertices();
}

std::vector<PruningVertex> dependencies_of(const ModelGraph& graph, const PruningVertex& v) {
  const DependencyGraph dg(graph);
  const auto id = dg.find(v);
  if (!id) throw Error(ErrorKind::usage, "vertex " + describe(v) + " does not belong to this graph");
  std::vector<PruningVertex> out;
  for (std::size_t n : dg.neighbors(*id)) out.push_back(dg.vertices()[n]);
  return out;
}

SubStructurePartition identify_substructures(const ModelGraph& graph) { return DependencyGraph(graph).identify(); }

}  // namespace isoprune
