#include "isoprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "json_detail.hpp"

namespace isoprune {

namespace {

[[noreturn]] void plan_error(const std::string& msg) { throw Error(ErrorKind::plan, msg); }

std::size_t floor_count(double ratio, std::size_t n) {
  // The small slack keeps e.g. 0.29 * 100 from flooring to 28.
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
}

bool is_attention_unit(const ModelGraph& graph, const PruningVertex& v) {
  return v.pattern.kind != PatternKind::single && graph.at(v.owner_node).kind == NodeKind::attention;
}

// What removing a sub-structure takes away from each prunable axis.
using Decrements = std::map<std::string, std::int64_t>;

Decrements decrements_of(const ModelGraph& graph, const SubStructure& sub) {
  std::map<std::string, std::set<std::int64_t>> raw_by_axis;
  Decrements out;
  for (const PruningVertex& v : sub.vertices) {
    if (is_attention_unit(graph, v)) {
      out[v.owner_node + (v.pattern.kind == PatternKind::block ? "#heads" : "#dims")] = 1;
      continue;
    }
    auto& raw = raw_by_axis[v.tensor + "#" + std::to_string(physical_axis(graph, v))];
    for (std::int64_t r : v.pattern.resolve(v.unit_index)) raw.insert(r);
  }
  for (const auto& [key, raw] : raw_by_axis) out[key] = static_cast<std::int64_t>(raw.size());
  return out;
}

std::int64_t initial_extent(const ModelBundle& bundle, const std::string& key) {
  const auto hash = key.rfind('#');
  const std::string name = key.substr(0, hash);
  const std::string tail = key.substr(hash + 1);
  if (tail == "heads") return bundle.graph.at(name).params.num_heads;
  if (tail == "dims") return bundle.graph.at(name).params.head_dim;
  return bundle.weights.at(name).shape.at(std::stoul(tail));
}

class CollapseGuard {
 public:
  CollapseGuard(const ModelBundle* bundle, const std::vector<SubStructure>& subs) : bundle_(bundle) {
    if (!bundle_) return;
    for (const SubStructure& s : subs) dec_.push_back(decrements_of(bundle_->graph, s));
  }

  bool try_take(std::size_t sub) {
    if (!bundle_) return true;
    for (const auto& [key, n] : dec_[sub]) {
      if (extent(key) - n < 1) return false;
    }
    for (const auto& [key, n] : dec_[sub]) remaining_[key] -= n;
    return true;
  }

 private:
  std::int64_t extent(const std::string& key) {
    auto it = remaining_.find(key);
    if (it == remaining_.end()) it = remaining_.emplace(key, initial_extent(*bundle_, key)).first;
    return it->second;
  }

  const ModelBundle* bundle_;
  std::vector<Decrements> dec_;
  std::map<std::string, std::int64_t> remaining_;
};

struct Candidate {
  double score;
  std::size_t order;  // tie-break key
  std::size_t group;
  std::size_t member;
};

void take_lowest(std::vector<Candidate>& cands, std::size_t quota, CollapseGuard& guard,
                 const std::vector<IsoGroup>& groups, std::vector<Removal>& out) {
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    return a.order < b.order;
  });
  std::size_t taken = 0;
  for (const Candidate& c : cands) {
    if (taken == quota) break;
    const std::size_t sub = groups[c.group].members[c.member];
    if (!guard.try_take(sub)) continue;
    out.push_back({c.group, c.member, sub, c.score});
    ++taken;
  }
}

}  // namespace

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::isomorphic: return "isomorphic";
    case Strategy::global: return "global";
    case Strategy::local: return "local";
  }
  return "?";
}

std::optional<Strategy> strategy_from_string(const std::string& s) {
  for (Strategy k : {Strategy::isomorphic, Strategy::global, Strategy::local}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

void validate_config(const PruneConfig& config, const std::vector<IsoGroup>& groups) {
  auto check_ratio = [](double r, const std::string& what) {
    if (!(r >= 0.0 && r < 1.0)) throw Error(ErrorKind::usage, what + " ratio " + std::to_string(r) + " not in [0,1)");
  };
  check_ratio(config.default_ratio, "default");
  if (config.min_keep < 1) throw Error(ErrorKind::usage, "min_keep must be at least 1");
  for (const auto& [key, r] : config.per_group_ratios) {
    check_ratio(r, "group '" + key + "'");
    bool found = false;
    const auto tag = family_tag_from_string(key);
    for (const IsoGroup& g : groups) {
      if (g.signature.hash() == key || (tag && g.family == *tag)) found = true;
    }
    if (!found) throw Error(ErrorKind::usage, "group ratio key '" + key + "' matches no group");
  }
}

double ratio_for(const PruneConfig& config, const IsoGroup& group) {
  auto it = config.per_group_ratios.find(group.signature.hash());
  if (it != config.per_group_ratios.end()) return it->second;
  it = config.per_group_ratios.find(to_string(group.family));
  if (it != config.per_group_ratios.end()) return it->second;
  return config.default_ratio;
}

std::vector<Removal> select_removals(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                                     const std::vector<IsoGroup>& groups,
                                     const std::vector<ImportanceVector>& scores, const PruneConfig& config) {
  validate_config(config, groups);
  if (scores.size() != groups.size()) throw Error(ErrorKind::usage, "scores are not aligned with groups");
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (scores[g].scores.size() != groups[g].members.size()) {
      throw Error(ErrorKind::usage, "score vector " + std::to_string(g) + " is not aligned with its group");
    }
  }
  CollapseGuard guard(config.prevent_collapse ? &bundle : nullptr, subs);
  std::vector<Removal> out;

  switch (config.strategy) {
    case Strategy::isomorphic:
      for (std::size_t g = 0; g < groups.size(); ++g) {
        const std::size_t n = groups[g].members.size();
        const std::size_t quota = floor_count(ratio_for(config, groups[g]), n);
        if (quota > 0 && static_cast<std::int64_t>(n - quota) < config.min_keep) {
          throw Error(ErrorKind::usage, "ratio for group " + groups[g].signature.hash() + " would leave " +
                                            std::to_string(n - quota) + " members, below min_keep " +
                                            std::to_string(config.min_keep));
        }
        std::vector<Candidate> cands;
        for (std::size_t m = 0; m < n; ++m) cands.push_back({scores[g].scores[m], m, g, m});
        take_lowest(cands, quota, guard, groups, out);
      }
      break;
    case Strategy::global: {
      std::vector<Candidate> cands;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t m = 0; m < groups[g].members.size(); ++m) {
          cands.push_back({scores[g].scores[m], groups[g].members[m], g, m});
        }
      }
      const std::size_t quota = floor_count(config.default_ratio, cands.size());
      take_lowest(cands, quota, guard, groups, out);
      break;
    }
    case Strategy::local: {
      // A layer's own sub-structures: same root tensor, axis and unit pattern.
      std::map<std::tuple<std::string, std::string, int, int>, std::vector<Candidate>> buckets;
      std::map<std::tuple<std::string, std::string, int, int>, double> bucket_ratio;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t m = 0; m < groups[g].members.size(); ++m) {
          const PruningVertex& root = subs.at(groups[g].members[m]).vertices.front();
          const auto key = std::make_tuple(root.owner_node, root.role, static_cast<int>(root.axis_role),
                                           static_cast<int>(root.pattern.kind));
          buckets[key].push_back({scores[g].scores[m], groups[g].members[m], g, m});
          bucket_ratio.emplace(key, ratio_for(config, groups[g]));
        }
      }
      for (auto& [key, cands] : buckets) take_lowest(cands, floor_count(bucket_ratio[key], cands.size()), guard, groups, out);
      break;
    }
  }
  std::sort(out.begin(), out.end(), [](const Removal& a, const Removal& b) {
    return std::tie(a.group, a.member) < std::tie(b.group, b.member);
  });
  return out;
}

PruningPlan resolve_removals(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                             std::vector<Removal> removals) {
  const ModelGraph& graph = bundle.graph;
  PruningPlan plan;
  std::map<std::pair<std::string, std::size_t>, std::map<std::int64_t, std::size_t>> removed;
  std::map<std::string, std::set<std::int64_t>> heads;
  std::map<std::string, std::set<std::int64_t>> dims;

  for (const Removal& r : removals) {
    for (const PruningVertex& v : subs.at(r.sub).vertices) {
      if (is_attention_unit(graph, v)) {
        (v.pattern.kind == PatternKind::block ? heads : dims)[v.owner_node].insert(v.unit_index);
        continue;
      }
      auto& axis_removed = removed[{v.tensor, physical_axis(graph, v)}];
      for (std::int64_t raw : v.pattern.resolve(v.unit_index)) {
        auto [it, fresh] = axis_removed.emplace(raw, r.sub);
        if (!fresh && it->second != r.sub) {
          plan_error("index " + std::to_string(raw) + " of '" + v.tensor + "' is removed by two sub-structures");
        }
      }
    }
  }

  auto cut_for = [&](const std::string& tensor) -> AxisCut& {
    AxisCut& cut = plan.resolved[tensor];
    if (cut.original_shape.empty()) cut.original_shape = bundle.weights.at(tensor).shape;
    return cut;
  };
  auto intersect_keep = [&](const std::string& tensor, std::size_t axis, std::vector<std::int64_t> keep) {
    AxisCut& cut = cut_for(tensor);
    auto it = cut.keep.find(axis);
    if (it == cut.keep.end()) {
      cut.keep.emplace(axis, std::move(keep));
    } else {
      std::vector<std::int64_t> both;
      std::set_intersection(it->second.begin(), it->second.end(), keep.begin(), keep.end(), std::back_inserter(both));
      it->second = std::move(both);
    }
  };

  for (const auto& [key, raws] : removed) {
    const auto& [tensor, axis] = key;
    const std::int64_t len = bundle.weights.at(tensor).shape.at(axis);
    std::vector<std::int64_t> keep;
    for (std::int64_t i = 0; i < len; ++i) {
      if (!raws.count(i)) keep.push_back(i);
    }
    intersect_keep(tensor, axis, std::move(keep));
  }

  std::set<std::string> attention_nodes;
  for (const auto& [node, _] : heads) attention_nodes.insert(node);
  for (const auto& [node, _] : dims) attention_nodes.insert(node);
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> attention_kept;
  for (const std::string& id : attention_nodes) {
    const NodeSpec& node = graph.at(id);
    const std::int64_t H = node.params.num_heads;
    const std::int64_t D = node.params.head_dim;
    // Heads go first; dims are then dropped inside every surviving head.
    std::vector<std::int64_t> keep_h, keep_j;
    for (std::int64_t h = 0; h < H; ++h) {
      if (!heads[id].count(h)) keep_h.push_back(h);
    }
    for (std::int64_t j = 0; j < D; ++j) {
      if (!dims[id].count(j)) keep_j.push_back(j);
    }
    if (keep_h.empty()) plan.collapsed.push_back(id + " heads");
    if (keep_j.empty()) plan.collapsed.push_back(id + " head_dim");
    attention_kept[id] = {static_cast<std::int64_t>(keep_h.size()), static_cast<std::int64_t>(keep_j.size())};
    std::vector<std::int64_t> rows, cols;
    for (std::int64_t b = 0; b < 3; ++b) {
      for (std::int64_t h : keep_h) {
        for (std::int64_t j : keep_j) rows.push_back(b * H * D + h * D + j);
      }
    }
    for (std::int64_t h : keep_h) {
      for (std::int64_t j : keep_j) cols.push_back(h * D + j);
    }
    intersect_keep(*node.tensor("w_qkv"), 0, rows);
    if (const std::string* b = node.tensor("b_qkv")) intersect_keep(*b, 0, rows);
    intersect_keep(*node.tensor("w_proj"), 1, cols);
  }

  for (auto& [tensor, cut] : plan.resolved) {
    for (const auto& [axis, keep] : cut.keep) {
      if (keep.empty()) plan.collapsed.push_back(tensor + " axis " + std::to_string(axis));
    }
  }

  // Post-prune params follow from the new tensor shapes.
  auto new_shape = [&](const std::string& tensor) {
    Shape s = bundle.weights.at(tensor).shape;
    auto it = plan.resolved.find(tensor);
    if (it != plan.resolved.end()) {
      for (const auto& [axis, keep] : it->second.keep) s[axis] = static_cast<std::int64_t>(keep.size());
    }
    return s;
  };
  for (const NodeSpec& node : graph.nodes) {
    bool touched = attention_kept.count(node.id) > 0;
    for (const auto& [role, name] : node.tensors) touched = touched || plan.resolved.count(name);
    if (!touched) continue;
    NodeParams p = node.params;
    switch (node.kind) {
      case NodeKind::linear: {
        const Shape w = new_shape(*node.tensor("weight"));
        p.out_features = w[0];
        p.in_features = w[1];
        break;
      }
      case NodeKind::conv2d: {
        const Shape w = new_shape(*node.tensor("weight"));
        p.out_channels = w[0];
        if (node.params.groups > 1) {
          p.in_channels = p.groups = w[0];
        } else {
          p.in_channels = w[1];
        }
        break;
      }
      case NodeKind::layernorm:
        p.dim = new_shape(*node.tensor("gamma"))[0];
        break;
      case NodeKind::batchnorm2d:
        p.channels = new_shape(*node.tensor("gamma"))[0];
        break;
      case NodeKind::attention: {
        p.embed_dim = new_shape(*node.tensor("w_qkv"))[1];
        auto it = attention_kept.find(node.id);
        if (it != attention_kept.end()) {
          p.num_heads = it->second.first;
          p.head_dim = it->second.second;
        }
        break;
      }
      default:
        break;
    }
    plan.derived_params[node.id] = p;
  }
  plan.removals = std::move(removals);
  return plan;
}

PruningPlan plan_prune(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                       const std::vector<IsoGroup>& groups, const std::vector<ImportanceVector>& scores,
                       const PruneConfig& config) {
  return resolve_removals(bundle, subs, select_removals(bundle, subs, groups, scores, config));
}

// ---------------------------------------------------------------------------

ModelBundle apply_plan(const ModelBundle& bundle, const PruningPlan& plan) {
  if (!plan.applicable()) plan_error("plan would remove every unit of " + plan.collapsed.front());
  for (const auto& [tensor, cut] : plan.resolved) {
    const Tensor* t = bundle.weights.find(tensor);
    if (!t) plan_error("plan names tensor '" + tensor + "' which the bundle lacks");
    if (t->shape != cut.original_shape) {
      plan_error("tensor '" + tensor + "' is " + shape_str(t->shape) + " but the plan expects " +
                 shape_str(cut.original_shape));
    }
  }
  for (const auto& [id, _] : plan.derived_params) {
    if (!bundle.graph.find(id)) plan_error("plan names node '" + id + "' which the graph lacks");
  }

  auto slice_store = [&](const TensorStore& in) {
    TensorStore out;
    for (const Tensor& t : in.tensors()) {
      auto it = plan.resolved.find(t.name);
      if (it == plan.resolved.end()) {
        out.put(t);
        continue;
      }
      if (t.shape != it->second.original_shape) plan_error("gradient '" + t.name + "' does not match its weight");
      Tensor s = t;
      for (const auto& [axis, keep] : it->second.keep) s = tensor_slice(s, axis, keep);
      out.put(std::move(s));
    }
    return out;
  };

  ModelBundle out;
  out.graph = bundle.graph;
  out.weights = slice_store(bundle.weights);
  if (bundle.gradients) out.gradients = slice_store(*bundle.gradients);
  for (NodeSpec& node : out.graph.nodes) {
    auto it = plan.derived_params.find(node.id);
    if (it != plan.derived_params.end()) node.params = it->second;
  }

  if (!plan.removed_blocks.empty()) {
    std::map<std::string, std::string> replacement;
    std::set<std::string> dropped;
    for (const BlockRemoval& b : plan.removed_blocks) {
      const NodeSpec* add = out.graph.find(b.add_node);
      if (!add || add->kind != NodeKind::add ||
          std::find(add->inputs.begin(), add->inputs.end(), b.skip_input) == add->inputs.end()) {
        plan_error("residual block at '" + b.add_node + "' does not match the graph");
      }
      replacement[b.add_node] = b.skip_input;
      dropped.insert(b.add_node);
      for (const std::string& n : b.branch) {
        if (!out.graph.find(n)) plan_error("block node '" + n + "' missing from the graph");
        dropped.insert(n);
      }
    }
    auto resolve = [&](std::string id) {
      for (auto it = replacement.find(id); it != replacement.end(); it = replacement.find(id)) id = it->second;
      return id;
    };
    std::vector<NodeSpec> kept;
    for (NodeSpec& node : out.graph.nodes) {
      if (dropped.count(node.id)) {
        for (const auto& [role, name] : node.tensors) {
          out.weights.erase(name);
          if (out.gradients) out.gradients->erase(name);
        }
        continue;
      }
      for (std::string& in : node.inputs) in = resolve(in);
      kept.push_back(std::move(node));
    }
    out.graph.nodes = std::move(kept);
  }

  validate_bundle(out);
  return out;
}

// ---------------------------------------------------------------------------

std::vector<BlockRemoval> find_residual_blocks(const ModelGraph& graph) {
  const std::vector<std::size_t> order = canonical_order(graph);
  const std::size_t n = graph.nodes.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) index[graph.nodes[i].id] = i;
  std::vector<std::size_t> rank(n);
  for (std::size_t r = 0; r < n; ++r) rank[order[r]] = r;

  std::vector<std::vector<std::size_t>> consumers(n);
  std::vector<std::vector<char>> anc(n, std::vector<char>(n, 0));  // anc[x][y]: y is a strict ancestor of x
  for (std::size_t i : order) {
    for (const std::string& in : graph.nodes[i].inputs) {
      const std::size_t p = index.at(in);
      consumers[p].push_back(i);
      anc[i][p] = 1;
      for (std::size_t q = 0; q < n; ++q) {
        if (anc[p][q]) anc[i][q] = 1;
      }
    }
  }

  std::vector<BlockRemoval> blocks;
  for (std::size_t a : order) {
    const NodeSpec& add = graph.nodes[a];
    if (add.kind != NodeKind::add) continue;
    for (int side = 0; side < 2; ++side) {
      const std::size_t s = index.at(add.inputs[side]);
      const std::size_t t = index.at(add.inputs[1 - side]);
      if (s == t || !anc[t][s]) continue;
      std::vector<std::size_t> branch;
      for (std::size_t x : order) {
        if (anc[x][s] && (x == t || anc[t][x])) branch.push_back(x);
      }
      std::set<std::size_t> inside(branch.begin(), branch.end());
      bool closed = true;
      for (std::size_t x : branch) {
        const NodeKind k = graph.nodes[x].kind;
        if (k == NodeKind::input || k == NodeKind::output) closed = false;
        for (const std::string& in : graph.nodes[x].inputs) {
          const std::size_t p = index.at(in);
          if (p != s && !inside.count(p)) closed = false;
        }
        for (std::size_t c : consumers[x]) {
          if (c != a && !inside.count(c)) closed = false;
        }
      }
      if (!closed) continue;
      BlockRemoval b;
      b.add_node = add.id;
      b.skip_input = graph.nodes[s].id;
      for (std::size_t x : branch) b.branch.push_back(graph.nodes[x].id);
      blocks.push_back(std::move(b));
      break;
    }
  }
  return blocks;
}

std::vector<double> scores_by_substructure(const std::vector<IsoGroup>& groups,
                                           const std::vector<ImportanceVector>& scores, std::size_t n_subs) {
  std::vector<double> out(n_subs, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t g = 0; g < groups.size() && g < scores.size(); ++g) {
    for (std::size_t m = 0; m < groups[g].members.size() && m < scores[g].scores.size(); ++m) {
      out.at(groups[g].members[m]) = scores[g].scores[m];
    }
  }
  return out;
}

PruningPlan depth_prune_plan(const ModelGraph& graph, const std::vector<SubStructure>& subs,
                             std::span<const double> sub_scores, std::size_t n_blocks) {
  PruningPlan plan;
  if (n_blocks == 0) return plan;
  if (sub_scores.size() != subs.size()) throw Error(ErrorKind::usage, "scores are not aligned with sub-structures");
  std::vector<BlockRemoval> blocks = find_residual_blocks(graph);
  if (blocks.empty()) plan_error("no removable identity-skip block exists");
  if (n_blocks >= blocks.size()) {
    throw Error(ErrorKind::usage, "asked to remove " + std::to_string(n_blocks) + " of " +
                                      std::to_string(blocks.size()) + " residual blocks");
  }

  std::vector<BlockRemoval> cands;
  for (BlockRemoval& b : blocks) {
    const std::set<std::string> nodes(b.branch.begin(), b.branch.end());
    CompensatedSum sum;
    std::size_t count = 0;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      const bool owned = std::all_of(subs[i].vertices.begin(), subs[i].vertices.end(),
                                     [&](const PruningVertex& v) { return nodes.count(v.owner_node) > 0; });
      if (!owned) continue;
      if (!std::isfinite(sub_scores[i])) throw Error(ErrorKind::usage, "missing score for sub-structure " + std::to_string(i));
      sum.add(sub_scores[i]);
      ++count;
    }
    if (count == 0) continue;
    b.score = sum.value() / static_cast<double>(count);
    cands.push_back(std::move(b));
  }
  if (cands.empty()) plan_error("no residual block owns a prunable sub-structure");
  // Candidates are already in canonical order of their add node.
  std::stable_sort(cands.begin(), cands.end(),
                   [](const BlockRemoval& a, const BlockRemoval& b) { return a.score < b.score; });

  std::set<std::string> used;
  for (const BlockRemoval& b : cands) {
    if (plan.removed_blocks.size() == n_blocks) break;
    bool overlaps = used.count(b.add_node) > 0;
    for (const std::string& n : b.branch) overlaps = overlaps || used.count(n);
    if (overlaps) continue;
    used.insert(b.add_node);
    used.insert(b.branch.begin(), b.branch.end());
    plan.removed_blocks.push_back(b);
  }
  if (plan.removed_blocks.size() < n_blocks) plan_error("not enough disjoint residual blocks to remove");
  std::map<std::string, std::size_t> rank;
  const auto order = canonical_order(graph);
  for (std::size_t r = 0; r < order.size(); ++r) rank[graph.nodes[order[r]].id] = r;
  std::sort(plan.removed_blocks.begin(), plan.removed_blocks.end(),
            [&](const BlockRemoval& a, const BlockRemoval& b) { return rank[a.add_node] < rank[b.add_node]; });
  return plan;
}

std::string plan_to_json_text(const PruningPlan& plan, const ModelGraph& graph, const std::vector<IsoGroup>& groups) {
  using nlohmann::json;
  json removals = json::array();
  for (const Removal& r : plan.removals) {
    removals.push_back({{"group", r.group},
                        {"signature", r.group < groups.size() ? groups[r.group].signature.hash() : ""},
                        {"member", r.member},
                        {"substructure", r.sub},
                        {"score", r.score}});
  }
  json resolved = json::object();
  for (const auto& [tensor, cut] : plan.resolved) {
    json keep = json::object();
    for (const auto& [axis, idx] : cut.keep) keep[std::to_string(axis)] = idx;
    resolved[tensor] = {{"original_shape", cut.original_shape}, {"keep", keep}};
  }
  json params = json::object();
  for (const auto& [id, p] : plan.derived_params) {
    NodeSpec n = graph.at(id);
    n.params = p;
    params[id] = detail::params_to_json(n);
  }
  json blocks = json::array();
  for (const BlockRemoval& b : plan.removed_blocks) {
    blocks.push_back({{"add", b.add_node}, {"skip", b.skip_input}, {"branch", b.branch}, {"score", b.score}});
  }
  json j = {{"schema", "isoprune.plan/1"},
            {"removals", removals},
            {"resolved", resolved},
            {"derived_params", params},
            {"collapsed", plan.collapsed},
            {"removed_blocks", blocks}};
  return j.dump(2) + "\n";
}

}  // namespace isoprune
