#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isoprune/dep_graph.hpp"
#include "isoprune/importance.hpp"
#include "isoprune/isomorph.hpp"
#include "isoprune/model_ir.hpp"

namespace isoprune {

enum class Strategy { isomorphic, global, local };
const char* to_string(Strategy s);
std::optional<Strategy> strategy_from_string(const std::string& s);

struct PruneConfig {
  Strategy strategy = Strategy::isomorphic;
  double default_ratio = 0.0;
  // Keyed by group signature hash or by family tag name.
  std::map<std::string, double> per_group_ratios;
  Criterion criterion;
  std::int64_t min_keep = 1;
  // Skip candidates whose removal would leave a tensor axis (or the heads or
  // head dims of an attention node) empty.
  bool prevent_collapse = false;
};

void validate_config(const PruneConfig& config, const std::vector<IsoGroup>& groups);
double ratio_for(const PruneConfig& config, const IsoGroup& group);

struct Removal {
  std::size_t group = 0;
  std::size_t member = 0;  // index into IsoGroup::members
  std::size_t sub = 0;     // index into the partition
  double score = 0.0;
  bool operator==(const Removal&) const = default;
};

struct AxisCut {
  Shape original_shape;
  std::map<std::size_t, std::vector<std::int64_t>> keep;  // axis -> ascending keep indices
  bool operator==(const AxisCut&) const = default;
};

struct BlockRemoval {
  std::string add_node;
  std::string skip_input;
  std::vector<std::string> branch;  // canonical order
  double score = 0.0;
  bool operator==(const BlockRemoval&) const = default;
};

struct PruningPlan {
  std::vector<Removal> removals;                // sorted by (group, member)
  std::map<std::string, AxisCut> resolved;      // tensor -> cut
  std::map<std::string, NodeParams> derived_params;
  std::vector<std::string> collapsed;           // axes the removals would empty
  std::vector<BlockRemoval> removed_blocks;

  bool empty() const { return removals.empty() && removed_blocks.empty(); }
  bool applicable() const { return collapsed.empty(); }
};

/// Ranking only: which members each strategy marks for removal.
std::vector<Removal> select_removals(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                                     const std::vector<IsoGroup>& groups,
                                     const std::vector<ImportanceVector>& scores, const PruneConfig& config);

/// Resolves removals into keep lists and post-prune node params.
PruningPlan resolve_removals(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                             std::vector<Removal> removals);

PruningPlan plan_prune(const ModelBundle& bundle, const std::vector<SubStructure>& subs,
                       const std::vector<IsoGroup>& groups, const std::vector<ImportanceVector>& scores,
                       const PruneConfig& config);

ModelBundle apply_plan(const ModelBundle& bundle, const PruningPlan& plan);

/// Residual blocks: an add whose one input is an ancestor of the other, with a
/// branch that nothing outside the block reads.
std::vector<BlockRemoval> find_residual_blocks(const ModelGraph& graph);

/// Per-partition-index aggregate scores recovered from group-aligned vectors.
std::vector<double> scores_by_substructure(const std::vector<IsoGroup>& groups,
                                           const std::vector<ImportanceVector>& scores, std::size_t n_subs);

PruningPlan depth_prune_plan(const ModelGraph& graph, const std::vector<SubStructure>& subs,
                             std::span<const double> sub_scores, std::size_t n_blocks);

std::string plan_to_json_text(const PruningPlan& plan, const ModelGraph& graph,
                              const std::vector<IsoGroup>& groups);

}  // namespace isoprune
