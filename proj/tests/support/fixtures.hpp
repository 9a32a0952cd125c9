#pragma once

// Deterministic test networks and independent reference computations.

#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "isoprune/dep_graph.hpp"
#include "isoprune/executor.hpp"
#include "isoprune/importance.hpp"
#include "isoprune/model_ir.hpp"

namespace fixtures {

using isoprune::ActFn;
using isoprune::ModelBundle;
using isoprune::Shape;

class Builder {
 public:
  explicit Builder(std::uint32_t seed) : rng_(seed) {}

  std::string input(const std::string& id, Shape shape);
  std::string linear(const std::string& id, const std::string& in, std::int64_t in_f, std::int64_t out_f,
                     bool bias = true);
  std::string conv(const std::string& id, const std::string& in, std::int64_t ci, std::int64_t co, std::int64_t k,
                   std::int64_t stride, std::int64_t pad, bool depthwise = false, bool bias = false);
  std::string bn(const std::string& id, const std::string& in, std::int64_t c);
  std::string ln(const std::string& id, const std::string& in, std::int64_t dim);
  std::string act(const std::string& id, const std::string& in, ActFn fn = ActFn::relu);
  std::string add(const std::string& id, const std::string& a, const std::string& b);
  std::string attention(const std::string& id, const std::string& in, std::int64_t e, std::int64_t h, std::int64_t d,
                        bool bias = true);
  std::string pool(const std::string& id, const std::string& in);
  std::string output(const std::string& id, const std::string& in);

  isoprune::TensorStore& weights() { return bundle_.weights; }
  ModelBundle finish();

 private:
  isoprune::NodeSpec& node(const std::string& id, isoprune::NodeKind kind, std::vector<std::string> inputs);
  void tensor(isoprune::NodeSpec& n, const std::string& role, Shape shape, double scale, double offset = 0.0);

  std::mt19937 rng_;
  ModelBundle bundle_;
};

// MLP with one residual add; no biases.
ModelBundle coupled_mlp(std::uint32_t seed = 1);
ModelBundle mini_resnet50(std::uint32_t seed = 2);
ModelBundle mini_mobilenet_v2(std::uint32_t seed = 3);

struct VitSpec {
  std::int64_t depth = 2, embed = 16, heads = 4, head_dim = 4, mlp = 32, tokens = 5, patch = 6;
  std::uint32_t seed = 4;
};
ModelBundle toy_vit(const VitSpec& spec = {});
// E=16, H=4, head_dim=8 with planted weak embedding channels, heads and head
// dims so that Emb 50% / Head 50% / Dim 25% leaves E=8, H=2, head_dim=6.
ModelBundle planted_vit();

// Two groups: A scores roughly 10..20, B roughly 0..1.
ModelBundle planted_two_group();

// MLPs with planted all-zero hidden units; `dead` lists hidden unit indices.
ModelBundle dead_unit_mlp(ActFn fn, const std::vector<std::int64_t>& dead, std::uint32_t seed = 7);
// conv-bn-relu stack with planted dead channels in the first conv.
ModelBundle dead_channel_convnet(const std::vector<std::int64_t>& dead, std::uint32_t seed = 8);

// embed -> `blocks` x [fc_a -> relu -> fc_b -> add] -> head.
ModelBundle residual_mlp(std::int64_t blocks, std::uint32_t seed = 9);
// Single linear layer feeding the output, for softmax gradient checks.
ModelBundle linear_softmax(std::int64_t in, std::int64_t classes, std::uint32_t seed = 10);

/// Multiplies every element covered by the sub-structure's slices by `factor`.
void scale_substructure(ModelBundle& bundle, const isoprune::SubStructure& sub, double factor);

/// Index of the sub-structure whose vertex list contains (tensor, axis role, unit, pattern kind).
std::size_t find_sub(const std::vector<isoprune::SubStructure>& subs, const std::string& tensor,
                     isoprune::AxisRole role, std::int64_t unit,
                     isoprune::PatternKind kind = isoprune::PatternKind::single);

std::vector<isoprune::ActivationBatch> random_batches(const ModelBundle& bundle, std::size_t count,
                                                      std::int64_t batch, std::uint32_t seed);

// --- reference computations -------------------------------------------------

/// Raw indices a vertex covers, computed from node params rather than from
/// the vertex's unit pattern.
std::set<std::int64_t> oracle_raw_indices(const isoprune::ModelGraph& graph, const isoprune::PruningVertex& v);
/// Tensor axis a vertex slices, from node kind and role.
std::size_t oracle_axis(const isoprune::ModelGraph& graph, const isoprune::PruningVertex& v);
/// Sub-structure importance by scanning every tensor element.
double oracle_importance(const ModelBundle& bundle, const isoprune::SubStructure& sub,
                         isoprune::CriterionKind kind);

std::filesystem::path temp_dir(const std::string& tag);

}  // namespace fixtures
