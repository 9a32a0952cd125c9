#pragma once

// Network representation: a typed operator graph plus an f32 tensor store,
// the on-disk bundle format, and the slicing primitive used by weight surgery.
//
// Bundle directory layout:
//   graph.json    {"nodes":[{"id","kind","params","inputs","tensors"}],
//                  "inputs":[...], "outputs":[...]}
//   tensors.json  [{"name","dtype":"f32","shape":[...],"offset","byte_len"}]
//   tensors.bin   little-endian IEEE-754 f32, row-major, concatenated
//   grads.json / grads.bin   optional, same schema as the weight manifest
//
// Attention w_qkv rows are laid out [q | k | v]; each block is
// [num_heads x head_dim] with heads contiguous and head dims innermost.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "isoprune/error.hpp"

namespace isoprune {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
  std::string name;
  Shape shape;
  std::vector<float> data;

  std::int64_t numel() const { return shape_numel(shape); }
  bool operator==(const Tensor&) const = default;
};

/// Manifest entry describing one tensor inside a blob.
struct TensorRecord {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t byte_len = 0;
};

/// Named f32 tensors in declaration order. Lookup by name is total over the
/// declared names.
class TensorStore {
 public:
  TensorStore() = default;

  const Tensor* find(const std::string& name) const;
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  /// Appends, or replaces in place when the name already exists.
  void put(Tensor tensor);
  void erase(const std::string& name);

  const std::vector<Tensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }

  /// Records with offsets assigned contiguously in declaration order.
  std::vector<TensorRecord> records() const;
  std::vector<std::uint8_t> blob() const;

  static TensorStore from_parts(const std::vector<TensorRecord>& records,
                                std::span<const std::uint8_t> blob);

  bool operator==(const TensorStore& other) const { return tensors_ == other.tensors_; }

 private:
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class NodeKind {
  input,
  linear,
  conv2d,
  layernorm,
  batchnorm2d,
  add,
  act,
  attention,
  global_avg_pool,
  output,
};

const char* to_string(NodeKind kind);
std::optional<NodeKind> node_kind_from_string(const std::string& s);

enum class ActFn { relu, gelu };

/// Kind-specific attributes. Only the fields relevant to a node's kind are
/// serialized; the rest stay zero.
struct NodeParams {
  Shape shape;  // input: per-sample shape ([C], [T, C] or [C, H, W])
  std::int64_t in_features = 0;
  std::int64_t out_features = 0;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 0;
  std::int64_t padding = 0;
  std::int64_t groups = 0;
  std::int64_t dim = 0;
  std::int64_t channels = 0;
  std::int64_t embed_dim = 0;
  std::int64_t num_heads = 0;
  std::int64_t head_dim = 0;
  bool has_bias = false;
  ActFn fn = ActFn::relu;

  bool operator==(const NodeParams&) const = default;
};

struct NodeSpec {
  std::string id;
  NodeKind kind = NodeKind::input;
  NodeParams params;
  std::vector<std::string> inputs;
  std::map<std::string, std::string> tensors;  // role -> tensor name

  const std::string* tensor(const std::string& role) const;
  bool operator==(const NodeSpec&) const = default;
};

struct ModelGraph {
  std::vector<NodeSpec> nodes;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  const NodeSpec* find(const std::string& id) const;
  const NodeSpec& at(const std::string& id) const;
  bool operator==(const ModelGraph&) const = default;
};

struct ModelBundle {
  ModelGraph graph;
  TensorStore weights;
  std::optional<TensorStore> gradients;

  bool operator==(const ModelBundle&) const = default;
};

/// Stable topological order; among ready nodes the lexicographically smallest
/// id goes first. Throws on cycles or dangling inputs.
std::vector<std::size_t> canonical_order(const ModelGraph& graph);

/// Per-sample output shape of every node (indexed like graph.nodes).
std::vector<Shape> infer_shapes(const ModelGraph& graph);

/// Channel axis of a per-sample shape: 0 for [C, H, W], last otherwise.
std::size_t channel_axis(const Shape& sample_shape);

/// Tensor shapes implied by a node's params, keyed by role.
std::map<std::string, Shape> expected_tensor_shapes(const NodeSpec& node);

/// Checks every graph/bundle invariant. Throws Error naming the culprit.
void validate_graph(const ModelGraph& graph);
void validate_bundle(const ModelBundle& bundle);

ModelBundle load_bundle(const std::filesystem::path& dir);
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);

TensorStore load_tensor_store(const std::filesystem::path& manifest,
                              const std::filesystem::path& blob);
void save_tensor_store(const TensorStore& store, const std::filesystem::path& manifest,
                       const std::filesystem::path& blob);

/// Keeps the listed indices (strictly increasing, non-empty) along `axis`.
/// Elements are copied verbatim.
Tensor tensor_slice(const TensorStore& store, const std::string& name, std::size_t axis,
                    std::span<const std::int64_t> keep);
Tensor tensor_slice(const Tensor& tensor, std::size_t axis, std::span<const std::int64_t> keep);

// JSON text of the two manifests, exactly as written to disk.
std::string graph_to_json_text(const ModelGraph& graph);
ModelGraph graph_from_json_text(const std::string& text);
std::string records_to_json_text(const std::vector<TensorRecord>& records);
std::vector<TensorRecord> records_from_json_text(const std::string& text);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace isoprune
