#include "isoprune/model_ir.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "json_detail.hpp"

namespace isoprune {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(ErrorKind kind, const std::string& msg) { throw Error(kind, msg); }

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---------------------------------------------------------------------------
// TensorStore

const Tensor* TensorStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &tensors_[it->second];
}

const Tensor& TensorStore::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) fail(ErrorKind::validation, "unknown tensor '" + name + "'");
  return *t;
}

void TensorStore::put(Tensor tensor) {
  auto it = index_.find(tensor.name);
  if (it != index_.end()) {
    tensors_[it->second] = std::move(tensor);
    return;
  }
  index_.emplace(tensor.name, tensors_.size());
  tensors_.push_back(std::move(tensor));
}

void TensorStore::erase(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return;
  tensors_.erase(tensors_.begin() + static_cast<std::ptrdiff_t>(it->second));
  index_.clear();
  for (std::size_t i = 0; i < tensors_.size(); ++i) index_.emplace(tensors_[i].name, i);
}

std::vector<TensorRecord> TensorStore::records() const {
  std::vector<TensorRecord> out;
  out.reserve(tensors_.size());
  std::uint64_t offset = 0;
  for (const Tensor& t : tensors_) {
    const std::uint64_t len = 4u * static_cast<std::uint64_t>(t.numel());
    out.push_back({t.name, t.shape, offset, len});
    offset += len;
  }
  return out;
}

std::vector<std::uint8_t> TensorStore::blob() const {
  std::vector<std::uint8_t> out;
  for (const Tensor& t : tensors_) {
    const std::size_t base = out.size();
    out.resize(base + 4 * t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(t.data[i]));
      std::memcpy(out.data() + base + 4 * i, &bits, 4);
    }
  }
  return out;
}

TensorStore TensorStore::from_parts(const std::vector<TensorRecord>& records,
                                    std::span<const std::uint8_t> blob) {
  TensorStore store;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (const TensorRecord& r : records) {
    if (r.name.empty()) fail(ErrorKind::format, "tensor record with empty name");
    if (store.contains(r.name)) fail(ErrorKind::validation, "duplicate tensor name '" + r.name + "'");
    if (r.shape.empty()) fail(ErrorKind::validation, "tensor '" + r.name + "' has empty shape");
    for (std::int64_t d : r.shape) {
      if (d <= 0) fail(ErrorKind::validation, "tensor '" + r.name + "' has non-positive dim in " + shape_str(r.shape));
    }
    const std::uint64_t expect = 4u * static_cast<std::uint64_t>(shape_numel(r.shape));
    if (r.byte_len != expect) {
      fail(ErrorKind::validation, "tensor '" + r.name + "' byte_len " + std::to_string(r.byte_len) +
                                      " != 4 x numel " + std::to_string(expect));
    }
    if (r.offset > blob.size() || r.byte_len > blob.size() - r.offset) {
      fail(ErrorKind::validation, "tensor '" + r.name + "' exceeds blob bounds");
    }
    spans.emplace_back(r.offset, r.byte_len);
    Tensor t{r.name, r.shape, std::vector<float>(static_cast<std::size_t>(r.byte_len / 4))};
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + r.offset + 4 * i, 4);
      t.data[i] = std::bit_cast<float>(to_le(bits));
    }
    store.put(std::move(t));
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i - 1].first + spans[i - 1].second > spans[i].first) {
      fail(ErrorKind::validation, "tensor byte ranges overlap at offset " + std::to_string(spans[i].first));
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// Graph basics

namespace {

constexpr std::pair<NodeKind, const char*> kKindNames[] = {
    {NodeKind::input, "input"},
    {NodeKind::linear, "linear"},
    {NodeKind::conv2d, "conv2d"},
    {NodeKind::layernorm, "layernorm"},
    {NodeKind::batchnorm2d, "batchnorm2d"},
    {NodeKind::add, "add"},
    {NodeKind::act, "act"},
    {NodeKind::attention, "attention"},
    {NodeKind::global_avg_pool, "global_avg_pool"},
    {NodeKind::output, "output"},
};

}  // namespace

const char* to_string(NodeKind kind) {
  for (auto [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<NodeKind> node_kind_from_string(const std::string& s) {
  for (auto [k, name] : kKindNames) {
    if (s == name) return k;
  }
  return std::nullopt;
}

const std::string* NodeSpec::tensor(const std::string& role) const {
  auto it = tensors.find(role);
  return it == tensors.end() ? nullptr : &it->second;
}

const NodeSpec* ModelGraph::find(const std::string& id) const {
  for (const NodeSpec& n : nodes) {
    if (n.id == id) return &n;
  }
  return nullptr;
}

const NodeSpec& ModelGraph::at(const std::string& id) const {
  const NodeSpec* n = find(id);
  if (!n) fail(ErrorKind::validation, "unknown node '" + id + "'");
  return *n;
}

std::vector<std::size_t> canonical_order(const ModelGraph& graph) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (!index.emplace(graph.nodes[i].id, i).second) {
      fail(ErrorKind::validation, "duplicate node id '" + graph.nodes[i].id + "'");
    }
  }
  std::vector<std::size_t> pending(graph.nodes.size(), 0);
  std::vector<std::vector<std::size_t>> consumers(graph.nodes.size());
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    for (const std::string& in : graph.nodes[i].inputs) {
      auto it = index.find(in);
      if (it == index.end()) {
        fail(ErrorKind::validation, "node '" + graph.nodes[i].id + "' reads unknown node '" + in + "'");
      }
      consumers[it->second].push_back(i);
      ++pending[i];
    }
  }
  auto by_id = [&](std::size_t a, std::size_t b) { return graph.nodes[a].id > graph.nodes[b].id; };
  std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(by_id)> ready(by_id);
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    if (pending[i] == 0) ready.push(i);
  }
  std::vector<std::size_t> order;
  order.reserve(graph.nodes.size());
  while (!ready.empty()) {
    const std::size_t n = ready.top();
    ready.pop();
    order.push_back(n);
    for (std::size_t c : consumers[n]) {
      if (--pending[c] == 0) ready.push(c);
    }
  }
  if (order.size() != graph.nodes.size()) {
    for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
      if (pending[i] != 0) fail(ErrorKind::validation, "cycle through node '" + graph.nodes[i].id + "'");
    }
  }
  return order;
}

std::size_t channel_axis(const Shape& sample_shape) {
  return sample_shape.size() == 3 ? 0 : sample_shape.size() - 1;
}

std::map<std::string, Shape> expected_tensor_shapes(const NodeSpec& node) {
  const NodeParams& p = node.params;
  std::map<std::string, Shape> out;
  switch (node.kind) {
    case NodeKind::linear:
      out["weight"] = {p.out_features, p.in_features};
      if (p.has_bias) out["bias"] = {p.out_features};
      break;
    case NodeKind::conv2d:
      out["weight"] = {p.out_channels, p.groups > 0 ? p.in_channels / p.groups : 0, p.kernel, p.kernel};
      if (p.has_bias) out["bias"] = {p.out_channels};
      break;
    case NodeKind::layernorm:
      out["gamma"] = {p.dim};
      out["beta"] = {p.dim};
      break;
    case NodeKind::batchnorm2d:
      out["gamma"] = {p.channels};
      out["beta"] = {p.channels};
      out["running_mean"] = {p.channels};
      out["running_var"] = {p.channels};
      break;
    case NodeKind::attention: {
      const std::int64_t inner = p.num_heads * p.head_dim;
      out["w_qkv"] = {3 * inner, p.embed_dim};
      out["w_proj"] = {p.embed_dim, inner};
      if (p.has_bias) {
        out["b_qkv"] = {3 * inner};
        out["b_proj"] = {p.embed_dim};
      }
      break;
    }
    default:
      break;
  }
  return out;
}

namespace {

std::size_t expected_arity(NodeKind kind) {
  switch (kind) {
    case NodeKind::input: return 0;
    case NodeKind::add: return 2;
    default: return 1;
  }
}

void require_positive(const NodeSpec& n, const char* what, std::int64_t v) {
  if (v <= 0) fail(ErrorKind::validation, "node '" + n.id + "': " + what + " must be positive");
}

void check_params(const NodeSpec& n) {
  const NodeParams& p = n.params;
  switch (n.kind) {
    case NodeKind::input:
      if (p.shape.empty() || p.shape.size() > 3) {
        fail(ErrorKind::validation, "node '" + n.id + "': input shape must have rank 1..3");
      }
      for (std::int64_t d : p.shape) require_positive(n, "input dim", d);
      break;
    case NodeKind::linear:
      require_positive(n, "in_features", p.in_features);
      require_positive(n, "out_features", p.out_features);
      break;
    case NodeKind::conv2d:
      require_positive(n, "in_channels", p.in_channels);
      require_positive(n, "out_channels", p.out_channels);
      require_positive(n, "kernel", p.kernel);
      require_positive(n, "stride", p.stride);
      require_positive(n, "groups", p.groups);
      if (p.padding < 0) fail(ErrorKind::validation, "node '" + n.id + "': padding must be >= 0");
      if (p.groups != 1 && !(p.groups == p.in_channels && p.groups == p.out_channels)) {
        fail(ErrorKind::validation,
             "node '" + n.id + "': only groups=1 or depthwise (groups=in=out channels) is supported");
      }
      break;
    case NodeKind::layernorm:
      require_positive(n, "dim", p.dim);
      break;
    case NodeKind::batchnorm2d:
      require_positive(n, "channels", p.channels);
      break;
    case NodeKind::attention:
      require_positive(n, "embed_dim", p.embed_dim);
      require_positive(n, "num_heads", p.num_heads);
      require_positive(n, "head_dim", p.head_dim);
      break;
    default:
      break;
  }
}

[[noreturn]] void shape_error(const NodeSpec& n, const std::string& msg) {
  fail(ErrorKind::validation, "node '" + n.id + "' (" + to_string(n.kind) + "): " + msg);
}

Shape infer_one(const NodeSpec& n, const std::vector<const Shape*>& in) {
  const NodeParams& p = n.params;
  switch (n.kind) {
    case NodeKind::input:
      return p.shape;
    case NodeKind::linear: {
      Shape s = *in[0];
      if (s.size() > 2) shape_error(n, "linear expects [C] or [T, C] input, got " + shape_str(s));
      if (s.back() != p.in_features) {
        shape_error(n, "in_features=" + std::to_string(p.in_features) + " but input is " + shape_str(s));
      }
      s.back() = p.out_features;
      return s;
    }
    case NodeKind::conv2d: {
      const Shape& s = *in[0];
      if (s.size() != 3) shape_error(n, "conv2d expects [C, H, W] input, got " + shape_str(s));
      if (s[0] != p.in_channels) {
        shape_error(n, "in_channels=" + std::to_string(p.in_channels) + " but input is " + shape_str(s));
      }
      Shape out{p.out_channels, 0, 0};
      for (int d = 1; d <= 2; ++d) {
        const std::int64_t span = s[d] + 2 * p.padding - p.kernel;
        if (span < 0) shape_error(n, "kernel larger than padded input " + shape_str(s));
        out[d] = span / p.stride + 1;
      }
      return out;
    }
    case NodeKind::layernorm: {
      const Shape& s = *in[0];
      if (s[channel_axis(s)] != p.dim) {
        shape_error(n, "dim=" + std::to_string(p.dim) + " but input is " + shape_str(s));
      }
      return s;
    }
    case NodeKind::batchnorm2d: {
      const Shape& s = *in[0];
      if (s.size() != 3 || s[0] != p.channels) {
        shape_error(n, "channels=" + std::to_string(p.channels) + " but input is " + shape_str(s));
      }
      return s;
    }
    case NodeKind::add:
      if (*in[0] != *in[1]) shape_error(n, "operand shapes differ: " + shape_str(*in[0]) + " vs " + shape_str(*in[1]));
      return *in[0];
    case NodeKind::act:
    case NodeKind::output:
      return *in[0];
    case NodeKind::attention: {
      const Shape& s = *in[0];
      if (s.size() != 2 || s[1] != p.embed_dim) {
        shape_error(n, "embed_dim=" + std::to_string(p.embed_dim) + " but input is " + shape_str(s));
      }
      return s;
    }
    case NodeKind::global_avg_pool: {
      const Shape& s = *in[0];
      if (s.size() < 2) shape_error(n, "pooling needs [T, C] or [C, H, W] input, got " + shape_str(s));
      return {s[channel_axis(s)]};
    }
  }
  shape_error(n, "unknown kind");
}

}  // namespace

std::vector<Shape> infer_shapes(const ModelGraph& graph) {
  const std::vector<std::size_t> order = canonical_order(graph);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) index.emplace(graph.nodes[i].id, i);
  std::vector<Shape> shapes(graph.nodes.size());
  for (std::size_t i : order) {
    const NodeSpec& n = graph.nodes[i];
    if (n.inputs.size() != expected_arity(n.kind)) {
      shape_error(n, "expects " + std::to_string(expected_arity(n.kind)) + " inputs, has " +
                         std::to_string(n.inputs.size()));
    }
    check_params(n);
    std::vector<const Shape*> in;
    for (const std::string& id : n.inputs) in.push_back(&shapes[index.at(id)]);
    shapes[i] = infer_one(n, in);
  }
  return shapes;
}

void validate_graph(const ModelGraph& graph) {
  if (graph.nodes.empty()) fail(ErrorKind::validation, "graph has no nodes");
  for (const NodeSpec& n : graph.nodes) {
    if (n.id.empty()) fail(ErrorKind::validation, "node with empty id");
  }
  infer_shapes(graph);  // also checks ids, arity, params, cycles

  std::set<std::string> listed_inputs(graph.inputs.begin(), graph.inputs.end());
  if (listed_inputs.size() != graph.inputs.size()) fail(ErrorKind::validation, "duplicate graph input");
  std::set<std::string> listed_outputs(graph.outputs.begin(), graph.outputs.end());
  if (listed_outputs.size() != graph.outputs.size()) fail(ErrorKind::validation, "duplicate graph output");
  if (graph.inputs.empty()) fail(ErrorKind::validation, "graph declares no inputs");
  if (graph.outputs.empty()) fail(ErrorKind::validation, "graph declares no outputs");
  for (const std::string& id : graph.inputs) {
    const NodeSpec* n = graph.find(id);
    if (!n || n->kind != NodeKind::input) fail(ErrorKind::validation, "graph input '" + id + "' is not an input node");
  }
  for (const std::string& id : graph.outputs) {
    const NodeSpec* n = graph.find(id);
    if (!n || n->kind != NodeKind::output) fail(ErrorKind::validation, "graph output '" + id + "' is not an output node");
  }
  std::set<std::string> tensor_names;
  for (const NodeSpec& n : graph.nodes) {
    if (n.kind == NodeKind::input && !listed_inputs.count(n.id)) {
      fail(ErrorKind::validation, "input node '" + n.id + "' missing from graph inputs");
    }
    if (n.kind == NodeKind::output && !listed_outputs.count(n.id)) {
      fail(ErrorKind::validation, "output node '" + n.id + "' missing from graph outputs");
    }
    const auto expected = expected_tensor_shapes(n);
    if (n.tensors.size() != expected.size()) {
      fail(ErrorKind::validation, "node '" + n.id + "' declares " + std::to_string(n.tensors.size()) +
                                      " tensors, expected " + std::to_string(expected.size()));
    }
    for (const auto& [role, name] : n.tensors) {
      if (!expected.count(role)) fail(ErrorKind::validation, "node '" + n.id + "' has unexpected tensor role '" + role + "'");
      if (name.empty()) fail(ErrorKind::validation, "node '" + n.id + "' role '" + role + "' has empty tensor name");
      if (!tensor_names.insert(name).second) {
        fail(ErrorKind::validation, "tensor '" + name + "' is referenced by more than one node role");
      }
    }
  }
}

void validate_bundle(const ModelBundle& bundle) {
  validate_graph(bundle.graph);
  std::set<std::string> referenced;
  for (const NodeSpec& n : bundle.graph.nodes) {
    for (const auto& [role, shape] : expected_tensor_shapes(n)) {
      const std::string& name = n.tensors.at(role);
      const Tensor* t = bundle.weights.find(name);
      if (!t) fail(ErrorKind::validation, "node '" + n.id + "' references missing tensor '" + name + "'");
      if (t->shape != shape) {
        fail(ErrorKind::validation, "node '" + n.id + "' tensor '" + name + "' has shape " + shape_str(t->shape) +
                                        " but params imply " + shape_str(shape));
      }
      if (static_cast<std::int64_t>(t->data.size()) != t->numel()) {
        fail(ErrorKind::validation, "tensor '" + name + "' data size mismatch");
      }
      referenced.insert(name);
    }
  }
  for (const Tensor& t : bundle.weights.tensors()) {
    if (!referenced.count(t.name)) fail(ErrorKind::validation, "tensor '" + t.name + "' is not referenced by any node");
  }
  if (bundle.gradients) {
    if (bundle.gradients->size() != bundle.weights.size()) {
      fail(ErrorKind::validation, "gradient store has " + std::to_string(bundle.gradients->size()) +
                                      " tensors, weights have " + std::to_string(bundle.weights.size()));
    }
    for (const Tensor& w : bundle.weights.tensors()) {
      const Tensor* g = bundle.gradients->find(w.name);
      if (!g) fail(ErrorKind::validation, "missing gradient for tensor '" + w.name + "'");
      if (g->shape != w.shape) {
        fail(ErrorKind::validation, "gradient '" + w.name + "' shape " + shape_str(g->shape) + " != weight shape " +
                                        shape_str(w.shape));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorKind::format, where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) fail(ErrorKind::format, where + ": unknown key '" + key + "'");
  }
}

const json& member(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::format, where + ": missing key '" + key + "'");
  return *it;
}

std::int64_t get_int(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_number_integer()) fail(ErrorKind::format, where + ": '" + key + "' must be an integer");
  return v.get<std::int64_t>();
}

bool get_bool(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_boolean()) fail(ErrorKind::format, where + ": '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string get_string(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_string()) fail(ErrorKind::format, where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

Shape get_shape(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_array()) fail(ErrorKind::format, where + ": '" + key + "' must be an array");
  Shape s;
  for (const json& d : v) {
    if (!d.is_number_integer()) fail(ErrorKind::format, where + ": '" + key + "' entries must be integers");
    s.push_back(d.get<std::int64_t>());
  }
  return s;
}

std::vector<std::string> get_strings(const json& obj, const char* key, const std::string& where) {
  const json& v = member(obj, key, where);
  if (!v.is_array()) fail(ErrorKind::format, where + ": '" + key + "' must be an array");
  std::vector<std::string> out;
  for (const json& s : v) {
    if (!s.is_string()) fail(ErrorKind::format, where + ": '" + key + "' entries must be strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

NodeParams params_from_json(NodeKind kind, const json& j, const std::string& where) {
  NodeParams p;
  switch (kind) {
    case NodeKind::input:
      reject_unknown(j, {"shape"}, where);
      p.shape = get_shape(j, "shape", where);
      break;
    case NodeKind::linear:
      reject_unknown(j, {"in_features", "out_features", "has_bias"}, where);
      p.in_features = get_int(j, "in_features", where);
      p.out_features = get_int(j, "out_features", where);
      p.has_bias = get_bool(j, "has_bias", where);
      break;
    case NodeKind::conv2d:
      reject_unknown(j, {"in_channels", "out_channels", "kernel", "stride", "padding", "groups", "has_bias"}, where);
      p.in_channels = get_int(j, "in_channels", where);
      p.out_channels = get_int(j, "out_channels", where);
      p.kernel = get_int(j, "kernel", where);
      p.stride = get_int(j, "stride", where);
      p.padding = get_int(j, "padding", where);
      p.groups = get_int(j, "groups", where);
      p.has_bias = get_bool(j, "has_bias", where);
      break;
    case NodeKind::layernorm:
      reject_unknown(j, {"dim"}, where);
      p.dim = get_int(j, "dim", where);
      break;
    case NodeKind::batchnorm2d:
      reject_unknown(j, {"channels"}, where);
      p.channels = get_int(j, "channels", where);
      break;
    case NodeKind::act: {
      reject_unknown(j, {"fn"}, where);
      const std::string fn = get_string(j, "fn", where);
      if (fn == "relu") {
        p.fn = ActFn::relu;
      } else if (fn == "gelu") {
        p.fn = ActFn::gelu;
      } else {
        fail(ErrorKind::format, where + ": unknown activation '" + fn + "'");
      }
      break;
    }
    case NodeKind::attention:
      reject_unknown(j, {"embed_dim", "num_heads", "head_dim", "has_bias"}, where);
      p.embed_dim = get_int(j, "embed_dim", where);
      p.num_heads = get_int(j, "num_heads", where);
      p.head_dim = get_int(j, "head_dim", where);
      p.has_bias = get_bool(j, "has_bias", where);
      break;
    default:
      reject_unknown(j, {}, where);
      break;
  }
  return p;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::format, what + ": " + e.what());
  }
}

}  // namespace

namespace detail {

json params_to_json(const NodeSpec& n) {
  const NodeParams& p = n.params;
  json j = json::object();
  switch (n.kind) {
    case NodeKind::input:
      j["shape"] = p.shape;
      break;
    case NodeKind::linear:
      j["in_features"] = p.in_features;
      j["out_features"] = p.out_features;
      j["has_bias"] = p.has_bias;
      break;
    case NodeKind::conv2d:
      j["in_channels"] = p.in_channels;
      j["out_channels"] = p.out_channels;
      j["kernel"] = p.kernel;
      j["stride"] = p.stride;
      j["padding"] = p.padding;
      j["groups"] = p.groups;
      j["has_bias"] = p.has_bias;
      break;
    case NodeKind::layernorm:
      j["dim"] = p.dim;
      break;
    case NodeKind::batchnorm2d:
      j["channels"] = p.channels;
      break;
    case NodeKind::act:
      j["fn"] = p.fn == ActFn::relu ? "relu" : "gelu";
      break;
    case NodeKind::attention:
      j["embed_dim"] = p.embed_dim;
      j["num_heads"] = p.num_heads;
      j["head_dim"] = p.head_dim;
      j["has_bias"] = p.has_bias;
      break;
    default:
      break;
  }
  return j;
}

}  // namespace detail

std::string graph_to_json_text(const ModelGraph& graph) {
  json nodes = json::array();
  for (const NodeSpec& n : graph.nodes) {
    json tensors = json::object();
    for (const auto& [role, name] : n.tensors) tensors[role] = name;
    nodes.push_back({{"id", n.id},
                     {"kind", to_string(n.kind)},
                     {"params", detail::params_to_json(n)},
                     {"inputs", n.inputs},
                     {"tensors", tensors}});
  }
  json j = {{"nodes", nodes}, {"inputs", graph.inputs}, {"outputs", graph.outputs}};
  return j.dump(2) + "\n";
}

ModelGraph graph_from_json_text(const std::string& text) {
  const json j = parse_json(text, "graph.json");
  reject_unknown(j, {"nodes", "inputs", "outputs"}, "graph.json");
  ModelGraph g;
  const json& nodes = member(j, "nodes", "graph.json");
  if (!nodes.is_array()) fail(ErrorKind::format, "graph.json: 'nodes' must be an array");
  for (const json& jn : nodes) {
    reject_unknown(jn, {"id", "kind", "params", "inputs", "tensors"}, "graph.json node");
    NodeSpec n;
    n.id = get_string(jn, "id", "graph.json node");
    const std::string where = "node '" + n.id + "'";
    const std::string kind = get_string(jn, "kind", where);
    auto k = node_kind_from_string(kind);
    if (!k) fail(ErrorKind::format, where + ": unknown kind '" + kind + "'");
    n.kind = *k;
    n.params = params_from_json(n.kind, member(jn, "params", where), where + " params");
    n.inputs = get_strings(jn, "inputs", where);
    const json& jt = member(jn, "tensors", where);
    if (!jt.is_object()) fail(ErrorKind::format, where + ": 'tensors' must be an object");
    for (const auto& [role, name] : jt.items()) {
      if (!name.is_string()) fail(ErrorKind::format, where + ": tensor names must be strings");
      n.tensors[role] = name.get<std::string>();
    }
    g.nodes.push_back(std::move(n));
  }
  g.inputs = get_strings(j, "inputs", "graph.json");
  g.outputs = get_strings(j, "outputs", "graph.json");
  return g;
}

std::string records_to_json_text(const std::vector<TensorRecord>& records) {
  json j = json::array();
  for (const TensorRecord& r : records) {
    j.push_back({{"name", r.name}, {"dtype", "f32"}, {"shape", r.shape}, {"offset", r.offset}, {"byte_len", r.byte_len}});
  }
  return j.dump(2) + "\n";
}

std::vector<TensorRecord> records_from_json_text(const std::string& text) {
  const json j = parse_json(text, "tensor manifest");
  if (!j.is_array()) fail(ErrorKind::format, "tensor manifest must be an array");
  std::vector<TensorRecord> out;
  for (const json& jr : j) {
    reject_unknown(jr, {"name", "dtype", "shape", "offset", "byte_len"}, "tensor record");
    TensorRecord r;
    r.name = get_string(jr, "name", "tensor record");
    const std::string where = "tensor '" + r.name + "'";
    if (get_string(jr, "dtype", where) != "f32") fail(ErrorKind::format, where + ": only dtype f32 is supported");
    r.shape = get_shape(jr, "shape", where);
    const std::int64_t off = get_int(jr, "offset", where);
    const std::int64_t len = get_int(jr, "byte_len", where);
    if (off < 0 || len < 0) fail(ErrorKind::format, where + ": negative offset or byte_len");
    r.offset = static_cast<std::uint64_t>(off);
    r.byte_len = static_cast<std::uint64_t>(len);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint8_t> read_binary(const fs::path& path) {
  const std::string s = read_file(path);
  return {s.begin(), s.end()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "short write to '" + path.string() + "'");
}

void write_file(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

TensorStore load_tensor_store(const fs::path& manifest, const fs::path& blob) {
  if (!fs::exists(manifest)) fail(ErrorKind::io, "missing file '" + manifest.string() + "'");
  if (!fs::exists(blob)) fail(ErrorKind::io, "missing file '" + blob.string() + "'");
  const auto records = records_from_json_text(read_file(manifest));
  const auto bytes = read_binary(blob);
  return TensorStore::from_parts(records, bytes);
}

void save_tensor_store(const TensorStore& store, const fs::path& manifest, const fs::path& blob) {
  write_file(manifest, records_to_json_text(store.records()));
  write_file(blob, store.blob());
}

ModelBundle load_bundle(const fs::path& dir) {
  const fs::path graph_path = dir / "graph.json";
  if (!fs::exists(graph_path)) fail(ErrorKind::io, "missing file '" + graph_path.string() + "'");
  ModelBundle b;
  b.graph = graph_from_json_text(read_file(graph_path));
  b.weights = load_tensor_store(dir / "tensors.json", dir / "tensors.bin");
  const bool has_gj = fs::exists(dir / "grads.json");
  const bool has_gb = fs::exists(dir / "grads.bin");
  if (has_gj != has_gb) fail(ErrorKind::io, "grads.json and grads.bin must be present together in '" + dir.string() + "'");
  if (has_gj) b.gradients = load_tensor_store(dir / "grads.json", dir / "grads.bin");
  validate_bundle(b);
  return b;
}

void save_bundle(const ModelBundle& bundle, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::io, "cannot create directory '" + dir.string() + "'");
  write_file(dir / "graph.json", graph_to_json_text(bundle.graph));
  save_tensor_store(bundle.weights, dir / "tensors.json", dir / "tensors.bin");
  if (bundle.gradients) {
    save_tensor_store(*bundle.gradients, dir / "grads.json", dir / "grads.bin");
  } else {
    fs::remove(dir / "grads.json", ec);
    fs::remove(dir / "grads.bin", ec);
  }
}

// ---------------------------------------------------------------------------
// Slicing

Tensor tensor_slice(const Tensor& tensor, std::size_t axis, std::span<const std::int64_t> keep) {
  if (axis >= tensor.shape.size()) {
    fail(ErrorKind::usage, "slice of '" + tensor.name + "': axis " + std::to_string(axis) + " >= rank " +
                               std::to_string(tensor.shape.size()));
  }
  if (keep.empty()) fail(ErrorKind::usage, "slice of '" + tensor.name + "': empty keep set");
  const std::int64_t len = tensor.shape[axis];
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] < 0 || keep[i] >= len) {
      fail(ErrorKind::usage, "slice of '" + tensor.name + "': index " + std::to_string(keep[i]) +
                                 " out of range for axis length " + std::to_string(len));
    }
    if (i > 0 && keep[i] <= keep[i - 1]) {
      fail(ErrorKind::usage, "slice of '" + tensor.name + "': keep indices must be strictly increasing");
    }
  }
  std::int64_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= tensor.shape[d];
  std::int64_t inner = 1;
  for (std::size_t d = axis + 1; d < tensor.shape.size(); ++d) inner *= tensor.shape[d];

  Tensor out{tensor.name, tensor.shape, {}};
  out.shape[axis] = static_cast<std::int64_t>(keep.size());
  out.data.reserve(static_cast<std::size_t>(outer * static_cast<std::int64_t>(keep.size()) * inner));
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k : keep) {
      const auto first = tensor.data.begin() + (o * len + k) * inner;
      out.data.insert(out.data.end(), first, first + inner);
    }
  }
  return out;
}

Tensor tensor_slice(const TensorStore& store, const std::string& name, std::size_t axis,
                    std::span<const std::int64_t> keep) {
  return tensor_slice(store.at(name), axis, keep);
}

}  // namespace isoprune
