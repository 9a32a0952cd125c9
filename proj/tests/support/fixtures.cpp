#include "fixtures.hpp"

#include <cmath>
#include <map>
#include <stdexcept>
#include <unistd.h>

namespace fixtures {

using namespace isoprune;

NodeSpec& Builder::node(const std::string& id, NodeKind kind, std::vector<std::string> inputs) {
  NodeSpec n;
  n.id = id;
  n.kind = kind;
  n.inputs = std::move(inputs);
  bundle_.graph.nodes.push_back(std::move(n));
  if (kind == NodeKind::input) bundle_.graph.inputs.push_back(id);
  if (kind == NodeKind::output) bundle_.graph.outputs.push_back(id);
  return bundle_.graph.nodes.back();
}

void Builder::tensor(NodeSpec& n, const std::string& role, Shape shape, double scale, double offset) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t{n.id + "." + role, shape, std::vector<float>(static_cast<std::size_t>(shape_numel(shape)))};
  for (float& x : t.data) x = static_cast<float>(offset + scale * u(rng_));
  n.tensors[role] = t.name;
  bundle_.weights.put(std::move(t));
}

std::string Builder::input(const std::string& id, Shape shape) {
  node(id, NodeKind::input, {}).params.shape = std::move(shape);
  return id;
}

std::string Builder::linear(const std::string& id, const std::string& in, std::int64_t in_f, std::int64_t out_f,
                            bool bias) {
  NodeSpec& n = node(id, NodeKind::linear, {in});
  n.params.in_features = in_f;
  n.params.out_features = out_f;
  n.params.has_bias = bias;
  const double s = 1.0 / std::sqrt(static_cast<double>(in_f));
  tensor(n, "weight", {out_f, in_f}, s);
  if (bias) tensor(n, "bias", {out_f}, 0.1);
  return id;
}

std::string Builder::conv(const std::string& id, const std::string& in, std::int64_t ci, std::int64_t co,
                          std::int64_t k, std::int64_t stride, std::int64_t pad, bool depthwise, bool bias) {
  NodeSpec& n = node(id, NodeKind::conv2d, {in});
  n.params.in_channels = ci;
  n.params.out_channels = co;
  n.params.kernel = k;
  n.params.stride = stride;
  n.params.padding = pad;
  n.params.groups = depthwise ? ci : 1;
  n.params.has_bias = bias;
  const std::int64_t per = depthwise ? 1 : ci;
  tensor(n, "weight", {co, per, k, k}, 1.0 / std::sqrt(static_cast<double>(per * k * k)));
  if (bias) tensor(n, "bias", {co}, 0.1);
  return id;
}

std::string Builder::bn(const std::string& id, const std::string& in, std::int64_t c) {
  NodeSpec& n = node(id, NodeKind::batchnorm2d, {in});
  n.params.channels = c;
  tensor(n, "gamma", {c}, 0.2, 1.0);
  tensor(n, "beta", {c}, 0.1);
  tensor(n, "running_mean", {c}, 0.1);
  tensor(n, "running_var", {c}, 0.3, 1.0);
  return id;
}

std::string Builder::ln(const std::string& id, const std::string& in, std::int64_t dim) {
  NodeSpec& n = node(id, NodeKind::layernorm, {in});
  n.params.dim = dim;
  tensor(n, "gamma", {dim}, 0.2, 1.0);
  tensor(n, "beta", {dim}, 0.1);
  return id;
}

std::string Builder::act(const std::string& id, const std::string& in, ActFn fn) {
  node(id, NodeKind::act, {in}).params.fn = fn;
  return id;
}

std::string Builder::add(const std::string& id, const std::string& a, const std::string& b) {
  node(id, NodeKind::add, {a, b});
  return id;
}

std::string Builder::attention(const std::string& id, const std::string& in, std::int64_t e, std::int64_t h,
                               std::int64_t d, bool bias) {
  NodeSpec& n = node(id, NodeKind::attention, {in});
  n.params.embed_dim = e;
  n.params.num_heads = h;
  n.params.head_dim = d;
  n.params.has_bias = bias;
  tensor(n, "w_qkv", {3 * h * d, e}, 1.0 / std::sqrt(static_cast<double>(e)));
  tensor(n, "w_proj", {e, h * d}, 1.0 / std::sqrt(static_cast<double>(h * d)));
  if (bias) {
    tensor(n, "b_qkv", {3 * h * d}, 0.1);
    tensor(n, "b_proj", {e}, 0.1);
  }
  return id;
}

std::string Builder::pool(const std::string& id, const std::string& in) {
  node(id, NodeKind::global_avg_pool, {in});
  return id;
}

std::string Builder::output(const std::string& id, const std::string& in) {
  node(id, NodeKind::output, {in});
  return id;
}

ModelBundle Builder::finish() {
  validate_bundle(bundle_);
  return bundle_;
}

// ---------------------------------------------------------------------------

ModelBundle coupled_mlp(std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {4});
  b.linear("fc1", "x", 4, 6, false);
  b.act("relu1", "fc1");
  b.linear("fc2", "relu1", 6, 8, false);
  b.linear("fc3", "fc2", 8, 6, false);
  b.act("relu3", "fc3");
  b.linear("fc4", "relu3", 6, 8, false);
  b.add("sum", "fc2", "fc4");
  b.linear("fc5", "sum", 8, 3, false);
  b.output("y", "fc5");
  return b.finish();
}

namespace {

std::string bottleneck(Builder& b, const std::string& p, const std::string& in, std::int64_t cin, std::int64_t width,
                       std::int64_t cout, std::int64_t stride) {
  b.conv(p + ".c1", in, cin, width, 1, 1, 0);
  b.bn(p + ".bn1", p + ".c1", width);
  b.act(p + ".r1", p + ".bn1");
  b.conv(p + ".c2", p + ".r1", width, width, 3, stride, 1);
  b.bn(p + ".bn2", p + ".c2", width);
  b.act(p + ".r2", p + ".bn2");
  b.conv(p + ".c3", p + ".r2", width, cout, 1, 1, 0);
  b.bn(p + ".bn3", p + ".c3", cout);
  std::string skip = in;
  if (stride != 1 || cin != cout) {
    b.conv(p + ".ds", in, cin, cout, 1, stride, 0);
    skip = b.bn(p + ".dsbn", p + ".ds", cout);
  }
  b.add(p + ".add", p + ".bn3", skip);
  return b.act(p + ".out", p + ".add");
}

}  // namespace

ModelBundle mini_resnet50(std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {3, 8, 8});
  b.conv("stem", "x", 3, 8, 3, 1, 1);
  b.bn("stem_bn", "stem", 8);
  std::string h = b.act("stem_relu", "stem_bn");
  const std::int64_t blocks[4] = {3, 4, 6, 3};
  const std::int64_t width[4] = {2, 3, 4, 5};
  const std::int64_t outc[4] = {8, 12, 16, 20};
  std::int64_t cin = 8;
  for (int s = 0; s < 4; ++s) {
    for (std::int64_t i = 0; i < blocks[s]; ++i) {
      const std::int64_t stride = (s > 0 && i == 0) ? 2 : 1;
      h = bottleneck(b, "s" + std::to_string(s + 1) + ".b" + std::to_string(i), h, cin, width[s], outc[s], stride);
      cin = outc[s];
    }
  }
  b.pool("pool", h);
  b.linear("fc", "pool", cin, 5);
  b.output("y", "fc");
  return b.finish();
}

namespace {

std::string inverted_residual(Builder& b, const std::string& p, const std::string& in, std::int64_t cin,
                              std::int64_t t, std::int64_t cout, std::int64_t stride) {
  std::string h = in;
  const std::int64_t hidden = cin * t;
  if (t != 1) {
    b.conv(p + ".expand", h, cin, hidden, 1, 1, 0);
    b.bn(p + ".bn0", p + ".expand", hidden);
    h = b.act(p + ".r0", p + ".bn0");
  }
  b.conv(p + ".dw", h, hidden, hidden, 3, stride, 1, true);
  b.bn(p + ".bn1", p + ".dw", hidden);
  b.act(p + ".r1", p + ".bn1");
  b.conv(p + ".project", p + ".r1", hidden, cout, 1, 1, 0);
  const std::string out = b.bn(p + ".bn2", p + ".project", cout);
  if (stride == 1 && cin == cout) return b.add(p + ".add", in, out);
  return out;
}

}  // namespace

ModelBundle mini_mobilenet_v2(std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {3, 8, 8});
  b.conv("stem", "x", 3, 4, 3, 1, 1);
  b.bn("stem_bn", "stem", 4);
  std::string h = b.act("stem_relu", "stem_bn");
  struct Stage {
    std::int64_t t, c, n, s;
  };
  const Stage stages[] = {{1, 6, 1, 1}, {2, 8, 2, 2}, {2, 10, 3, 2}, {2, 12, 1, 1}};
  std::int64_t cin = 4;
  int si = 0;
  for (const Stage& st : stages) {
    for (std::int64_t i = 0; i < st.n; ++i) {
      h = inverted_residual(b, "m" + std::to_string(si) + ".b" + std::to_string(i), h, cin, st.t, st.c,
                            i == 0 ? st.s : 1);
      cin = st.c;
    }
    ++si;
  }
  b.conv("head", h, cin, 16, 1, 1, 0);
  b.bn("head_bn", "head", 16);
  b.act("head_relu", "head_bn");
  b.pool("pool", "head_relu");
  b.linear("fc", "pool", 16, 5);
  b.output("y", "fc");
  return b.finish();
}

ModelBundle toy_vit(const VitSpec& v) {
  Builder b(v.seed);
  b.input("x", {v.tokens, v.patch});
  std::string h = b.linear("embed", "x", v.patch, v.embed);
  for (std::int64_t i = 0; i < v.depth; ++i) {
    const std::string p = "blk" + std::to_string(i);
    b.ln(p + ".ln1", h, v.embed);
    b.attention(p + ".attn", p + ".ln1", v.embed, v.heads, v.head_dim);
    h = b.add(p + ".add1", h, p + ".attn");
    b.ln(p + ".ln2", h, v.embed);
    b.linear(p + ".fc1", p + ".ln2", v.embed, v.mlp);
    b.act(p + ".gelu", p + ".fc1", ActFn::gelu);
    b.linear(p + ".fc2", p + ".gelu", v.mlp, v.embed);
    h = b.add(p + ".add2", h, p + ".fc2");
  }
  b.ln("norm", h, v.embed);
  b.linear("head", "norm", v.embed, v.embed);
  b.output("y", "head");
  return b.finish();
}

ModelBundle planted_vit() {
  VitSpec spec;
  spec.embed = 16;
  spec.heads = 4;
  spec.head_dim = 8;
  spec.seed = 11;
  ModelBundle bundle = toy_vit(spec);
  const auto part = identify_substructures(bundle.graph);
  const double weak = 0.01;
  for (std::int64_t k : {1, 3, 4, 6, 9, 11, 12, 14}) {
    scale_substructure(bundle, part.subs[find_sub(part.subs, "embed.weight", AxisRole::out, k)], weak);
  }
  const std::vector<std::vector<std::int64_t>> weak_heads = {{1, 3}, {0, 2}};
  const std::vector<std::vector<std::int64_t>> weak_dims = {{2, 5}, {1, 7}};
  for (std::size_t blk = 0; blk < 2; ++blk) {
    const std::string t = "blk" + std::to_string(blk) + ".attn.w_qkv";
    for (std::int64_t h : weak_heads[blk]) {
      scale_substructure(bundle, part.subs[find_sub(part.subs, t, AxisRole::out, h, PatternKind::block)], weak);
    }
    for (std::int64_t j : weak_dims[blk]) {
      scale_substructure(bundle, part.subs[find_sub(part.subs, t, AxisRole::out, j, PatternKind::strided)], weak);
    }
  }
  validate_bundle(bundle);
  return bundle;
}

ModelBundle planted_two_group() {
  Builder b(12);
  b.input("x", {4});
  b.linear("l1", "x", 4, 10, false);
  b.act("relu", "l1");
  b.linear("l2", "relu", 10, 10, false);
  b.ln("norm", "l2", 10);
  b.linear("l3", "norm", 10, 3, false);
  b.output("y", "l3");
  ModelBundle m = b.finish();
  auto set = [&](const std::string& name, auto fn) {
    Tensor t = m.weights.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<float>(fn(i));
    m.weights.put(std::move(t));
  };
  // l1 row k has L2 norm 10 + k.
  set("l1.weight", [](std::size_t i) { return (10.0 + static_cast<double>(i / 4)) / 2.0; });
  set("l2.weight", [](std::size_t i) { return i % 11 == 0 ? 0.05 : 0.0; });
  set("norm.gamma", [](std::size_t i) { return 0.1 + 0.01 * static_cast<double>(i); });
  set("norm.beta", [](std::size_t) { return 0.1; });
  set("l3.weight", [](std::size_t i) { return 0.1 + 0.001 * static_cast<double>(i % 10); });
  validate_bundle(m);
  return m;
}

ModelBundle dead_unit_mlp(ActFn fn, const std::vector<std::int64_t>& dead, std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {6});
  b.linear("fc1", "x", 6, 8);
  b.act("a1", "fc1", fn);
  b.linear("fc2", "a1", 8, 8);
  b.act("a2", "fc2", fn);
  b.linear("fc3", "a2", 8, 4);
  b.output("y", "fc3");
  ModelBundle m = b.finish();
  Tensor w1 = m.weights.at("fc1.weight"), b1 = m.weights.at("fc1.bias"), w2 = m.weights.at("fc2.weight");
  for (std::int64_t k : dead) {
    for (std::int64_t i = 0; i < 6; ++i) w1.data[k * 6 + i] = 0.0f;
    b1.data[k] = 0.0f;
    for (std::int64_t o = 0; o < 8; ++o) w2.data[o * 8 + k] = 0.0f;
  }
  m.weights.put(w1);
  m.weights.put(b1);
  m.weights.put(w2);
  return m;
}

ModelBundle dead_channel_convnet(const std::vector<std::int64_t>& dead, std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {3, 6, 6});
  b.conv("c1", "x", 3, 6, 3, 1, 1);
  b.bn("bn1", "c1", 6);
  b.act("r1", "bn1");
  b.conv("c2", "r1", 6, 6, 3, 1, 1);
  b.bn("bn2", "c2", 6);
  b.act("r2", "bn2");
  b.pool("pool", "r2");
  b.linear("fc", "pool", 6, 4);
  b.output("y", "fc");
  ModelBundle m = b.finish();
  Tensor w = m.weights.at("c1.weight"), mean = m.weights.at("bn1.running_mean"), beta = m.weights.at("bn1.beta");
  for (std::int64_t k : dead) {
    for (std::int64_t i = 0; i < 27; ++i) w.data[k * 27 + i] = 0.0f;
    mean.data[k] = 0.0f;
    beta.data[k] = 0.0f;
  }
  m.weights.put(w);
  m.weights.put(mean);
  m.weights.put(beta);
  return m;
}

ModelBundle residual_mlp(std::int64_t blocks, std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {6});
  std::string h = b.linear("embed", "x", 6, 8);
  for (std::int64_t i = 0; i < blocks; ++i) {
    const std::string p = "blk" + std::to_string(i);
    b.linear(p + ".fc_a", h, 8, 12);
    b.act(p + ".relu", p + ".fc_a");
    b.linear(p + ".fc_b", p + ".relu", 12, 8);
    h = b.add(p + ".add", h, p + ".fc_b");
  }
  b.linear("head", h, 8, 3);
  b.output("y", "head");
  return b.finish();
}

ModelBundle linear_softmax(std::int64_t in, std::int64_t classes, std::uint32_t seed) {
  Builder b(seed);
  b.input("x", {in});
  b.linear("fc", "x", in, classes);
  b.output("y", "fc");
  return b.finish();
}

// ---------------------------------------------------------------------------

void scale_substructure(ModelBundle& bundle, const SubStructure& sub, double factor) {
  std::map<std::string, std::set<std::int64_t>> flat;
  for (const PruningVertex& v : sub.vertices) {
    const Tensor& t = bundle.weights.at(v.tensor);
    const std::size_t axis = oracle_axis(bundle.graph, v);
    const std::set<std::int64_t> raw = oracle_raw_indices(bundle.graph, v);
    std::int64_t inner = 1;
    for (std::size_t d = axis + 1; d < t.shape.size(); ++d) inner *= t.shape[d];
    for (std::int64_t f = 0; f < t.numel(); ++f) {
      if (raw.count((f / inner) % t.shape[axis])) flat[v.tensor].insert(f);
    }
  }
  for (const auto& [name, idx] : flat) {
    Tensor t = bundle.weights.at(name);
    for (std::int64_t f : idx) t.data[f] = static_cast<float>(t.data[f] * factor);
    bundle.weights.put(std::move(t));
  }
}

std::size_t find_sub(const std::vector<SubStructure>& subs, const std::string& tensor, AxisRole role,
                     std::int64_t unit, PatternKind kind) {
  for (std::size_t i = 0; i < subs.size(); ++i) {
    for (const PruningVertex& v : subs[i].vertices) {
      if (v.tensor == tensor && v.axis_role == role && v.unit_index == unit && v.pattern.kind == kind) return i;
    }
  }
  throw std::runtime_error("no sub-structure holds " + tensor + " unit " + std::to_string(unit));
}

std::vector<ActivationBatch> random_batches(const ModelBundle& bundle, std::size_t count, std::int64_t batch,
                                            std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Shape& sample = bundle.graph.at(bundle.graph.inputs.front()).params.shape;
  std::vector<ActivationBatch> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> data(static_cast<std::size_t>(batch * shape_numel(sample)));
    for (double& x : data) x = u(rng);
    out.push_back(make_batch(sample, batch, std::move(data)));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t oracle_axis(const ModelGraph& graph, const PruningVertex& v) {
  const NodeSpec& n = graph.at(v.owner_node);
  const bool matrix = v.role == "weight" || v.role == "w_qkv" || v.role == "w_proj";
  if (!matrix || v.axis_role == AxisRole::out) return 0;
  if (n.kind == NodeKind::conv2d && n.params.groups == n.params.in_channels && n.params.groups > 1) return 0;
  return 1;
}

std::set<std::int64_t> oracle_raw_indices(const ModelGraph& graph, const PruningVertex& v) {
  const NodeSpec& n = graph.at(v.owner_node);
  std::set<std::int64_t> out;
  if (n.kind != NodeKind::attention || v.pattern.kind == PatternKind::single) {
    out.insert(v.unit_index);
    return out;
  }
  const std::int64_t H = n.params.num_heads, D = n.params.head_dim;
  const std::int64_t blocks = v.role == "w_proj" ? 1 : 3;
  const bool head = v.pattern.kind == PatternKind::block;
  for (std::int64_t b = 0; b < blocks; ++b) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t j = 0; j < D; ++j) {
        if ((head && h == v.unit_index) || (!head && j == v.unit_index)) out.insert(b * H * D + h * D + j);
      }
    }
  }
  return out;
}

double oracle_importance(const ModelBundle& bundle, const SubStructure& sub, CriterionKind kind) {
  long double total = 0.0L;
  for (const PruningVertex& v : sub.vertices) {
    const Tensor& w = bundle.weights.at(v.tensor);
    const Tensor* g = bundle.gradients ? bundle.gradients->find(v.tensor) : nullptr;
    const std::size_t axis = oracle_axis(bundle.graph, v);
    const std::set<std::int64_t> raw = oracle_raw_indices(bundle.graph, v);
    std::int64_t inner = 1;
    for (std::size_t d = axis + 1; d < w.shape.size(); ++d) inner *= w.shape[d];
    long double acc = 0.0L;
    for (std::int64_t f = 0; f < w.numel(); ++f) {
      if (!raw.count((f / inner) % w.shape[axis])) continue;
      const long double x = w.data[f];
      switch (kind) {
        case CriterionKind::l1_magnitude: acc += std::fabs(x); break;
        case CriterionKind::l2_magnitude: acc += x * x; break;
        case CriterionKind::taylor: {
          const long double t = x * static_cast<long double>(g->data[f]);
          acc += t * t;
          break;
        }
      }
    }
    total += kind == CriterionKind::l1_magnitude ? acc : std::sqrt(acc);
  }
  return static_cast<double>(total);
}

std::filesystem::path temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  const fs::path p = fs::temp_directory_path() / ("isoprune_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace fixtures
