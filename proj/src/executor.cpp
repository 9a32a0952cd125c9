#include "isoprune/executor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "json.hpp"

namespace isoprune {

const char* to_string(Layout layout) {
  switch (layout) {
    case Layout::NC: return "NC";
    case Layout::NTC: return "NTC";
    case Layout::NCHW: return "NCHW";
  }
  return "?";
}

ActivationBatch make_batch(const Shape& sample_shape, std::int64_t batch, std::vector<double> data) {
  if (batch < 1) throw Error(ErrorKind::usage, "batch size must be at least 1");
  if (sample_shape.empty() || sample_shape.size() > 3) {
    throw Error(ErrorKind::usage, "unsupported sample shape " + shape_str(sample_shape));
  }
  ActivationBatch b;
  b.layout = sample_shape.size() == 1 ? Layout::NC : sample_shape.size() == 2 ? Layout::NTC : Layout::NCHW;
  b.shape = {batch};
  b.shape.insert(b.shape.end(), sample_shape.begin(), sample_shape.end());
  if (static_cast<std::int64_t>(data.size()) != shape_numel(b.shape)) {
    throw Error(ErrorKind::usage, "batch data has " + std::to_string(data.size()) + " values, shape " +
                                      shape_str(b.shape) + " needs " + std::to_string(shape_numel(b.shape)));
  }
  b.data = std::move(data);
  return b;
}

namespace {

[[noreturn]] void node_error(const NodeSpec& n, const std::string& msg) {
  throw Error(ErrorKind::validation, "node '" + n.id + "': " + msg);
}

struct Value {
  Shape shape;  // batched
  std::vector<double> data;
};

// Split of a batched shape around its channel axis.
struct ChannelView {
  std::int64_t outer, channels, inner;
};

ChannelView channel_view(const Shape& s) {
  const std::size_t axis = s.size() == 4 ? 1 : s.size() - 1;
  ChannelView v{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) v.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
  return v;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

class Interpreter {
 public:
  explicit Interpreter(const ModelBundle& bundle) : bundle_(bundle), order_(canonical_order(bundle.graph)) {
    for (const Tensor& t : bundle.weights.tensors()) weights_[t.name].assign(t.data.begin(), t.data.end());
    for (std::size_t i = 0; i < bundle.graph.nodes.size(); ++i) index_[bundle.graph.nodes[i].id] = i;
  }

  std::vector<double>& weight(const std::string& name) { return weights_.at(name); }

  std::vector<ActivationBatch> run(const ActivationBatch& input) {
    const ModelGraph& g = bundle_.graph;
    if (g.inputs.size() != 1) throw Error(ErrorKind::usage, "executor supports graphs with exactly one input");
    std::vector<Value> values(g.nodes.size());
    for (std::size_t i : order_) {
      const NodeSpec& n = g.nodes[i];
      std::vector<const Value*> in;
      for (const std::string& id : n.inputs) in.push_back(&values[index_.at(id)]);
      values[i] = eval(n, in, input);
      for (double x : values[i].data) {
        if (!std::isfinite(x)) throw Error(ErrorKind::numeric, "node '" + n.id + "' produced a non-finite value");
      }
    }
    std::vector<ActivationBatch> out;
    for (const std::string& id : g.outputs) {
      Value& v = values[index_.at(id)];
      ActivationBatch b;
      b.layout = v.shape.size() == 2 ? Layout::NC : v.shape.size() == 3 ? Layout::NTC : Layout::NCHW;
      b.shape = v.shape;
      b.data = v.data;
      out.push_back(std::move(b));
    }
    return out;
  }

 private:
  const std::vector<double>* param(const NodeSpec& n, const std::string& role) {
    const std::string* name = n.tensor(role);
    return name ? &weights_.at(*name) : nullptr;
  }

  Value eval(const NodeSpec& n, const std::vector<const Value*>& in, const ActivationBatch& input) {
    const NodeParams& p = n.params;
    switch (n.kind) {
      case NodeKind::input: {
        if (input.sample_shape() != p.shape || input.batch() < 1) {
          node_error(n, "expects samples of shape " + shape_str(p.shape) + ", got batch " + shape_str(input.shape));
        }
        if (static_cast<std::int64_t>(input.data.size()) != shape_numel(input.shape)) {
          node_error(n, "input data size does not match its shape");
        }
        return {input.shape, input.data};
      }
      case NodeKind::linear: return linear(n, *in[0]);
      case NodeKind::conv2d: return conv2d(n, *in[0]);
      case NodeKind::layernorm: {
        const Value& x = *in[0];
        const ChannelView cv = channel_view(x.shape);
        if (cv.channels != p.dim) node_error(n, "input " + shape_str(x.shape) + " does not match dim");
        const auto& gamma = *param(n, "gamma");
        const auto& beta = *param(n, "beta");
        Value y{x.shape, std::vector<double>(x.data.size())};
        for (std::int64_t o = 0; o < cv.outer; ++o) {
          for (std::int64_t i = 0; i < cv.inner; ++i) {
            auto at = [&](std::int64_t c) { return static_cast<std::size_t>((o * cv.channels + c) * cv.inner + i); };
            double mean = 0.0;
            for (std::int64_t c = 0; c < cv.channels; ++c) mean += x.data[at(c)];
            mean /= static_cast<double>(cv.channels);
            double var = 0.0;
            for (std::int64_t c = 0; c < cv.channels; ++c) var += (x.data[at(c)] - mean) * (x.data[at(c)] - mean);
            var /= static_cast<double>(cv.channels);
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            for (std::int64_t c = 0; c < cv.channels; ++c) {
              y.data[at(c)] = (x.data[at(c)] - mean) * inv * gamma[c] + beta[c];
            }
          }
        }
        return y;
      }
      case NodeKind::batchnorm2d: {
        const Value& x = *in[0];
        if (x.shape.size() != 4 || x.shape[1] != p.channels) node_error(n, "input " + shape_str(x.shape) + " does not match channels");
        const ChannelView cv = channel_view(x.shape);
        const auto& gamma = *param(n, "gamma");
        const auto& beta = *param(n, "beta");
        const auto& mean = *param(n, "running_mean");
        const auto& var = *param(n, "running_var");
        Value y{x.shape, std::vector<double>(x.data.size())};
        for (std::int64_t o = 0; o < cv.outer; ++o) {
          for (std::int64_t c = 0; c < cv.channels; ++c) {
            const double scale = gamma[c] / std::sqrt(var[c] + 1e-5);
            for (std::int64_t i = 0; i < cv.inner; ++i) {
              const auto k = static_cast<std::size_t>((o * cv.channels + c) * cv.inner + i);
              y.data[k] = (x.data[k] - mean[c]) * scale + beta[c];
            }
          }
        }
        return y;
      }
      case NodeKind::add: {
        if (in[0]->shape != in[1]->shape) {
          node_error(n, "operand shapes differ: " + shape_str(in[0]->shape) + " vs " + shape_str(in[1]->shape));
        }
        Value y = *in[0];
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += in[1]->data[k];
        return y;
      }
      case NodeKind::act: {
        Value y = *in[0];
        for (double& x : y.data) x = p.fn == ActFn::relu ? std::max(x, 0.0) : gelu(x);
        return y;
      }
      case NodeKind::attention: return attention(n, *in[0]);
      case NodeKind::global_avg_pool: {
        const Value& x = *in[0];
        if (x.shape.size() < 3) node_error(n, "pooling needs a token or spatial axis, got " + shape_str(x.shape));
        const std::int64_t N = x.shape[0];
        Value y;
        if (x.shape.size() == 3) {
          const std::int64_t T = x.shape[1], C = x.shape[2];
          y = {{N, C}, std::vector<double>(static_cast<std::size_t>(N * C), 0.0)};
          for (std::int64_t b = 0; b < N; ++b) {
            for (std::int64_t t = 0; t < T; ++t) {
              for (std::int64_t c = 0; c < C; ++c) y.data[b * C + c] += x.data[(b * T + t) * C + c];
            }
          }
          for (double& v : y.data) v /= static_cast<double>(T);
        } else {
          const std::int64_t C = x.shape[1], HW = x.shape[2] * x.shape[3];
          y = {{N, C}, std::vector<double>(static_cast<std::size_t>(N * C), 0.0)};
          for (std::int64_t b = 0; b < N; ++b) {
            for (std::int64_t c = 0; c < C; ++c) {
              double s = 0.0;
              for (std::int64_t i = 0; i < HW; ++i) s += x.data[(b * C + c) * HW + i];
              y.data[b * C + c] = s / static_cast<double>(HW);
            }
          }
        }
        return y;
      }
      case NodeKind::output: return *in[0];
    }
    node_error(n, "unsupported kind");
  }

  Value linear(const NodeSpec& n, const Value& x) {
    const std::int64_t I = n.params.in_features, O = n.params.out_features;
    if (x.shape.size() > 3 || x.shape.back() != I) node_error(n, "input " + shape_str(x.shape) + " does not match in_features");
    const auto& w = *param(n, "weight");
    const auto* b = param(n, "bias");
    const std::int64_t rows = static_cast<std::int64_t>(x.data.size()) / I;
    Value y{x.shape, std::vector<double>(static_cast<std::size_t>(rows * O))};
    y.shape.back() = O;
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = x.data.data() + r * I;
      for (std::int64_t o = 0; o < O; ++o) {
        double s = b ? (*b)[o] : 0.0;
        const double* wr = w.data() + o * I;
        for (std::int64_t i = 0; i < I; ++i) s += wr[i] * xr[i];
        y.data[r * O + o] = s;
      }
    }
    return y;
  }

  Value conv2d(const NodeSpec& n, const Value& x) {
    const NodeParams& p = n.params;
    if (x.shape.size() != 4 || x.shape[1] != p.in_channels) node_error(n, "input " + shape_str(x.shape) + " does not match in_channels");
    const std::int64_t N = x.shape[0], Ci = p.in_channels, H = x.shape[2], W = x.shape[3];
    const std::int64_t K = p.kernel, S = p.stride, P = p.padding, Co = p.out_channels;
    const std::int64_t Ho = (H + 2 * P - K) / S + 1, Wo = (W + 2 * P - K) / S + 1;
    const bool depthwise = p.groups > 1;
    const std::int64_t cin_per = depthwise ? 1 : Ci;
    const auto& w = *param(n, "weight");
    const auto* bias = param(n, "bias");
    Value y{{N, Co, Ho, Wo}, std::vector<double>(static_cast<std::size_t>(N * Co * Ho * Wo))};
    for (std::int64_t b = 0; b < N; ++b) {
      for (std::int64_t o = 0; o < Co; ++o) {
        for (std::int64_t oh = 0; oh < Ho; ++oh) {
          for (std::int64_t ow = 0; ow < Wo; ++ow) {
            double s = bias ? (*bias)[o] : 0.0;
            for (std::int64_t ci = 0; ci < cin_per; ++ci) {
              const std::int64_t c = depthwise ? o : ci;
              for (std::int64_t kh = 0; kh < K; ++kh) {
                const std::int64_t ih = oh * S - P + kh;
                if (ih < 0 || ih >= H) continue;
                for (std::int64_t kw = 0; kw < K; ++kw) {
                  const std::int64_t iw = ow * S - P + kw;
                  if (iw < 0 || iw >= W) continue;
                  s += w[((o * cin_per + ci) * K + kh) * K + kw] * x.data[((b * Ci + c) * H + ih) * W + iw];
                }
              }
            }
            y.data[((b * Co + o) * Ho + oh) * Wo + ow] = s;
          }
        }
      }
    }
    return y;
  }

  Value attention(const NodeSpec& n, const Value& x) {
    const NodeParams& p = n.params;
    if (x.shape.size() != 3 || x.shape[2] != p.embed_dim) node_error(n, "input " + shape_str(x.shape) + " does not match embed_dim");
    const std::int64_t N = x.shape[0], T = x.shape[1], E = p.embed_dim, H = p.num_heads, D = p.head_dim;
    const std::int64_t HD = H * D;
    const auto& wqkv = *param(n, "w_qkv");
    const auto& wproj = *param(n, "w_proj");
    const auto* bqkv = param(n, "b_qkv");
    const auto* bproj = param(n, "b_proj");
    std::vector<double> qkv(static_cast<std::size_t>(N * T * 3 * HD));
    for (std::int64_t r = 0; r < N * T; ++r) {
      for (std::int64_t o = 0; o < 3 * HD; ++o) {
        double s = bqkv ? (*bqkv)[o] : 0.0;
        for (std::int64_t e = 0; e < E; ++e) s += wqkv[o * E + e] * x.data[r * E + e];
        qkv[r * 3 * HD + o] = s;
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(D));
    std::vector<double> ctx(static_cast<std::size_t>(N * T * HD), 0.0);
    std::vector<double> logits(static_cast<std::size_t>(T));
    for (std::int64_t b = 0; b < N; ++b) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t t = 0; t < T; ++t) {
          const double* q = qkv.data() + (b * T + t) * 3 * HD + h * D;
          double mx = -INFINITY;
          for (std::int64_t s = 0; s < T; ++s) {
            const double* k = qkv.data() + (b * T + s) * 3 * HD + HD + h * D;
            double dot = 0.0;
            for (std::int64_t j = 0; j < D; ++j) dot += q[j] * k[j];
            logits[s] = dot * scale;
            mx = std::max(mx, logits[s]);
          }
          double z = 0.0;
          for (std::int64_t s = 0; s < T; ++s) z += (logits[s] = std::exp(logits[s] - mx));
          double* c = ctx.data() + (b * T + t) * HD + h * D;
          for (std::int64_t s = 0; s < T; ++s) {
            const double* v = qkv.data() + (b * T + s) * 3 * HD + 2 * HD + h * D;
            const double a = logits[s] / z;
            for (std::int64_t j = 0; j < D; ++j) c[j] += a * v[j];
          }
        }
      }
    }
    Value y{x.shape, std::vector<double>(x.data.size())};
    for (std::int64_t r = 0; r < N * T; ++r) {
      for (std::int64_t e = 0; e < E; ++e) {
        double s = bproj ? (*bproj)[e] : 0.0;
        for (std::int64_t i = 0; i < HD; ++i) s += wproj[e * HD + i] * ctx[r * HD + i];
        y.data[r * E + e] = s;
      }
    }
    return y;
  }

  const ModelBundle& bundle_;
  std::vector<std::size_t> order_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::vector<double>> weights_;
};

}  // namespace

std::vector<ActivationBatch> forward_outputs(const ModelBundle& bundle, const ActivationBatch& input) {
  return Interpreter(bundle).run(input);
}

ActivationBatch forward(const ModelBundle& bundle, const ActivationBatch& input) {
  return forward_outputs(bundle, input).front();
}

double loss(const ActivationBatch& output, std::span<const std::int64_t> targets) {
  const Shape& s = output.shape;
  if (s.size() != 2 && s.size() != 3) throw Error(ErrorKind::usage, "loss needs [N, C] or [N, T, C] logits, got " + shape_str(s));
  const std::int64_t N = s[0], C = s.back(), T = s.size() == 3 ? s[1] : 1;
  if (static_cast<std::int64_t>(targets.size()) != N) {
    throw Error(ErrorKind::usage, std::to_string(targets.size()) + " targets for a batch of " + std::to_string(N));
  }
  double total = 0.0;
  std::vector<double> z(static_cast<std::size_t>(C));
  for (std::int64_t b = 0; b < N; ++b) {
    const std::int64_t y = targets[b];
    if (y < 0 || y >= C) throw Error(ErrorKind::usage, "target " + std::to_string(y) + " out of range for " + std::to_string(C) + " classes");
    std::fill(z.begin(), z.end(), 0.0);
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t c = 0; c < C; ++c) z[c] += output.data[(b * T + t) * C + c];
    }
    for (double& v : z) v /= static_cast<double>(T);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    total += mx + std::log(sum) - z[y];
  }
  return total / static_cast<double>(N);
}

TensorStore fd_gradients(const ModelBundle& bundle, std::span<const DataBatch> batches, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorKind::usage, "epsilon must be positive");
  if (batches.empty()) throw Error(ErrorKind::usage, "finite differences need at least one batch");
  Interpreter interp(bundle);
  auto total_loss = [&] {
    double l = 0.0;
    for (const DataBatch& b : batches) l += loss(interp.run(b.input).front(), b.targets);
    return l;
  };
  TensorStore grads;
  for (const Tensor& t : bundle.weights.tensors()) {
    std::vector<double>& w = interp.weight(t.name);
    Tensor g{t.name, t.shape, std::vector<float>(t.data.size())};
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + epsilon;
      const double up = total_loss();
      w[i] = keep - epsilon;
      const double down = total_loss();
      w[i] = keep;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error(ErrorKind::numeric, "non-finite loss while perturbing '" + t.name + "' at flat index " + std::to_string(i));
      }
      g.data[i] = static_cast<float>((up - down) / (2.0 * epsilon));
    }
    grads.put(std::move(g));
  }
  return grads;
}

ComparisonReport compare_outputs(const ModelBundle& a, const ModelBundle& b, std::span<const ActivationBatch> inputs) {
  if (a.graph.outputs.size() != b.graph.outputs.size()) throw Error(ErrorKind::usage, "bundles declare different numbers of outputs");
  ComparisonReport report;
  for (const std::string& id : a.graph.outputs) report.per_output.push_back({id, 0.0, 0.0, 0});
  std::vector<double> sums(report.per_output.size(), 0.0);
  Interpreter ia(a), ib(b);
  for (const ActivationBatch& in : inputs) {
    const auto oa = ia.run(in);
    const auto ob = ib.run(in);
    for (std::size_t k = 0; k < oa.size(); ++k) {
      if (oa[k].shape != ob[k].shape) {
        throw Error(ErrorKind::usage, "output '" + a.graph.outputs[k] + "' has shape " + shape_str(oa[k].shape) +
                                          " vs " + shape_str(ob[k].shape));
      }
      OutputDiff& d = report.per_output[k];
      for (std::size_t i = 0; i < oa[k].data.size(); ++i) {
        const double diff = std::abs(oa[k].data[i] - ob[k].data[i]);
        d.max_abs_diff = std::max(d.max_abs_diff, diff);
        sums[k] += diff;
        ++d.count;
      }
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sums.size(); ++k) {
    OutputDiff& d = report.per_output[k];
    d.mean_abs_diff = d.count ? sums[k] / static_cast<double>(d.count) : 0.0;
    report.max_abs_diff = std::max(report.max_abs_diff, d.max_abs_diff);
    report.count += d.count;
    total += sums[k];
  }
  report.mean_abs_diff = report.count ? total / static_cast<double>(report.count) : 0.0;
  return report;
}

std::string comparison_to_json_text(const ComparisonReport& report) {
  nlohmann::json per = nlohmann::json::array();
  for (const OutputDiff& d : report.per_output) {
    per.push_back({{"output", d.output}, {"max_abs_diff", d.max_abs_diff}, {"mean_abs_diff", d.mean_abs_diff}, {"count", d.count}});
  }
  nlohmann::json j = {{"max_abs_diff", report.max_abs_diff},
                      {"mean_abs_diff", report.mean_abs_diff},
                      {"count", report.count},
                      {"per_output", per}};
  return j.dump(2) + "\n";
}

}  // namespace isoprune
