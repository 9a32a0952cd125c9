#pragma once

// Reference interpreter for the supported op set. Everything runs in double
// precision on a working copy of the f32 weights.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "isoprune/model_ir.hpp"

namespace isoprune {

enum class Layout { NC, NTC, NCHW };
const char* to_string(Layout layout);

struct ActivationBatch {
  Layout layout = Layout::NC;
  Shape shape;  // batch dimension first
  std::vector<double> data;

  std::int64_t batch() const { return shape.empty() ? 0 : shape[0]; }
  /// Shape without the batch dimension.
  Shape sample_shape() const { return Shape(shape.begin() + 1, shape.end()); }
};

/// Builds a batch for a per-sample shape ([C], [T, C] or [C, H, W]).
ActivationBatch make_batch(const Shape& sample_shape, std::int64_t batch, std::vector<double> data);

/// Runs the graph on one batch for its single input; returns every graph
/// output in declaration order.
std::vector<ActivationBatch> forward_outputs(const ModelBundle& bundle, const ActivationBatch& input);
/// First graph output.
ActivationBatch forward(const ModelBundle& bundle, const ActivationBatch& input);

/// Mean cross-entropy. [N, C] logits are used as is; [N, T, C] logits are
/// mean-pooled over tokens first.
double loss(const ActivationBatch& output, std::span<const std::int64_t> targets);

struct DataBatch {
  ActivationBatch input;
  std::vector<std::int64_t> targets;
};

/// Central finite differences of the summed batch losses w.r.t. every weight.
TensorStore fd_gradients(const ModelBundle& bundle, std::span<const DataBatch> batches, double epsilon);

struct OutputDiff {
  std::string output;
  double max_abs_diff = 0.0;
  double mean_abs_diff = 0.0;
  std::int64_t count = 0;
};

struct ComparisonReport {
  double max_abs_diff = 0.0;
  double mean_abs_diff = 0.0;
  std::int64_t count = 0;
  std::vector<OutputDiff> per_output;
};

ComparisonReport compare_outputs(const ModelBundle& a, const ModelBundle& b, std::span<const ActivationBatch> inputs);
std::string comparison_to_json_text(const ComparisonReport& report);

}  // namespace isoprune
