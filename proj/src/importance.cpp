#include "isoprune/importance.hpp"

#include <algorithm>
#include <cmath>

namespace isoprune {

const char* to_string(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::l1_magnitude: return "l1";
    case CriterionKind::l2_magnitude: return "l2";
    case CriterionKind::taylor: return "taylor";
  }
  return "?";
}

std::optional<CriterionKind> criterion_from_string(const std::string& s) {
  if (s == "l1" || s == "l1_magnitude") return CriterionKind::l1_magnitude;
  if (s == "l2" || s == "l2_magnitude") return CriterionKind::l2_magnitude;
  if (s == "taylor") return CriterionKind::taylor;
  return std::nullopt;
}

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x)) {
    comp_ += (sum_ - t) + x;
  } else {
    comp_ += (x - t) + sum_;
  }
  sum_ = t;
}

namespace {

[[noreturn]] void non_finite(const std::string& tensor, std::int64_t flat, const char* what) {
  throw Error(ErrorKind::numeric, std::string(what) + " '" + tensor + "' holds a non-finite value at flat index " +
                                      std::to_string(flat));
}

}  // namespace

double unit_importance(const Criterion& criterion, const ModelBundle& bundle, const PruningVertex& v) {
  const Tensor& w = bundle.weights.at(v.tensor);
  const Tensor* g = nullptr;
  if (criterion.requires_gradients()) {
    if (!bundle.gradients) throw Error(ErrorKind::usage, "taylor criterion needs a gradient store");
    g = bundle.gradients->find(v.tensor);
    if (!g || g->shape != w.shape) throw Error(ErrorKind::validation, "no matching gradient for '" + v.tensor + "'");
  }
  const std::size_t axis = physical_axis(bundle.graph, v);
  const std::vector<std::int64_t> raw = v.pattern.resolve(v.unit_index);
  const std::int64_t len = w.shape.at(axis);
  std::int64_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= w.shape[d];
  std::int64_t inner = 1;
  for (std::size_t d = axis + 1; d < w.shape.size(); ++d) inner *= w.shape[d];

  CompensatedSum acc;
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t r : raw) {
      if (r < 0 || r >= len) throw Error(ErrorKind::validation, "vertex " + describe(v) + " indexes past its tensor");
      const std::int64_t base = (o * len + r) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const std::int64_t flat = base + i;
        const double x = w.data[static_cast<std::size_t>(flat)];
        if (!std::isfinite(x)) non_finite(v.tensor, flat, "weight");
        switch (criterion.kind) {
          case CriterionKind::l1_magnitude:
            acc.add(std::abs(x));
            break;
          case CriterionKind::l2_magnitude:
            acc.add(x * x);
            break;
          case CriterionKind::taylor: {
            const double gx = g->data[static_cast<std::size_t>(flat)];
            if (!std::isfinite(gx)) non_finite(v.tensor, flat, "gradient");
            const double t = gx * x;
            acc.add(t * t);
            break;
          }
        }
      }
    }
  }
  return criterion.kind == CriterionKind::l1_magnitude ? acc.value() : std::sqrt(acc.value());
}

double aggregate_importance(const SubStructure& sub, const Criterion& criterion, const ModelBundle& bundle) {
  CompensatedSum acc;
  for (const PruningVertex& v : sub.vertices) acc.add(unit_importance(criterion, bundle, v));
  return acc.value();
}

ImportanceVector group_scores(const IsoGroup& group, std::size_t group_index, const std::vector<SubStructure>& subs,
                              const Criterion& criterion, const ModelBundle& bundle) {
  ImportanceVector out{group_index, std::vector<double>(group.members.size(), 0.0)};
  for (std::size_t i = 0; i < group.members.size(); ++i) {
    out.scores[i] = aggregate_importance(subs.at(group.members[i]), criterion, bundle);
  }
  return out;
}

std::vector<ImportanceVector> score_all(const std::vector<IsoGroup>& groups, const std::vector<SubStructure>& subs,
                                        const Criterion& criterion, const ModelBundle& bundle) {
  if (criterion.requires_gradients() && !bundle.gradients) {
    throw Error(ErrorKind::usage, "taylor criterion needs a gradient store");
  }
  std::vector<ImportanceVector> out;
  out.reserve(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) out.push_back(group_scores(groups[g], g, subs, criterion, bundle));
  return out;
}

double ratio_threshold(std::span<const double> scores, double ratio) {
  if (scores.empty()) return 0.0;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto removed = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(sorted.size())));
  if (removed == 0) return sorted.front();
  if (removed >= sorted.size()) return sorted.back();
  return 0.5 * (sorted[removed - 1] + sorted[removed]);
}

HistogramTable histogram(const std::vector<IsoGroup>& groups, const std::vector<ImportanceVector>& scores,
                         std::size_t bins, double ratio) {
  if (bins == 0) throw Error(ErrorKind::usage, "histogram needs at least one bin");
  if (scores.size() != groups.size()) throw Error(ErrorKind::usage, "scores are not aligned with groups");
  HistogramTable table;
  table.ratio = ratio;
  std::vector<double> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::vector<double>& s = scores[g].scores;
    GroupHistogram h;
    h.group = g;
    h.signature_hash = groups[g].signature.hash();
    h.counts.assign(bins, 0);
    const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
    const double lo = s.empty() ? 0.0 : *lo_it;
    const double hi = s.empty() ? 0.0 : *hi_it;
    for (std::size_t b = 0; b <= bins; ++b) {
      h.edges.push_back(b == bins ? hi : lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
    }
    for (double x : s) {
      std::size_t b = 0;
      if (hi > lo) {
        b = static_cast<std::size_t>(std::floor((x - lo) / (hi - lo) * static_cast<double>(bins)));
        b = std::min(b, bins - 1);
      }
      ++h.counts[b];
    }
    h.group_threshold = ratio_threshold(s, ratio);
    pooled.insert(pooled.end(), s.begin(), s.end());
    table.groups.push_back(std::move(h));
  }
  table.global_threshold = ratio_threshold(pooled, ratio);
  return table;
}

}  // namespace isoprune
