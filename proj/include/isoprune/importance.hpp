#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isoprune/dep_graph.hpp"
#include "isoprune/isomorph.hpp"
#include "isoprune/model_ir.hpp"

namespace isoprune {

enum class CriterionKind { l1_magnitude, l2_magnitude, taylor };

struct Criterion {
  CriterionKind kind = CriterionKind::l2_magnitude;
  bool requires_gradients() const { return kind == CriterionKind::taylor; }
};

const char* to_string(CriterionKind kind);
/// Accepts "l1", "l2", "taylor" (and the long names).
std::optional<CriterionKind> criterion_from_string(const std::string& s);

struct ImportanceVector {
  std::size_t group = 0;       // index into the group list
  std::vector<double> scores;  // aligned with IsoGroup::members
};

/// Running sum with Neumaier compensation.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Single-vertex importance: norm of the slice (magnitude) or L2 norm of the
/// elementwise gradient-weight product over the slice (taylor).
double unit_importance(const Criterion& criterion, const ModelBundle& bundle, const PruningVertex& v);

/// Sum of unit importances over every vertex of the sub-structure.
double aggregate_importance(const SubStructure& sub, const Criterion& criterion, const ModelBundle& bundle);

ImportanceVector group_scores(const IsoGroup& group, std::size_t group_index, const std::vector<SubStructure>& subs,
                              const Criterion& criterion, const ModelBundle& bundle);

std::vector<ImportanceVector> score_all(const std::vector<IsoGroup>& groups, const std::vector<SubStructure>& subs,
                                        const Criterion& criterion, const ModelBundle& bundle);

/// Score at the boundary of removing floor(ratio * N) lowest entries: the
/// midpoint between the last removed and the first kept score, or the minimum
/// when nothing would be removed.
double ratio_threshold(std::span<const double> scores, double ratio);

struct GroupHistogram {
  std::size_t group = 0;
  std::string signature_hash;
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::size_t> counts;
  double group_threshold = 0.0;
};

struct HistogramTable {
  std::vector<GroupHistogram> groups;
  double global_threshold = 0.0;
  double ratio = 0.5;
};

HistogramTable histogram(const std::vector<IsoGroup>& groups, const std::vector<ImportanceVector>& scores,
                         std::size_t bins, double ratio = 0.5);

}  // namespace isoprune
