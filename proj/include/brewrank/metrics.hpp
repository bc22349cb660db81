#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace brewrank::metrics {

/// Area under the ROC curve via the rank-sum statistic: the probability a
/// random positive outranks a random negative, ties credited 0.5.
/// Throws Error(InvalidArgument) on single-class or mismatched input.
double auc(std::span<const double> scores, std::span<const int> labels);

/// Mean over lists of (relevant in top k) / (relevant total). Each list holds
/// relevance flags in rank order; lists with no relevant item are skipped.
double recall_at_k(const std::vector<std::vector<bool>>& ranked_lists, std::size_t k);

/// 100 * (model - baseline) / |baseline|
double relative_gap(double model_value, double baseline_value);

using CurvePoint = std::pair<std::int64_t, double>;

/// Divides every value by the value at `reference_key`.
std::vector<CurvePoint> normalize_curve(std::span<const CurvePoint> values, std::int64_t reference_key);

}  // namespace brewrank::metrics
