#include "brewrank/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "brewrank/error.hpp"

namespace brewrank::metrics {

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw Error(ErrorKind::InvalidArgument, "auc: scores and labels differ in length");
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorKind::InvalidArgument, "auc: labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw Error(ErrorKind::InvalidArgument, "auc: scores must be finite");
    n_pos += static_cast<std::size_t>(labels[i]);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw Error(ErrorKind::InvalidArgument, "auc: need at least one positive and one negative label");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum, kept integral: a tie block spanning ranks
  // [i+1, j] has midrank (i+1+j)/2.
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    std::uint64_t positives = 0;
    for (std::size_t k = i; k < j; ++k) positives += static_cast<std::uint64_t>(labels[order[k]]);
    rank_sum_x2 += positives * (i + 1 + j);
    i = j;
  }
  const double u = static_cast<double>(rank_sum_x2) / 2.0 - static_cast<double>(n_pos) * (n_pos + 1) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double recall_at_k(const std::vector<std::vector<bool>>& ranked_lists, std::size_t k) {
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "recall_at_k: k must be >= 1");
  double sum = 0;
  std::size_t counted = 0;
  for (const auto& list : ranked_lists) {
    if (list.empty()) throw Error(ErrorKind::InvalidArgument, "recall_at_k: empty list");
    const auto total = std::count(list.begin(), list.end(), true);
    if (total == 0) continue;
    const auto top = std::count(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(std::min(k, list.size())), true);
    sum += static_cast<double>(top) / static_cast<double>(total);
    ++counted;
  }
  if (counted == 0) throw Error(ErrorKind::InvalidArgument, "recall_at_k: no list has a relevant item");
  return sum / static_cast<double>(counted);
}

double relative_gap(double model_value, double baseline_value) {
  if (baseline_value == 0) throw Error(ErrorKind::InvalidArgument, "relative_gap: baseline is zero");
  return 100.0 * (model_value - baseline_value) / std::abs(baseline_value);
}

std::vector<CurvePoint> normalize_curve(std::span<const CurvePoint> values, std::int64_t reference_key) {
  auto ref = std::find_if(values.begin(), values.end(), [&](const auto& p) { return p.first == reference_key; });
  if (ref == values.end())
    throw Error(ErrorKind::InvalidArgument, "normalize_curve: reference " + std::to_string(reference_key) + " missing");
  const double base = ref->second;
  if (base == 0) throw Error(ErrorKind::InvalidArgument, "normalize_curve: reference value is zero");
  std::vector<CurvePoint> out;
  out.reserve(values.size());
  for (const auto& [key, value] : values) out.emplace_back(key, key == reference_key ? 1.0 : value / base);
  return out;
}

}  // namespace brewrank::metrics
