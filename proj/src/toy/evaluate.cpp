#include "duo/toy/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace duo::toy {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<Match> match_detections(const std::vector<Detection>& dets, const std::vector<GtObject>& gt) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<bool> taken(gt.size(), false);
  std::vector<Match> matches;
  for (std::size_t di : order) {
    const Detection& d = dets[di];
    std::size_t best = gt.size();
    double best_dist = INFINITY;
    for (std::size_t gi = 0; gi < gt.size(); ++gi) {
      if (taken[gi] || gt[gi].cls != d.cls) continue;
      const double dist =
          std::hypot(d.box.center_u() - gt[gi].box.center_u(), d.box.center_v() - gt[gi].box.center_v());
      if (dist <= 0.5 * gt[gi].box.diagonal() && dist < best_dist) {
        best = gi;
        best_dist = dist;
      }
    }
    if (best < gt.size()) {
      taken[best] = true;
      matches.push_back({di, best});
    }
  }
  return matches;
}

void EvalAccumulator::add(const std::vector<Detection>& dets, const std::vector<GtObject>& gt) {
  const auto matches = match_detections(dets, gt);
  tp_ += matches.size();
  fp_ += dets.size() - matches.size();
  fn_ += gt.size() - matches.size();
  for (const Match& m : matches) {
    const double err = std::abs(dets[m.detection].depth - gt[m.object].depth);
    abs_err_ += err;
    rel_err_ += err / gt[m.object].depth;
  }
  for (const Detection& d : dets) {
    scores_.push_back(d.score);
    entropy_sum_ += entropy(d.probs);
    if (log_sigma_sum_.size() < d.heads.sigma.size()) log_sigma_sum_.resize(d.heads.sigma.size(), 0.0);
    for (std::size_t k = 0; k < d.heads.sigma.size(); ++k) log_sigma_sum_[k] += std::log(d.heads.sigma[k]);
  }
  dets_ += dets.size();
}

EvalRecord EvalAccumulator::summary() const {
  EvalRecord r;
  r.true_positives = tp_;
  r.false_positives = fp_;
  r.false_negatives = fn_;
  r.detections = dets_;
  r.no_detections = dets_ == 0;
  r.precision = dets_ == 0 ? 1.0 : static_cast<double>(tp_) / static_cast<double>(tp_ + fp_);
  r.recall = tp_ + fn_ == 0 ? 0.0 : static_cast<double>(tp_) / static_cast<double>(tp_ + fn_);
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  if (tp_ > 0) {
    r.depth_mae = abs_err_ / static_cast<double>(tp_);
    r.depth_rel_error = rel_err_ / static_cast<double>(tp_);
  }
  r.score_q25 = quantile(scores_, 0.25);
  r.score_q50 = quantile(scores_, 0.50);
  r.score_q75 = quantile(scores_, 0.75);
  if (dets_ > 0) {
    r.mean_entropy = entropy_sum_ / static_cast<double>(dets_);
    for (double s : log_sigma_sum_) r.mean_log_sigma.push_back(s / static_cast<double>(dets_));
  }
  return r;
}

EvalRecord evaluate(const std::vector<Detection>& dets, const std::vector<GtObject>& gt) {
  EvalAccumulator acc;
  acc.add(dets, gt);
  return acc.summary();
}

}  // namespace duo::toy
