#pragma once

#include <cstddef>
#include <vector>

#include "duo/detection.hpp"
#include "duo/toy/scene.hpp"

namespace duo::toy {

struct Match {
  std::size_t detection = 0;
  std::size_t object = 0;
};

// Greedy matching, highest score first (ties by index): a detection matches
// the nearest unmatched object of the same class whose centre lies within
// half of that object's box diagonal.
std::vector<Match> match_detections(const std::vector<Detection>& dets, const std::vector<GtObject>& gt);

struct EvalRecord {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  double precision = 1.0;  // 1 when nothing was detected
  double recall = 0.0;
  double f1 = 0.0;
  double depth_mae = 0.0;       // over matched pairs
  double depth_rel_error = 0.0; // mean |z - z*| / z* over matched pairs
  double score_q25 = 0.0, score_q50 = 0.0, score_q75 = 0.0;
  double mean_entropy = 0.0;
  std::vector<double> mean_log_sigma;  // per head
  std::size_t detections = 0;
  bool no_detections = false;
};

EvalRecord evaluate(const std::vector<Detection>& dets, const std::vector<GtObject>& gt);

// Running totals over a stream of evaluated batches.
class EvalAccumulator {
 public:
  void add(const std::vector<Detection>& dets, const std::vector<GtObject>& gt);
  EvalRecord summary() const;

 private:
  std::size_t tp_ = 0, fp_ = 0, fn_ = 0;
  double abs_err_ = 0.0, rel_err_ = 0.0;
  std::vector<double> scores_;
  double entropy_sum_ = 0.0;
  std::vector<double> log_sigma_sum_;
  std::size_t dets_ = 0;
};

// Linear-interpolated quantile of an unsorted sample (0 for an empty one).
double quantile(std::vector<double> values, double q);

}  // namespace duo::toy
