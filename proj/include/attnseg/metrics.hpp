#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnseg/instance_assign.hpp"
#include "attnseg/types.hpp"

namespace attnseg {

/// Dataset-global confusion counts, rows = ground truth, cols = prediction,
/// both indexed by class id in [0, max class]. Merging is associative and
/// commutative, so partial sums may be combined in any grouping.
class ConfusionAccumulator {
 public:
  ConfusionAccumulator(std::vector<int> classes, int ignore_id);

  void add(const LabelMask& pred, const LabelMask& gt);
  void merge(const ConfusionAccumulator& other);

  const std::vector<int>& classes() const { return classes_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t at(int gt, int pred) const { return counts_[static_cast<std::size_t>(gt) * dim_ + pred]; }
  std::uint64_t ignored() const { return ignored_; }
  std::uint64_t total() const;
  int ignore_id() const { return ignore_id_; }

 private:
  std::vector<int> classes_;
  std::vector<std::uint8_t> declared_;
  int ignore_id_;
  std::size_t dim_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t ignored_ = 0;
};

struct EvalReport {
  std::vector<int> classes;
  std::map<int, double> per_class_iou;  // only classes with a defined IoU
  std::vector<int> undefined_classes;   // absent from both pred and GT
  double miou = 0.0;
  std::optional<double> miou_foreground;  // class 0 excluded
  std::optional<double> bf_acc;
  std::optional<double> af_acc;
  std::vector<std::vector<std::uint64_t>> confusion;
  std::vector<std::uint64_t> gt_pixels;
  std::vector<std::uint64_t> pred_pixels;
  std::uint64_t total_pixels = 0;
  std::uint64_t ignored_pixels = 0;

  nlohmann::json to_json() const;
  std::string table(const std::map<int, std::string>& names = {}) const;
};

EvalReport report_from(const ConfusionAccumulator& acc);

EvalReport miou(std::span<const LabelMask> preds, std::span<const LabelMask> gts, const std::vector<int>& classes,
                int ignore_id = 255);

struct InstanceAccuracy {
  double bf_acc = 0.0;
  double af_acc = 0.0;
  std::size_t instances = 0;
  std::size_t bf_hits = 0;
  std::size_t af_hits = 0;
};

/// Per scene: greedy result, hungarian result, and the true segment of each
/// instance.
InstanceAccuracy instance_accuracy(std::span<const AssignmentResult> greedy,
                                   std::span<const AssignmentResult> hungarian,
                                   std::span<const std::vector<int>> gt_segments);

}  // namespace attnseg
