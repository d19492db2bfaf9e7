#include "attnseg/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "attnseg/error.hpp"

namespace attnseg {

ConfusionAccumulator::ConfusionAccumulator(std::vector<int> classes, int ignore_id)
    : classes_(std::move(classes)), ignore_id_(ignore_id) {
  if (classes_.empty()) throw ValidationError("miou: class list is empty");
  std::sort(classes_.begin(), classes_.end());
  classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
  if (classes_.front() < 0 || classes_.back() > 255) throw ValidationError("miou: class ids must be in [0, 255]");
  if (std::binary_search(classes_.begin(), classes_.end(), ignore_id_)) {
    throw ValidationError("miou: ignore id " + std::to_string(ignore_id_) + " is also a class");
  }
  dim_ = static_cast<std::size_t>(classes_.back()) + 1;
  declared_.assign(dim_, 0);
  for (int c : classes_) declared_[c] = 1;
  counts_.assign(dim_ * dim_, 0);
}

void ConfusionAccumulator::add(const LabelMask& pred, const LabelMask& gt) {
  if (pred.width != gt.width || pred.height != gt.height || pred.labels.size() != gt.labels.size()) {
    throw ValidationError("miou: prediction and ground truth dimensions differ");
  }
  for (std::size_t p = 0; p < gt.labels.size(); ++p) {
    const int g = gt.labels[p];
    if (g == ignore_id_) {
      ++ignored_;
      continue;
    }
    const int q = pred.labels[p];
    if (static_cast<std::size_t>(g) >= dim_ || !declared_[g]) {
      throw ValidationError("miou: ground-truth label " + std::to_string(g) + " is not a declared class");
    }
    if (static_cast<std::size_t>(q) >= dim_ || !declared_[q]) {
      throw ValidationError("miou: predicted label " + std::to_string(q) + " is not a declared class");
    }
    ++counts_[static_cast<std::size_t>(g) * dim_ + q];
  }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.classes_ != classes_ || other.ignore_id_ != ignore_id_) {
    throw ValidationError("miou: cannot merge accumulators over different class sets");
  }
  for (std::size_t k = 0; k < counts_.size(); ++k) counts_[k] += other.counts_[k];
  ignored_ += other.ignored_;
}

std::uint64_t ConfusionAccumulator::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

EvalReport report_from(const ConfusionAccumulator& acc) {
  EvalReport r;
  r.classes = acc.classes();
  const std::size_t dim = acc.dim();
  r.confusion.assign(dim, std::vector<std::uint64_t>(dim, 0));
  r.gt_pixels.assign(dim, 0);
  r.pred_pixels.assign(dim, 0);
  for (std::size_t g = 0; g < dim; ++g) {
    for (std::size_t q = 0; q < dim; ++q) {
      const auto v = acc.at(static_cast<int>(g), static_cast<int>(q));
      r.confusion[g][q] = v;
      r.gt_pixels[g] += v;
      r.pred_pixels[q] += v;
    }
  }
  r.total_pixels = acc.total();
  r.ignored_pixels = acc.ignored();

  double sum = 0.0, fg_sum = 0.0;
  std::size_t n = 0, fg_n = 0;
  for (int c : r.classes) {
    const auto tp = r.confusion[c][c];
    const auto fn = r.gt_pixels[c] - tp;
    const auto fp = r.pred_pixels[c] - tp;
    const auto denom = tp + fp + fn;
    if (denom == 0) {
      r.undefined_classes.push_back(c);
      continue;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class_iou[c] = iou;
    sum += iou;
    ++n;
    if (c != 0) {
      fg_sum += iou;
      ++fg_n;
    }
  }
  r.miou = n ? sum / static_cast<double>(n) : 0.0;
  if (std::binary_search(r.classes.begin(), r.classes.end(), 0) && fg_n > 0) {
    r.miou_foreground = fg_sum / static_cast<double>(fg_n);
  }
  return r;
}

EvalReport miou(std::span<const LabelMask> preds, std::span<const LabelMask> gts, const std::vector<int>& classes,
                int ignore_id) {
  if (preds.size() != gts.size()) throw ValidationError("miou: prediction and ground-truth counts differ");
  ConfusionAccumulator acc(classes, ignore_id);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], gts[i]);
  return report_from(acc);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["classes"] = classes;
  nlohmann::json ious = nlohmann::json::object();
  for (const auto& [c, v] : per_class_iou) ious[std::to_string(c)] = v;
  j["per_class_iou"] = ious;
  j["undefined_classes"] = undefined_classes;
  j["miou"] = miou;
  j["miou_foreground"] = miou_foreground ? nlohmann::json(*miou_foreground) : nlohmann::json(nullptr);
  if (bf_acc) j["bf_acc"] = *bf_acc;
  if (af_acc) j["af_acc"] = *af_acc;
  j["confusion"] = confusion;
  j["gt_pixels"] = gt_pixels;
  j["pred_pixels"] = pred_pixels;
  j["total_pixels"] = total_pixels;
  j["ignored_pixels"] = ignored_pixels;
  return j;
}

std::string EvalReport::table(const std::map<int, std::string>& names) const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << std::left;
  if (!classes.empty()) os << std::setw(20) << "class" << "IoU\n";
  for (int c : classes) {
    const auto name = names.count(c) ? names.at(c) : std::to_string(c);
    os << std::setw(20) << name;
    const auto it = per_class_iou.find(c);
    if (it == per_class_iou.end()) {
      os << "undefined\n";
    } else {
      os << it->second << "\n";
    }
  }
  if (!classes.empty()) os << std::setw(20) << "mIoU (all)" << miou << "\n";
  if (miou_foreground) os << std::setw(20) << "mIoU (no bg)" << *miou_foreground << "\n";
  if (bf_acc) os << std::setw(20) << "bf_acc" << *bf_acc << "\n";
  if (af_acc) os << std::setw(20) << "af_acc" << *af_acc << "\n";
  if (!classes.empty()) os << std::setw(20) << "pixels" << total_pixels << " (ignored " << ignored_pixels << ")\n";
  return os.str();
}

InstanceAccuracy instance_accuracy(std::span<const AssignmentResult> greedy,
                                   std::span<const AssignmentResult> hungarian,
                                   std::span<const std::vector<int>> gt_segments) {
  if (greedy.empty()) throw ValidationError("instance_accuracy: no scenes");
  if (greedy.size() != hungarian.size() || greedy.size() != gt_segments.size()) {
    throw ValidationError("instance_accuracy: scene counts differ between modes and ground truth");
  }
  auto hit = [](const InstanceAssignment& a, int truth) {
    return std::find(a.segments.begin(), a.segments.end(), truth) != a.segments.end();
  };
  InstanceAccuracy acc;
  for (std::size_t s = 0; s < greedy.size(); ++s) {
    const auto& gt = gt_segments[s];
    const auto& g = greedy[s].instances;
    const auto& h = hungarian[s].instances;
    if (g.size() != h.size()) throw ValidationError("instance_accuracy: modes disagree on instance count");
    if (gt.size() < g.size()) {
      throw ValidationError("instance_accuracy: missing ground truth for instance " + std::to_string(gt.size()) +
                            " of scene " + std::to_string(s));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      acc.bf_hits += hit(g[i], gt[i]) ? 1 : 0;
      acc.af_hits += hit(h[i], gt[i]) ? 1 : 0;
    }
    acc.instances += g.size();
  }
  if (acc.instances == 0) throw ValidationError("instance_accuracy: no instances");
  acc.bf_acc = static_cast<double>(acc.bf_hits) / static_cast<double>(acc.instances);
  acc.af_acc = static_cast<double>(acc.af_hits) / static_cast<double>(acc.instances);
  return acc;
}

}  // namespace attnseg
