#pragma once

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vfs3d/core/error.hpp"
#include "vfs3d/core/kv.hpp"

namespace vfs3d::harness {

/// counts[truth * K + pred].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {
    if (num_classes == 0) throw ConfigError("confusion matrix needs at least one class");
  }

  std::size_t num_classes() const { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

  void add(std::size_t truth, std::size_t pred) {
    if (truth >= k_ || pred >= k_) throw ShapeError("confusion matrix: class index out of range");
    ++counts_[truth * k_ + pred];
  }

  void add(std::span<const std::uint16_t> truth, std::span<const std::uint16_t> pred) {
    if (truth.size() != pred.size()) throw ShapeError("confusion matrix: label and prediction counts differ");
    for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
  }

  void merge(const ConfusionMatrix& o) {
    if (o.k_ != k_) throw ShapeError("confusion matrix: class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }

  double accuracy() const {
    std::uint64_t hit = 0;
    for (std::size_t k = 0; k < k_; ++k) hit += at(k, k);
    const auto t = total();
    return t ? static_cast<double>(hit) / static_cast<double>(t) : 0.0;
  }

  /// IoU per class; a class absent from both truth and prediction gets -1.
  std::vector<double> iou() const {
    std::vector<double> out(k_, -1.0);
    for (std::size_t k = 0; k < k_; ++k) {
      std::uint64_t fp = 0, fn = 0;
      for (std::size_t j = 0; j < k_; ++j) {
        if (j == k) continue;
        fp += at(j, k);
        fn += at(k, j);
      }
      const auto tp = at(k, k);
      const auto denom = tp + fp + fn;
      if (denom) out[k] = static_cast<double>(tp) / static_cast<double>(denom);
    }
    return out;
  }

  /// Mean IoU over classes with a defined IoU, as a fraction.
  double miou() const {
    double sum = 0;
    std::size_t n = 0;
    for (double v : iou())
      if (v >= 0) {
        sum += v;
        ++n;
      }
    return n ? sum / static_cast<double>(n) : 0.0;
  }

  double miou_percent() const { return 100.0 * miou(); }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0;
  double miou = 0;               // fraction
  std::vector<double> class_iou;  // -1 where undefined
};

inline std::string metrics_csv_header(std::size_t num_classes) {
  std::string s = "epoch,split,loss,miou";
  for (std::size_t k = 0; k < num_classes; ++k) s += ",iou_" + std::to_string(k);
  return s;
}

inline std::string metrics_csv_line(const EpochMetrics& m) {
  std::string s = std::to_string(m.epoch) + "," + m.split + "," + kv::format_double(m.loss) + "," +
                  kv::format_double(m.miou);
  for (double v : m.class_iou) s += "," + (v >= 0 ? kv::format_double(v) : std::string("nan"));
  return s;
}

/// Fixed-width table of per-class IoU (percent) and the mean.
inline void print_summary(std::ostream& os, const ConfusionMatrix& cm, std::span<const std::string> class_names = {}) {
  const auto iou = cm.iou();
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2);
  ss << std::left << std::setw(14) << "class" << std::right << std::setw(9) << "IoU %" << "\n";
  for (std::size_t k = 0; k < iou.size(); ++k) {
    const std::string name = k < class_names.size() ? class_names[k] : "class " + std::to_string(k);
    ss << std::left << std::setw(14) << name << std::right << std::setw(9);
    if (iou[k] >= 0)
      ss << 100.0 * iou[k];
    else
      ss << "-";
    ss << "\n";
  }
  ss << std::left << std::setw(14) << "mIoU" << std::right << std::setw(9) << cm.miou_percent() << "\n";
  ss << std::left << std::setw(14) << "accuracy" << std::right << std::setw(9) << 100.0 * cm.accuracy() << "\n";
  os << ss.str();
}

}  // namespace vfs3d::harness
