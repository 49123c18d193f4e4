#pragma once

// IoU / mIoU over class rasters, with a dataset-level count accumulator.

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevseg/losses.hpp"

namespace bevseg {

struct IouCounts {
    std::uint64_t intersection = 0;
    std::uint64_t uni = 0;
    std::uint64_t predicted = 0;
    std::uint64_t target = 0;

    // 1 when both masks are empty.
    double iou() const { return uni == 0 ? 1.0 : static_cast<double>(intersection) / static_cast<double>(uni); }

    IouCounts& operator+=(const IouCounts& o) {
        intersection += o.intersection;
        uni += o.uni;
        predicted += o.predicted;
        target += o.target;
        return *this;
    }
};

namespace detail {

inline void check_same_dims(const ClassRaster& a, const ClassRaster& b) {
    if (a.height != b.height || a.width != b.width)
        throw DimensionError("iou: raster dims " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                             std::to_string(b.height) + "x" + std::to_string(b.width));
}

template <typename Pred>
IouCounts count_masks(const ClassRaster& pred, const ClassRaster& gt, Pred in_mask) {
    check_same_dims(pred, gt);
    IouCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = in_mask(pred.ids[i]), g = in_mask(gt.ids[i]);
        c.intersection += p && g;
        c.uni += p || g;
        c.predicted += p;
        c.target += g;
    }
    return c;
}

}  // namespace detail

inline IouCounts iou_counts(const ClassRaster& pred, const ClassRaster& gt, std::uint8_t class_id) {
    return detail::count_masks(pred, gt, [class_id](std::uint8_t v) { return v == class_id; });
}

// Binary masks formed by the union of `class_ids`.
inline IouCounts merged_iou_counts(const ClassRaster& pred, const ClassRaster& gt,
                                   const std::vector<std::uint8_t>& class_ids) {
    return detail::count_masks(pred, gt, [&](std::uint8_t v) {
        for (auto id : class_ids)
            if (v == id) return true;
        return false;
    });
}

inline double iou(const ClassRaster& pred, const ClassRaster& gt, std::uint8_t class_id) {
    return iou_counts(pred, gt, class_id).iou();
}

inline double miou(const ClassRaster& pred, const ClassRaster& gt, const std::vector<std::uint8_t>& class_ids) {
    if (class_ids.empty()) throw std::invalid_argument("miou: empty class list");
    double s = 0;
    for (auto id : class_ids) s += iou(pred, gt, id);
    return s / static_cast<double>(class_ids.size());
}

struct ClassMetric {
    std::string name;
    IouCounts counts;
    double iou = 0;
};

struct MetricReport {
    std::vector<ClassMetric> classes;  // every class, background included
    IouCounts all_merged_counts;
    double all_merged = 0;  // IoU of the union of structure classes
    double all_mean = 0;    // mean of structure-class IoUs
    double miou = 0;        // mean over structure classes (same set as all_mean)
    std::size_t samples = 0;
    std::uint64_t pixels = 0;

    // flat "key = value" lines
    std::string to_key_values() const {
        std::ostringstream o;
        o << std::setprecision(10);
        o << "samples = " << samples << "\n";
        o << "pixels = " << pixels << "\n";
        for (const auto& c : classes) o << "iou." << c.name << " = " << c.iou << "\n";
        o << "iou.all_merged = " << all_merged << "\n";
        o << "iou.all_mean = " << all_mean << "\n";
        o << "miou = " << miou << "\n";
        return o.str();
    }

    // one row per class: name, intersection, union, IoU
    std::string to_table() const {
        std::ostringstream o;
        o << std::setprecision(10);
        o << "name,intersection,union,iou\n";
        for (const auto& c : classes)
            o << c.name << "," << c.counts.intersection << "," << c.counts.uni << "," << c.iou << "\n";
        o << "All (merged)," << all_merged_counts.intersection << "," << all_merged_counts.uni << "," << all_merged
          << "\n";
        o << "All (mean),,," << all_mean << "\n";
        return o.str();
    }
};

// Dataset-level accumulation: counts are summed over samples before dividing.
// Per-sample averaging is available for comparison.
class MetricAccumulator {
public:
    MetricAccumulator(std::vector<std::string> class_names, std::vector<std::uint8_t> structure_classes)
        : names_(std::move(class_names)), structure_(std::move(structure_classes)), per_class_(names_.size()) {
        if (names_.empty()) throw std::invalid_argument("metrics: no classes");
        if (structure_.empty()) throw std::invalid_argument("metrics: empty structure class list");
        for (auto id : structure_)
            if (id >= names_.size()) throw std::invalid_argument("metrics: structure class out of range");
    }

    void add(const ClassRaster& pred, const ClassRaster& gt) {
        for (std::size_t k = 0; k < names_.size(); ++k) per_class_[k] += iou_counts(pred, gt, static_cast<std::uint8_t>(k));
        const auto merged = merged_iou_counts(pred, gt, structure_);
        merged_ += merged;
        double mean = 0;
        for (auto id : structure_) mean += iou(pred, gt, id);
        sample_merged_sum_ += merged.iou();
        sample_mean_sum_ += mean / static_cast<double>(structure_.size());
        ++samples_;
        pixels_ += pred.size();
    }

    void merge(const MetricAccumulator& o) {
        for (std::size_t k = 0; k < per_class_.size(); ++k) per_class_[k] += o.per_class_[k];
        merged_ += o.merged_;
        sample_merged_sum_ += o.sample_merged_sum_;
        sample_mean_sum_ += o.sample_mean_sum_;
        samples_ += o.samples_;
        pixels_ += o.pixels_;
    }

    MetricReport report() const {
        MetricReport r;
        for (std::size_t k = 0; k < names_.size(); ++k) r.classes.push_back({names_[k], per_class_[k], per_class_[k].iou()});
        r.all_merged_counts = merged_;
        r.all_merged = merged_.iou();
        double s = 0;
        for (auto id : structure_) s += per_class_[id].iou();
        r.all_mean = s / static_cast<double>(structure_.size());
        r.miou = r.all_mean;
        r.samples = samples_;
        r.pixels = pixels_;
        return r;
    }

    // Averages of per-sample values instead of pooled counts.
    double per_sample_merged() const { return samples_ ? sample_merged_sum_ / static_cast<double>(samples_) : 0.0; }
    double per_sample_mean() const { return samples_ ? sample_mean_sum_ / static_cast<double>(samples_) : 0.0; }

private:
    std::vector<std::string> names_;
    std::vector<std::uint8_t> structure_;
    std::vector<IouCounts> per_class_;
    IouCounts merged_;
    double sample_merged_sum_ = 0, sample_mean_sum_ = 0;
    std::size_t samples_ = 0;
    std::uint64_t pixels_ = 0;
};

}  // namespace bevseg
