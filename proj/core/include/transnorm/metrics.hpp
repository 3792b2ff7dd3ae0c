#pragma once

#include <optional>
#include <string>
#include <vector>

#include "transnorm/tensor.hpp"

namespace tn {

/// Class-id raster, row-major.
struct LabelMask {
  int h = 0, w = 0;
  std::vector<int> v;
};

LabelMask mask_from_tensor(const Tensor& t);  // [H,W] of integral values

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  long long total() const { return tp + tn + fp + fn; }
};

/// Unset optionals mark metrics whose denominator was zero (never silently
/// reported as 0 or 1) or, for hd, an empty mask.
struct MetricValues {
  std::optional<double> acc, se, sp, f1, miou, dsc, hd;
};

struct ClassReport {
  int cls = 0;
  bool present = false;  // class appears in prediction or ground truth
  ConfusionCounts counts;
  MetricValues m;
};

struct MetricCounts {
  int acc = 0, se = 0, sp = 0, f1 = 0, miou = 0, dsc = 0, hd = 0;
};

/// Per-class rows for every class id plus per-metric means over the
/// foreground classes (class 0 excluded) that are present and defined.
struct MetricReport {
  std::vector<ClassReport> per_class;
  MetricValues mean;
  MetricCounts defined;  // how many classes entered each mean
};

/// Pixel tallies of a binary prediction against binary truth (nonzero =
/// positive). Shapes must match.
ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth);

/// ACC=(TP+TN)/total, SP=TN/(TN+FP), SE=TP/(TP+FN), F1=DSC=2TP/(2TP+FP+FN),
/// mIoU=TP/(TP+FP+FN). hd is left unset.
MetricValues ratios(const ConfusionCounts& c);

/// Symmetric Hausdorff distance (pixels) between mask boundaries; boundary =
/// foreground pixel with a background 4-neighbor (image border counts as
/// background). `percentile` switches to the nearest-rank percentile of the
/// pooled directed distances (e.g. 95 for HD95). Unset if either mask is
/// empty.
std::optional<double> hausdorff(const LabelMask& pred, const LabelMask& truth,
                                std::optional<double> percentile = {});

/// One-vs-rest evaluation per class. Classes absent from both masks are
/// flagged not-present and excluded from the means; the mean row covers
/// foreground classes only.
MetricReport multiclass_report(const LabelMask& pred, const LabelMask& truth,
                               int num_classes, std::optional<double> hd_percentile = {});

/// Dataset-level report: confusion counts are summed over image pairs
/// (micro-average); hd is averaged over images where defined.
MetricReport aggregate_report(const std::vector<std::pair<LabelMask, LabelMask>>& pairs,
                              int num_classes, std::optional<double> hd_percentile = {});

/// Fixed column order: class,acc,se,sp,f1,miou,dsc,hd. One row per class plus
/// a mean row. Undefined values render as "nan" in CSV and null in JSON.
std::string report_csv(const MetricReport& report);
std::string report_json(const MetricReport& report);

}  // namespace tn
