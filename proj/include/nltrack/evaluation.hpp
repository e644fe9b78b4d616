#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nltrack/data.hpp"
#include "nltrack/geometry.hpp"

namespace nltrack {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricCurve {
  std::vector<double> thresholds;
  std::vector<double> values;
  double auc = 0.0;
};

using PredictionList = std::vector<std::optional<Box>>;

// Fraction of present-gt frames with IoU strictly above each threshold in
// {0.00, 0.01, ..., 1.00}; AUC is the mean value.
MetricCurve success_curve(const PredictionList& preds,
                          const std::vector<GtEntry>& gts);

// Fraction of present-gt frames with center error <= threshold. Plain:
// pixel error, thresholds 0..50 step 1. Normalized: per-axis error scaled
// by the gt box dimensions, thresholds 0..0.5 step 0.01.
MetricCurve precision_curve(const PredictionList& preds,
                            const std::vector<GtEntry>& gts, bool normalized);

double curve_value_at(const MetricCurve& curve, double threshold);

MetricCurve average_curves(const std::vector<MetricCurve>& curves);

struct IouSeries {
  std::vector<std::optional<double>> iou;          // empty for absent frames
  std::vector<std::pair<int, int>> absent_spans;   // inclusive frame indices
};

IouSeries iou_over_time(const PredictionList& preds,
                        const std::vector<GtEntry>& gts);

// One "x1,y1,x2,y2" or "absent" line per frame.
PredictionList read_predictions(const std::filesystem::path& path);
void write_predictions(const PredictionList& preds,
                       const std::filesystem::path& path);

void write_curve_csv(const MetricCurve& curve,
                     const std::filesystem::path& path);
void write_summary(const std::vector<std::pair<std::string, double>>& entries,
                   const std::filesystem::path& path);

}  // namespace nltrack
