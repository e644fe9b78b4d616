#include "nltrack/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace nltrack {

namespace {

void check_aligned(const PredictionList& preds,
                   const std::vector<GtEntry>& gts) {
  if (preds.size() != gts.size())
    throw EvalError("prediction/ground-truth length mismatch");
  bool any = false;
  for (const auto& g : gts) any = any || g.present;
  if (!any) throw EvalError("nothing to evaluate: no frames with present gt");
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / v.size();
}

}  // namespace

MetricCurve success_curve(const PredictionList& preds,
                          const std::vector<GtEntry>& gts) {
  check_aligned(preds, gts);
  std::vector<double> ious;
  for (std::size_t t = 0; t < gts.size(); ++t) {
    if (!gts[t].present) continue;
    ious.push_back(preds[t] ? iou(*preds[t], gts[t].box) : 0.0);
  }
  MetricCurve c;
  for (int i = 0; i <= 100; ++i) {
    const double tau = i / 100.0;
    int hits = 0;
    for (double v : ious)
      if (v > tau) ++hits;
    c.thresholds.push_back(tau);
    c.values.push_back(static_cast<double>(hits) / ious.size());
  }
  c.auc = mean(c.values);
  return c;
}

MetricCurve precision_curve(const PredictionList& preds,
                            const std::vector<GtEntry>& gts, bool normalized) {
  check_aligned(preds, gts);
  std::vector<double> errors;
  for (std::size_t t = 0; t < gts.size(); ++t) {
    if (!gts[t].present) continue;
    if (!preds[t]) {
      errors.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    const Box& p = *preds[t];
    const Box& g = gts[t].box;
    double dx = p.cx() - g.cx();
    double dy = p.cy() - g.cy();
    if (normalized) {
      dx /= g.width();
      dy /= g.height();
    }
    errors.push_back(std::hypot(dx, dy));
  }
  MetricCurve c;
  const int steps = 50;
  const double step = normalized ? 0.01 : 1.0;
  for (int i = 0; i <= steps; ++i) {
    const double theta = i * step;
    int hits = 0;
    for (double e : errors)
      if (e <= theta) ++hits;
    c.thresholds.push_back(theta);
    c.values.push_back(static_cast<double>(hits) / errors.size());
  }
  c.auc = mean(c.values);
  return c;
}

double curve_value_at(const MetricCurve& curve, double threshold) {
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    if (std::abs(curve.thresholds[i] - threshold) < 1e-12)
      return curve.values[i];
  throw EvalError("threshold not on the curve grid");
}

MetricCurve average_curves(const std::vector<MetricCurve>& curves) {
  if (curves.empty()) throw EvalError("nothing to evaluate: no curves");
  MetricCurve avg;
  avg.thresholds = curves[0].thresholds;
  avg.values.assign(avg.thresholds.size(), 0.0);
  for (const auto& c : curves) {
    if (c.thresholds.size() != avg.thresholds.size())
      throw EvalError("cannot average curves over different grids");
    for (std::size_t i = 0; i < c.values.size(); ++i)
      avg.values[i] += c.values[i] / curves.size();
  }
  avg.auc = mean(avg.values);
  return avg;
}

IouSeries iou_over_time(const PredictionList& preds,
                        const std::vector<GtEntry>& gts) {
  if (preds.size() != gts.size())
    throw EvalError("prediction/ground-truth length mismatch");
  IouSeries s;
  int span_start = -1;
  for (std::size_t t = 0; t < gts.size(); ++t) {
    if (gts[t].present) {
      s.iou.emplace_back(preds[t] ? iou(*preds[t], gts[t].box) : 0.0);
      if (span_start >= 0) {
        s.absent_spans.emplace_back(span_start, static_cast<int>(t) - 1);
        span_start = -1;
      }
    } else {
      s.iou.emplace_back(std::nullopt);
      if (span_start < 0) span_start = static_cast<int>(t);
    }
  }
  if (span_start >= 0)
    s.absent_spans.emplace_back(span_start, static_cast<int>(gts.size()) - 1);
  return s;
}

PredictionList read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open predictions: " + path.string());
  PredictionList out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
      line.pop_back();
    if (line.empty()) continue;
    if (line == "absent") {
      out.push_back(std::nullopt);
      continue;
    }
    double f[4];
    char c[3];
    std::istringstream is(line);
    is >> f[0] >> c[0] >> f[1] >> c[1] >> f[2] >> c[2] >> f[3];
    if (!is || c[0] != ',' || c[1] != ',' || c[2] != ',')
      throw EvalError("predictions line " + std::to_string(line_no) +
                      ": unparsable '" + line + "'");
    out.push_back(Box{f[0], f[1], f[2], f[3]});
  }
  return out;
}

void write_predictions(const PredictionList& preds,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write predictions: " + path.string());
  for (const auto& p : preds) {
    if (p)
      out << p->x1 << ',' << p->y1 << ',' << p->x2 << ',' << p->y2 << '\n';
    else
      out << "absent\n";
  }
}

void write_curve_csv(const MetricCurve& curve,
                     const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write curve: " + path.string());
  out << "threshold,value\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
    out << curve.thresholds[i] << ',' << curve.values[i] << '\n';
}

void write_summary(const std::vector<std::pair<std::string, double>>& entries,
                   const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot write summary: " + path.string());
  for (const auto& [key, value] : entries) out << key << ',' << value << '\n';
}

}  // namespace nltrack
