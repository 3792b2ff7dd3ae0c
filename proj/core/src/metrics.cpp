#include "transnorm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace tn {

LabelMask mask_from_tensor(const Tensor& t) {
  if (t.rank() != 2)
    throw DimensionError("mask_from_tensor: expected [H,W], got " + shape_str(t.shape()));
  LabelMask m;
  m.h = t.shape()[0];
  m.w = t.shape()[1];
  m.v.resize(t.numel());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double v = t.data()[i];
    if (v != std::floor(v) || v < 0.0)
      throw ContractError("mask_from_tensor: non-integral or negative label " +
                          std::to_string(v));
    m.v[i] = static_cast<int>(v);
  }
  return m;
}

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw DimensionError("confusion: mask sizes differ, " + std::to_string(pred.h) + "x" +
                         std::to_string(pred.w) + " vs " + std::to_string(truth.h) + "x" +
                         std::to_string(truth.w));
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    bool p = pred.v[i] != 0, t = truth.v[i] != 0;
    if (p && t)
      ++c.tp;
    else if (!p && !t)
      ++c.tn;
    else if (p && !t)
      ++c.fp;
    else
      ++c.fn;
  }
  return c;
}

namespace {
std::optional<double> safe_ratio(long long num, long long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

MetricValues ratios(const ConfusionCounts& c) {
  MetricValues m;
  m.acc = safe_ratio(c.tp + c.tn, c.total());
  m.sp = safe_ratio(c.tn, c.tn + c.fp);
  m.se = safe_ratio(c.tp, c.tp + c.fn);
  m.f1 = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.miou = safe_ratio(c.tp, c.tp + c.fp + c.fn);
  m.dsc = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

// ---- hausdorff -------------------------------------------------------------

namespace {

std::vector<std::pair<int, int>> boundary_pixels(const LabelMask& m) {
  std::vector<std::pair<int, int>> out;
  auto fg = [&](int i, int j) {
    return i >= 0 && i < m.h && j >= 0 && j < m.w &&
           m.v[static_cast<std::size_t>(i) * m.w + j] != 0;
  };
  for (int i = 0; i < m.h; ++i)
    for (int j = 0; j < m.w; ++j)
      if (fg(i, j) &&
          (!fg(i - 1, j) || !fg(i + 1, j) || !fg(i, j - 1) || !fg(i, j + 1)))
        out.emplace_back(i, j);
  return out;
}

constexpr double kInf = 1e20;

// 1-d squared-distance transform (lower envelope of parabolas).
void dt1d(const std::vector<double>& f, int n, std::vector<double>& d,
          std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + static_cast<double>(q) * q) -
                (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
               (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + static_cast<double>(q) * q) -
           (f[v[k]] + static_cast<double>(v[k]) * v[k])) /
          (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance to the given sites over an h x w grid.
std::vector<double> edt_squared(int h, int w,
                                const std::vector<std::pair<int, int>>& sites) {
  std::vector<double> field(static_cast<std::size_t>(h) * w, kInf);
  for (auto [i, j] : sites) field[static_cast<std::size_t>(i) * w + j] = 0.0;
  // rows
  {
    std::vector<double> f(w), d(w), z(w + 1);
    std::vector<int> v(w);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) f[j] = field[static_cast<std::size_t>(i) * w + j];
      dt1d(f, w, d, v, z);
      for (int j = 0; j < w; ++j) field[static_cast<std::size_t>(i) * w + j] = d[j];
    }
  }
  // columns
  {
    std::vector<double> f(h), d(h), z(h + 1);
    std::vector<int> v(h);
    for (int j = 0; j < w; ++j) {
      for (int i = 0; i < h; ++i) f[i] = field[static_cast<std::size_t>(i) * w + j];
      dt1d(f, h, d, v, z);
      for (int i = 0; i < h; ++i) field[static_cast<std::size_t>(i) * w + j] = d[i];
    }
  }
  return field;
}

std::vector<double> directed_sq_distances(const std::vector<std::pair<int, int>>& from,
                                          const std::vector<double>& to_field, int w) {
  std::vector<double> out;
  out.reserve(from.size());
  for (auto [i, j] : from) out.push_back(to_field[static_cast<std::size_t>(i) * w + j]);
  return out;
}

}  // namespace

std::optional<double> hausdorff(const LabelMask& pred, const LabelMask& truth,
                                std::optional<double> percentile) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw DimensionError("hausdorff: mask sizes differ");
  auto bp = boundary_pixels(pred);
  auto bt = boundary_pixels(truth);
  if (bp.empty() || bt.empty()) return std::nullopt;

  auto field_t = edt_squared(pred.h, pred.w, bt);
  auto field_p = edt_squared(pred.h, pred.w, bp);
  auto d_pt = directed_sq_distances(bp, field_t, pred.w);
  auto d_tp = directed_sq_distances(bt, field_p, pred.w);

  if (!percentile) {
    double m = 0.0;
    for (double d : d_pt) m = std::max(m, d);
    for (double d : d_tp) m = std::max(m, d);
    return std::sqrt(m);
  }
  double p = *percentile;
  if (p <= 0.0 || p > 100.0)
    throw ContractError("hausdorff: percentile must be in (0,100]");
  std::vector<double> pooled;
  pooled.reserve(d_pt.size() + d_tp.size());
  pooled.insert(pooled.end(), d_pt.begin(), d_pt.end());
  pooled.insert(pooled.end(), d_tp.begin(), d_tp.end());
  std::sort(pooled.begin(), pooled.end());
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(pooled.size())));
  rank = std::min(std::max<std::size_t>(rank, 1), pooled.size());
  return std::sqrt(pooled[rank - 1]);
}

// ---- reports ----------------------------------------------------------------

namespace {
LabelMask binarize(const LabelMask& m, int cls) {
  LabelMask b{m.h, m.w, std::vector<int>(m.v.size())};
  for (std::size_t i = 0; i < m.v.size(); ++i) b.v[i] = m.v[i] == cls ? 1 : 0;
  return b;
}

void finish_means(MetricReport& rep) {
  auto fold = [&](auto field, int& count) -> std::optional<double> {
    double total = 0.0;
    count = 0;
    for (const auto& cr : rep.per_class) {
      if (cr.cls == 0 || !cr.present) continue;
      const std::optional<double>& v = cr.m.*field;
      if (v) {
        total += *v;
        ++count;
      }
    }
    if (count == 0) return std::nullopt;
    return total / count;
  };
  rep.mean.acc = fold(&MetricValues::acc, rep.defined.acc);
  rep.mean.se = fold(&MetricValues::se, rep.defined.se);
  rep.mean.sp = fold(&MetricValues::sp, rep.defined.sp);
  rep.mean.f1 = fold(&MetricValues::f1, rep.defined.f1);
  rep.mean.miou = fold(&MetricValues::miou, rep.defined.miou);
  rep.mean.dsc = fold(&MetricValues::dsc, rep.defined.dsc);
  rep.mean.hd = fold(&MetricValues::hd, rep.defined.hd);
}
}  // namespace

MetricReport multiclass_report(const LabelMask& pred, const LabelMask& truth,
                               int num_classes, std::optional<double> hd_percentile) {
  if (num_classes < 2) throw ContractError("multiclass_report: need at least 2 classes");
  for (int x : pred.v)
    if (x >= num_classes)
      throw ContractError("multiclass_report: prediction label " + std::to_string(x) +
                          " >= num_classes " + std::to_string(num_classes));
  for (int x : truth.v)
    if (x >= num_classes)
      throw ContractError("multiclass_report: truth label " + std::to_string(x) +
                          " >= num_classes " + std::to_string(num_classes));
  MetricReport rep;
  for (int cls = 0; cls < num_classes; ++cls) {
    ClassReport cr;
    cr.cls = cls;
    LabelMask bp = binarize(pred, cls), bt = binarize(truth, cls);
    bool in_pred = std::find(bp.v.begin(), bp.v.end(), 1) != bp.v.end();
    bool in_truth = std::find(bt.v.begin(), bt.v.end(), 1) != bt.v.end();
    cr.present = in_pred || in_truth;
    cr.counts = confusion(bp, bt);
    cr.m = ratios(cr.counts);
    cr.m.hd = hausdorff(bp, bt, hd_percentile);
    rep.per_class.push_back(std::move(cr));
  }
  finish_means(rep);
  return rep;
}

MetricReport aggregate_report(const std::vector<std::pair<LabelMask, LabelMask>>& pairs,
                              int num_classes, std::optional<double> hd_percentile) {
  if (pairs.empty()) throw ContractError("aggregate_report: no image pairs");
  MetricReport rep;
  rep.per_class.resize(num_classes);
  std::vector<double> hd_sum(num_classes, 0.0);
  std::vector<int> hd_n(num_classes, 0);
  for (int cls = 0; cls < num_classes; ++cls) rep.per_class[cls].cls = cls;
  for (const auto& [pred, truth] : pairs) {
    for (int x : pred.v)
      if (x >= num_classes)
        throw ContractError("aggregate_report: label " + std::to_string(x) +
                            " >= num_classes");
    for (int x : truth.v)
      if (x >= num_classes)
        throw ContractError("aggregate_report: label " + std::to_string(x) +
                            " >= num_classes");
    for (int cls = 0; cls < num_classes; ++cls) {
      LabelMask bp = binarize(pred, cls), bt = binarize(truth, cls);
      ConfusionCounts c = confusion(bp, bt);
      auto& agg = rep.per_class[cls];
      agg.counts.tp += c.tp;
      agg.counts.tn += c.tn;
      agg.counts.fp += c.fp;
      agg.counts.fn += c.fn;
      if (c.tp + c.fp + c.fn > 0) agg.present = true;
      if (auto hd = hausdorff(bp, bt, hd_percentile)) {
        hd_sum[cls] += *hd;
        hd_n[cls] += 1;
      }
    }
  }
  for (int cls = 0; cls < num_classes; ++cls) {
    auto& agg = rep.per_class[cls];
    agg.m = ratios(agg.counts);
    if (hd_n[cls] > 0) agg.m.hd = hd_sum[cls] / hd_n[cls];
  }
  finish_means(rep);
  return rep;
}

namespace {
std::string fmt(const std::optional<double>& v) {
  if (!v) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", *v);
  return buf;
}
void csv_row(std::ostringstream& os, const std::string& label, const MetricValues& m) {
  os << label << ',' << fmt(m.acc) << ',' << fmt(m.se) << ',' << fmt(m.sp) << ','
     << fmt(m.f1) << ',' << fmt(m.miou) << ',' << fmt(m.dsc) << ',' << fmt(m.hd) << '\n';
}
nlohmann::json json_values(const MetricValues& m) {
  auto put = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"acc", put(m.acc)}, {"se", put(m.se)},     {"sp", put(m.sp)},
          {"f1", put(m.f1)},   {"miou", put(m.miou)}, {"dsc", put(m.dsc)},
          {"hd", put(m.hd)}};
}
}  // namespace

std::string report_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "class,acc,se,sp,f1,miou,dsc,hd\n";
  for (const auto& cr : report.per_class) csv_row(os, std::to_string(cr.cls), cr.m);
  csv_row(os, "mean", report.mean);
  return os.str();
}

std::string report_json(const MetricReport& report) {
  nlohmann::json j;
  j["columns"] = {"class", "acc", "se", "sp", "f1", "miou", "dsc", "hd"};
  j["classes"] = nlohmann::json::array();
  for (const auto& cr : report.per_class) {
    nlohmann::json c = json_values(cr.m);
    c["class"] = cr.cls;
    c["present"] = cr.present;
    c["counts"] = {{"tp", cr.counts.tp},
                   {"tn", cr.counts.tn},
                   {"fp", cr.counts.fp},
                   {"fn", cr.counts.fn}};
    j["classes"].push_back(c);
  }
  j["mean"] = json_values(report.mean);
  j["mean_defined_classes"] = {{"acc", report.defined.acc},   {"se", report.defined.se},
                               {"sp", report.defined.sp},     {"f1", report.defined.f1},
                               {"miou", report.defined.miou}, {"dsc", report.defined.dsc},
                               {"hd", report.defined.hd}};
  return j.dump(2);
}

}  // namespace tn
