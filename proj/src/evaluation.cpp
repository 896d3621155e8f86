#include <cmath>

#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/phantom_eval.hpp"

namespace dmseg {

namespace {

struct Moments {
  std::size_t n = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double v) {
    ++n;
    sum += v;
    sum_sq += v * v;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double sd() const {
    if (n < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) /
                                       static_cast<double>(n - 1)));
  }
};

void check_domains(const SurfaceSet& pred, const SurfaceSet& truth) {
  require(pred.cols == truth.cols && pred.slices == truth.slices, ErrorCode::Input,
          fmt::format("prediction grid {}x{} does not match truth grid {}x{}", pred.cols,
                      pred.slices, truth.cols, truth.slices));
}

SurfaceError summarize(std::size_t surface, const Moments& s, const Moments& u, std::size_t missing,
                       double axial_um) {
  SurfaceError e;
  e.surface = surface;
  e.samples = s.n;
  e.missing = missing;
  e.signed_mean_px = s.mean();
  e.signed_sd_px = s.sd();
  e.unsigned_mean_px = u.mean();
  e.unsigned_sd_px = u.sd();
  e.signed_mean_um = e.signed_mean_px * axial_um;
  e.signed_sd_um = e.signed_sd_px * axial_um;
  e.unsigned_mean_um = e.unsigned_mean_px * axial_um;
  e.unsigned_sd_um = e.unsigned_sd_px * axial_um;
  return e;
}

}  // namespace

ErrorReport border_errors(const SurfaceSet& pred, const SurfaceSet& truth, double axial_um) {
  check_domains(pred, truth);
  require(axial_um > 0.0, ErrorCode::Parameter, "axial spacing must be positive");
  ErrorReport report;
  report.axial_um = axial_um;
  Moments all_s, all_u;
  std::size_t all_missing = 0;
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (!truth.has(s) || !pred.has(s)) continue;
    Moments ms, mu;
    std::size_t missing = 0;
    const auto& t = truth.at(s).rows;
    const auto& p = pred.at(s).rows;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (std::isnan(t[i])) continue;
      if (std::isnan(p[i])) {
        ++missing;
        continue;
      }
      const double d = p[i] - t[i];
      ms.add(d);
      mu.add(std::abs(d));
      all_s.add(d);
      all_u.add(std::abs(d));
    }
    all_missing += missing;
    report.surfaces.push_back(summarize(s, ms, mu, missing, axial_um));
  }
  require(all_s.n > 0, ErrorCode::Input, "prediction and truth share no defined samples");
  report.overall = summarize(kSurfaceCount, all_s, all_u, all_missing, axial_um);
  report.thickness = thickness_errors(pred, truth, axial_um);
  return report;
}

std::vector<ThicknessError> thickness_errors(const SurfaceSet& pred, const SurfaceSet& truth,
                                             double axial_um) {
  check_domains(pred, truth);
  std::vector<ThicknessError> out;
  if (!pred.has(kS1) || !truth.has(kS1)) return out;
  const auto& p1 = pred.at(kS1).rows;
  const auto& t1 = truth.at(kS1).rows;
  for (std::size_t s = kS1 + 1; s < kSurfaceCount; ++s) {
    if (!truth.has(s) || !pred.has(s)) continue;
    const auto& p = pred.at(s).rows;
    const auto& t = truth.at(s).rows;
    Moments m;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (std::isnan(p[i]) || std::isnan(t[i]) || std::isnan(p1[i]) || std::isnan(t1[i])) continue;
      m.add(std::abs((p[i] - p1[i]) - (t[i] - t1[i])));
    }
    ThicknessError e;
    e.surface = s;
    e.samples = m.n;
    e.mean_px = m.mean();
    e.mean_um = e.mean_px * axial_um;
    out.push_back(e);
  }
  return out;
}

double mean_unsigned_px(const ErrorReport& report, const std::vector<std::size_t>& surfaces) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& e : report.surfaces) {
    for (std::size_t s : surfaces) {
      if (e.surface == s) {
        total += e.unsigned_mean_px * static_cast<double>(e.samples);
        n += e.samples;
      }
    }
  }
  return n ? total / static_cast<double>(n) : std::nan("");
}

}  // namespace dmseg
