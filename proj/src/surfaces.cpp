#include "dmseg/surfaces.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "dmseg/error.hpp"

namespace dmseg {

std::optional<std::size_t> surface_index(std::string_view id) {
  for (std::size_t i = 0; i < kSurfaceCount; ++i) {
    if (kSurfaceIds[i] == id) return i;
  }
  return std::nullopt;
}

std::string_view surface_id(std::size_t index) {
  require(index < kSurfaceCount, ErrorCode::Parameter, fmt::format("surface index {}", index));
  return kSurfaceIds[index];
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Clustered: return "clustered";
    case Provenance::GradientRefined: return "gradient_refined";
    case Provenance::Interpolated: return "interpolated";
  }
  return "clustered";
}

std::optional<Provenance> provenance_from_string(std::string_view s) {
  if (s == "clustered") return Provenance::Clustered;
  if (s == "gradient_refined") return Provenance::GradientRefined;
  if (s == "interpolated") return Provenance::Interpolated;
  return std::nullopt;
}

Surface& SurfaceSet::emplace(std::size_t s, Provenance p) {
  surfaces[s] = Surface{std::vector<double>(samples(), std::numeric_limits<double>::quiet_NaN()),
                        std::vector<Provenance>(samples(), p)};
  return *surfaces[s];
}

void SurfaceSet::set(std::size_t s, const std::vector<double>& rows, Provenance p) {
  require(rows.size() == samples(), ErrorCode::Parameter,
          fmt::format("surface {} has {} samples, expected {}", surface_id(s), rows.size(),
                      samples()));
  surfaces[s] = Surface{rows, std::vector<Provenance>(samples(), p)};
}

std::size_t SurfaceSet::count() const {
  std::size_t n = 0;
  for (const auto& s : surfaces) n += s.has_value() ? 1 : 0;
  return n;
}

std::vector<std::size_t> SurfaceSet::present() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < kSurfaceCount; ++i) {
    if (surfaces[i]) out.push_back(i);
  }
  return out;
}

std::vector<double> SurfaceSet::slice_rows(std::size_t s, std::size_t z) const {
  const auto& rows = at(s).rows;
  return {rows.begin() + static_cast<std::ptrdiff_t>(z * cols),
          rows.begin() + static_cast<std::ptrdiff_t>((z + 1) * cols)};
}

void enforce_ordering(SurfaceSet& set) {
  const auto ids = set.present();
  for (std::size_t i = 0; i < set.samples(); ++i) {
    double floor = -std::numeric_limits<double>::infinity();
    for (std::size_t s : ids) {
      double& r = set.at(s).rows[i];
      if (std::isnan(r)) continue;
      if (r < floor) r = floor;
      floor = r;
    }
  }
}

bool is_ordered(const SurfaceSet& set, double tolerance) {
  const auto ids = set.present();
  for (std::size_t i = 0; i < set.samples(); ++i) {
    double floor = -std::numeric_limits<double>::infinity();
    for (std::size_t s : ids) {
      const double r = set.at(s).rows[i];
      if (std::isnan(r)) continue;
      if (r < floor - tolerance) return false;
      floor = r;
    }
  }
  return true;
}

}  // namespace dmseg
