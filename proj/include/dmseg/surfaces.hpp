#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dmseg {

/// Surface labels in anatomical (top to bottom) order.
inline constexpr std::array<std::string_view, 12> kSurfaceIds = {
    "1", "2", "3", "4", "5", "6", "6a", "7", "8", "9", "10", "11"};
inline constexpr std::size_t kSurfaceCount = kSurfaceIds.size();

/// Position of a label in kSurfaceIds; nullopt for unknown labels.
std::optional<std::size_t> surface_index(std::string_view id);
std::string_view surface_id(std::size_t index);

// Convenience indices.
inline constexpr std::size_t kS1 = 0;
inline constexpr std::size_t kS2 = 1;
inline constexpr std::size_t kS3 = 2;
inline constexpr std::size_t kS6 = 5;
inline constexpr std::size_t kS6a = 6;
inline constexpr std::size_t kS7 = 7;
inline constexpr std::size_t kS8 = 8;
inline constexpr std::size_t kS10 = 10;
inline constexpr std::size_t kS11 = 11;

enum class Provenance : std::uint8_t { Clustered, GradientRefined, Interpolated };

std::string_view to_string(Provenance p);
std::optional<Provenance> provenance_from_string(std::string_view s);

/// One surface sampled on a (column, slice) grid. Rows are continuous
/// coordinates in pixel-centre units; NaN marks an undefined sample.
struct Surface {
  std::vector<double> rows;
  std::vector<Provenance> provenance;
};

struct SurfaceSet {
  std::size_t cols = 0;
  std::size_t slices = 1;
  double axial_um = 1.0;
  double lateral_um = 1.0;
  double slice_um = 1.0;
  std::array<std::optional<Surface>, kSurfaceCount> surfaces;

  SurfaceSet() = default;
  SurfaceSet(std::size_t cols, std::size_t slices) : cols(cols), slices(slices) {}

  std::size_t samples() const { return cols * slices; }
  std::size_t index(std::size_t col, std::size_t z) const { return z * cols + col; }

  bool has(std::size_t s) const { return surfaces[s].has_value(); }
  Surface& at(std::size_t s) { return *surfaces[s]; }
  const Surface& at(std::size_t s) const { return *surfaces[s]; }

  /// Creates (or resets) surface s filled with NaN.
  Surface& emplace(std::size_t s, Provenance p = Provenance::Clustered);
  void set(std::size_t s, const std::vector<double>& rows, Provenance p);
  void erase(std::size_t s) { surfaces[s].reset(); }

  std::size_t count() const;
  std::vector<std::size_t> present() const;

  /// Rows of surface s on slice z.
  std::vector<double> slice_rows(std::size_t s, std::size_t z) const;
};

/// Pushes any sample above its predecessor down to the predecessor's row so
/// that the present surfaces never cross.
void enforce_ordering(SurfaceSet& set);

/// True when every defined sample respects the anatomical order.
bool is_ordered(const SurfaceSet& set, double tolerance = 1e-9);

}  // namespace dmseg
