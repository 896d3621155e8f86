#include "dmseg/io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "dmseg/error.hpp"

namespace dmseg::io {

namespace {

constexpr std::string_view kMagic = "DMSEG-VOL1";

[[noreturn]] void parse_fail(std::size_t offset, const std::string& what) {
  fail(ErrorCode::Parse, fmt::format("byte {}: {}", offset, what));
}

std::uint32_t quantize(double v, std::uint32_t top) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * top));
}

void check_image(const ImageSlice& image) {
  require(image.rows > 0 && image.cols > 0 && image.intensities.size() == image.rows * image.cols,
          ErrorCode::Input, "image dimensions do not match its data");
}

}  // namespace

std::string_view to_string(Dtype dtype) { return dtype == Dtype::U8 ? "u8" : "u16le"; }

std::string encode_volume(const Volume& volume, Dtype dtype) {
  require(volume.nx > 0 && volume.ny > 0 && volume.nz > 0 &&
              volume.intensities.size() == volume.nx * volume.ny * volume.nz,
          ErrorCode::Input, "volume dimensions do not match its data");
  nlohmann::ordered_json header;
  header["magic"] = kMagic;
  header["dims"] = {volume.nx, volume.ny, volume.nz};
  header["spacing_um"] = volume.spacing_um;
  header["dtype"] = to_string(dtype);
  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t width = dtype == Dtype::U8 ? 1 : 2;
  out.reserve(out.size() + volume.intensities.size() * width);
  for (double v : volume.intensities) {
    if (dtype == Dtype::U8) {
      out.push_back(static_cast<char>(quantize(v, 255)));
    } else {
      const std::uint32_t q = quantize(v, 65535);
      out.push_back(static_cast<char>(q & 0xff));
      out.push_back(static_cast<char>(q >> 8));
    }
  }
  return out;
}

Volume decode_volume(std::string_view bytes) {
  const std::size_t eol = bytes.find('\n');
  if (eol == std::string_view::npos) parse_fail(bytes.size(), "volume header has no newline");
  json header;
  try {
    header = json::parse(bytes.substr(0, eol));
  } catch (const json::parse_error& e) {
    parse_fail(e.byte > 0 ? e.byte - 1 : 0, fmt::format("volume header: {}", e.what()));
  }
  if (!header.is_object()) parse_fail(0, "volume header is not a JSON object");
  for (const auto& [key, _] : header.items()) {
    if (key != "magic" && key != "dims" && key != "spacing_um" && key != "dtype") {
      parse_fail(0, fmt::format("volume header: unknown key '{}'", key));
    }
  }
  if (!header.contains("magic") || header["magic"] != kMagic) {
    parse_fail(0, "volume header: magic is not DMSEG-VOL1");
  }
  const auto triple = [&](const char* key, bool integer) {
    const auto it = header.find(key);
    if (it == header.end() || !it->is_array() || it->size() != 3) {
      parse_fail(0, fmt::format("volume header: '{}' must be a 3-element array", key));
    }
    for (const auto& v : *it) {
      if (integer ? !v.is_number_unsigned() : !v.is_number()) {
        parse_fail(0, fmt::format("volume header: '{}' has a non-{} entry", key,
                                  integer ? "integer" : "numeric"));
      }
    }
    return *it;
  };
  const json dims = triple("dims", true);
  const json spacing = triple("spacing_um", false);
  const auto dt = header.find("dtype");
  if (dt == header.end() || !dt->is_string() || (*dt != "u8" && *dt != "u16le")) {
    parse_fail(0, "volume header: dtype must be \"u8\" or \"u16le\"");
  }
  const bool u8 = *dt == "u8";

  Volume v;
  v.nx = dims[0].get<std::size_t>();
  v.ny = dims[1].get<std::size_t>();
  v.nz = dims[2].get<std::size_t>();
  for (int i = 0; i < 3; ++i) v.spacing_um[i] = spacing[i].get<double>();
  const std::size_t count = v.nx * v.ny * v.nz;
  const std::size_t width = u8 ? 1 : 2;
  const std::string_view payload = bytes.substr(eol + 1);
  if (count == 0) parse_fail(0, "volume header: empty dimensions");
  if (payload.size() != count * width) {
    parse_fail(eol + 1 + std::min(payload.size(), count * width),
               fmt::format("payload has {} bytes, expected {}", payload.size(), count * width));
  }
  v.intensities.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(payload.data());
  for (std::size_t i = 0; i < count; ++i) {
    v.intensities[i] = u8 ? p[i] / 255.0 : (p[2 * i] | (p[2 * i + 1] << 8)) / 65535.0;
  }
  return v;
}

ImageSlice decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  const auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  const auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    unsigned long value = 0;
    const auto [end, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
    if (ec != std::errc{} || end == bytes.data() + start) {
      parse_fail(start, fmt::format("PGM: expected {}", what));
    }
    pos = static_cast<std::size_t>(end - bytes.data());
    return value;
  };
  if (bytes.substr(0, 2) != "P5") parse_fail(0, "PGM: not a binary (P5) file");
  pos = 2;
  const unsigned long cols = number("width");
  const unsigned long rows = number("height");
  const std::size_t maxval_at = pos;
  const unsigned long maxval = number("maxval");
  if (cols == 0 || rows == 0) parse_fail(2, "PGM: empty image");
  if (maxval == 0 || maxval > 65535) parse_fail(maxval_at, "PGM: maxval must be in 1..65535");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    parse_fail(pos, "PGM: missing whitespace after the header");
  }
  ++pos;
  const std::size_t width = maxval < 256 ? 1 : 2;
  const std::size_t need = cols * rows * width;
  if (bytes.size() - pos != need) {
    parse_fail(pos + std::min(bytes.size() - pos, need),
               fmt::format("PGM: raster has {} bytes, expected {}", bytes.size() - pos, need));
  }
  ImageSlice img;
  img.rows = rows;
  img.cols = cols;
  img.intensities.resize(rows * cols);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < img.intensities.size(); ++i) {
    const unsigned v = width == 1 ? p[i] : (p[2 * i] << 8) | p[2 * i + 1];
    if (v > maxval) parse_fail(pos + i * width, "PGM: sample exceeds maxval");
    img.intensities[i] = static_cast<double>(v) / static_cast<double>(maxval);
  }
  return img;
}

std::string encode_pgm(const ImageSlice& image, int maxval) {
  check_image(image);
  require(maxval >= 1 && maxval <= 65535, ErrorCode::Parameter, "PGM maxval must be in 1..65535");
  std::string out = fmt::format("P5\n{} {}\n{}\n", image.cols, image.rows, maxval);
  for (double v : image.intensities) {
    const std::uint32_t q = quantize(v, static_cast<std::uint32_t>(maxval));
    if (maxval < 256) {
      out.push_back(static_cast<char>(q));
    } else {
      out.push_back(static_cast<char>(q >> 8));
      out.push_back(static_cast<char>(q & 0xff));
    }
  }
  return out;
}

std::string render_overlay(const ImageSlice& image, const SurfaceSet& surfaces, std::size_t z) {
  check_image(image);
  require(surfaces.cols == image.cols && z < surfaces.slices, ErrorCode::Input,
          "overlay: surfaces do not match the image");
  static constexpr std::array<std::array<unsigned char, 3>, kSurfaceCount> colours{{
      {255, 0, 0},   {255, 128, 0}, {255, 255, 0}, {128, 255, 0},
      {0, 255, 0},   {0, 255, 160}, {0, 255, 255}, {0, 128, 255},
      {0, 0, 255},   {160, 0, 255}, {255, 0, 255}, {255, 0, 128},
  }};
  std::string header = fmt::format("P6\n{} {}\n255\n", image.cols, image.rows);
  std::string out = header;
  out.resize(header.size() + image.rows * image.cols * 3);
  auto* px = reinterpret_cast<unsigned char*>(out.data() + header.size());
  for (std::size_t i = 0; i < image.intensities.size(); ++i) {
    const auto g = static_cast<unsigned char>(quantize(image.intensities[i], 255));
    px[3 * i] = px[3 * i + 1] = px[3 * i + 2] = g;
  }
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (!surfaces.has(s)) continue;
    for (std::size_t c = 0; c < image.cols; ++c) {
      const double r = surfaces.at(s).rows[surfaces.index(c, z)];
      if (!std::isfinite(r)) continue;
      const long row = std::lround(r);
      if (row < 0 || row >= static_cast<long>(image.rows)) continue;
      const std::size_t i = static_cast<std::size_t>(row) * image.cols + c;
      std::copy(colours[s].begin(), colours[s].end(), px + 3 * i);
    }
  }
  return out;
}

std::string encode_surfaces(const SurfaceSet& surfaces) {
  std::string out = "surface_id,z_index,column,row_px,provenance\n";
  for (std::size_t s = 0; s < kSurfaceCount; ++s) {
    if (!surfaces.has(s)) continue;
    const Surface& surf = surfaces.at(s);
    for (std::size_t z = 0; z < surfaces.slices; ++z) {
      for (std::size_t c = 0; c < surfaces.cols; ++c) {
        const std::size_t i = surfaces.index(c, z);
        const double r = surf.rows[i];
        // Avoid printing "-0.000".
        const std::string row =
            std::isfinite(r) ? fmt::format("{:.3f}", std::abs(r) < 5e-4 ? 0.0 : r) : "nan";
        out += fmt::format("{},{},{},{},{}\n", surface_id(s), z, c, row,
                           to_string(surf.provenance[i]));
      }
    }
  }
  return out;
}

SurfaceSet decode_surfaces(std::string_view text) {
  constexpr std::string_view kHeader = "surface_id,z_index,column,row_px,provenance";
  struct Entry {
    std::size_t s, z, c;
    double row;
    Provenance p;
  };
  std::vector<Entry> entries;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::size_t line_at = pos;
    pos = eol + 1;
    if (header) {
      if (line != kHeader) parse_fail(line_at, "surface CSV: unexpected header line");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::array<std::string_view, 5> field;
    std::array<std::size_t, 5> field_at{};
    std::size_t start = 0;
    for (std::size_t f = 0; f < 5; ++f) {
      const std::size_t comma = f < 4 ? line.find(',', start) : line.size();
      if (comma == std::string_view::npos) parse_fail(line_at + start, "surface CSV: expected 5 fields");
      field[f] = line.substr(start, comma - start);
      field_at[f] = line_at + start;
      start = comma + 1;
    }
    if (field[4].find(',') != std::string_view::npos) {
      parse_fail(field_at[4], "surface CSV: expected 5 fields");
    }
    const auto id = surface_index(field[0]);
    if (!id) parse_fail(field_at[0], fmt::format("surface CSV: unknown surface '{}'", field[0]));
    const auto integer = [&](std::size_t f) {
      std::size_t v = 0;
      const auto [end, ec] = std::from_chars(field[f].data(), field[f].data() + field[f].size(), v);
      if (ec != std::errc{} || end != field[f].data() + field[f].size() || field[f].empty()) {
        parse_fail(field_at[f], "surface CSV: expected a non-negative integer");
      }
      return v;
    };
    Entry e{*id, integer(1), integer(2), std::numeric_limits<double>::quiet_NaN(),
            Provenance::Clustered};
    if (field[3] != "nan") {
      const auto [end, ec] =
          std::from_chars(field[3].data(), field[3].data() + field[3].size(), e.row);
      if (ec != std::errc{} || end != field[3].data() + field[3].size() || field[3].empty() ||
          !std::isfinite(e.row)) {
        parse_fail(field_at[3], "surface CSV: expected a row value");
      }
    }
    const auto prov = provenance_from_string(field[4]);
    if (!prov) parse_fail(field_at[4], fmt::format("surface CSV: unknown provenance '{}'", field[4]));
    e.p = *prov;
    if (!entries.empty()) {
      const Entry& b = entries.back();
      if (std::tie(b.s, b.z, b.c) >= std::tie(e.s, e.z, e.c)) {
        parse_fail(line_at, "surface CSV: rows not sorted by (surface, slice, column)");
      }
    }
    entries.push_back(e);
  }
  if (header) parse_fail(0, "surface CSV: missing header line");
  if (entries.empty()) parse_fail(text.size(), "surface CSV: no samples");

  std::size_t cols = 0, slices = 0;
  for (const Entry& e : entries) {
    cols = std::max(cols, e.c + 1);
    slices = std::max(slices, e.z + 1);
  }
  SurfaceSet set(cols, slices);
  for (const Entry& e : entries) {
    if (!set.has(e.s)) set.emplace(e.s);
    Surface& surf = set.at(e.s);
    surf.rows[set.index(e.c, e.z)] = e.row;
    surf.provenance[set.index(e.c, e.z)] = e.p;
  }
  return set;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

using Errors = std::vector<std::string>;

// One config key: how to read it, write it and describe it in the schema.
struct Field {
  std::string name;
  std::function<void(const json&, const std::string&, Errors&)> read;
  std::function<json()> write;
  std::function<json()> schema;
};

std::string_view polarity_name(EdgePolarity p) {
  return p == EdgePolarity::Brightening ? "brightening" : "darkening";
}

template <class T>
struct Codec;

template <>
struct Codec<double> {
  static bool read(const json& v, double& out) {
    if (!v.is_number()) return false;
    out = v.get<double>();
    return true;
  }
  static json write(double v) { return v; }
  static json schema() { return {{"type", "number"}}; }
  static constexpr const char* expect = "a number";
};

template <>
struct Codec<std::size_t> {
  static bool read(const json& v, std::size_t& out) {
    if (!v.is_number_unsigned()) return false;
    out = v.get<std::size_t>();
    return true;
  }
  static json write(std::size_t v) { return v; }
  static json schema() { return {{"type", "integer"}, {"minimum", 0}}; }
  static constexpr const char* expect = "a non-negative integer";
};

template <>
struct Codec<int> {
  static bool read(const json& v, int& out) {
    if (!v.is_number_integer()) return false;
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) return false;
    out = static_cast<int>(x);
    return true;
  }
  static json write(int v) { return v; }
  static json schema() { return {{"type", "integer"}}; }
  static constexpr const char* expect = "an integer";
};

template <>
struct Codec<bool> {
  static bool read(const json& v, bool& out) {
    if (!v.is_boolean()) return false;
    out = v.get<bool>();
    return true;
  }
  static json write(bool v) { return v; }
  static json schema() { return {{"type", "boolean"}}; }
  static constexpr const char* expect = "a boolean";
};

template <>
struct Codec<EdgePolarity> {
  static bool read(const json& v, EdgePolarity& out) {
    if (v == "brightening") out = EdgePolarity::Brightening;
    else if (v == "darkening") out = EdgePolarity::Darkening;
    else return false;
    return true;
  }
  static json write(EdgePolarity v) { return polarity_name(v); }
  static json schema() { return {{"type", "string"}, {"enum", {"brightening", "darkening"}}}; }
  static constexpr const char* expect = "\"brightening\" or \"darkening\"";
};

template <class T, std::size_t N>
struct Codec<std::array<T, N>> {
  static bool read(const json& v, std::array<T, N>& out) {
    if (!v.is_array() || v.size() != N) return false;
    std::array<T, N> tmp{};
    for (std::size_t i = 0; i < N; ++i) {
      if (!Codec<T>::read(v[i], tmp[i])) return false;
    }
    out = tmp;
    return true;
  }
  static json write(const std::array<T, N>& v) {
    json a = json::array();
    for (const T& x : v) a.push_back(Codec<T>::write(x));
    return a;
  }
  static json schema() {
    return {{"type", "array"}, {"items", Codec<T>::schema()}, {"minItems", N}, {"maxItems", N}};
  }
  static std::string expect_text() { return fmt::format("an array of {} ({})", N, Codec<T>::expect); }
};

template <class T>
std::string expectation() {
  if constexpr (requires { Codec<T>::expect_text(); }) return Codec<T>::expect_text();
  else return Codec<T>::expect;
}

template <class T>
Field field(std::string name, T& ref) {
  return Field{
      name,
      [&ref](const json& v, const std::string& path, Errors& errors) {
        if (!Codec<T>::read(v, ref)) errors.push_back(fmt::format("{}: expected {}", path, expectation<T>()));
      },
      [&ref] { return Codec<T>::write(ref); },
      [] { return Codec<T>::schema(); }};
}

json object_schema(const std::vector<Field>& fields) {
  json props = json::object();
  for (const Field& f : fields) props[f.name] = f.schema();
  return {{"type", "object"}, {"additionalProperties", false}, {"properties", props}};
}

json write_object(const std::vector<Field>& fields) {
  json out = json::object();
  for (const Field& f : fields) out[f.name] = f.write();
  return out;
}

void read_object(const json& v, const std::string& path, const std::vector<Field>& fields,
                 Errors& errors, std::initializer_list<std::string_view> skip = {}) {
  if (!v.is_object()) {
    errors.push_back(fmt::format("{}: expected an object", path.empty() ? "/" : path));
    return;
  }
  for (const auto& [key, value] : v.items()) {
    if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
    const std::string p = path + "/" + key;
    const auto it = std::find_if(fields.begin(), fields.end(),
                                 [&](const Field& f) { return f.name == key; });
    if (it == fields.end()) {
      errors.push_back(fmt::format("{}: unknown key", p));
      continue;
    }
    it->read(value, p, errors);
  }
}

std::vector<Field> smoothing_fields(SmoothingOptions& s) {
  return {field("spline_lambda", s.spline_lambda), field("loess_window", s.loess_window),
          field("outlier_mads", s.outlier_mads), field("outlier_floor", s.outlier_floor)};
}

Field nested(std::string name, std::function<std::vector<Field>()> make) {
  return Field{name,
               [make](const json& v, const std::string& path, Errors& errors) {
                 read_object(v, path, make(), errors);
               },
               [make] { return write_object(make()); }, [make] { return object_schema(make()); }};
}

std::vector<Field> pipeline_fields(PipelineConfig& c) {
  return {
      field("stage1_block_2d", c.stage1_block_2d),
      field("stage2_block_2d", c.stage2_block_2d),
      field("stage1_block_3d", c.stage1_block_3d),
      field("stage2_block_3d", c.stage2_block_3d),
      field("k_stage1", c.k_stage1),
      field("k_stage2", c.k_stage2),
      field("tau", c.tau),
      field("sigma_factor", c.sigma_factor),
      field("sparsify_threshold", c.sparsify_threshold),
      field("radius_stage1_2d", c.radius_stage1_2d),
      field("radius_stage1_3d", c.radius_stage1_3d),
      field("radius_stage2", c.radius_stage2),
      field("elbow_window_stage1", c.elbow_window_stage1),
      field("elbow_window_stage2", c.elbow_window_stage2),
      field("elbow_epsilon_stage1", c.elbow_epsilon_stage1),
      field("elbow_epsilon_stage2", c.elbow_epsilon_stage2),
      field("lateral_scale_stage1", c.lateral_scale_stage1),
      field("lateral_scale_stage2", c.lateral_scale_stage2),
      field("lateral_scale_rescue", c.lateral_scale_rescue),
      field("gradient_half_window", c.gradient_half_window),
      field("gradient_columns", c.gradient_columns),
      field("outer_search_rows", c.outer_search_rows),
      field("surface1_polarity", c.surface1_polarity),
      field("surface7_polarity", c.surface7_polarity),
      field("surface8_polarity", c.surface8_polarity),
      field("restarts", c.restarts),
      field("seed", c.seed),
      nested("smoothing", [&c] { return smoothing_fields(c.smoothing); }),
      field("seam_columns", c.seam_columns),
      field("slice_step_3d", c.slice_step_3d),
      field("pathology_mode", c.pathology_mode),
      field("auto_cluster_protocol", c.auto_cluster_protocol),
      field("rescue_min_separation", c.rescue_min_separation),
      field("rescue_min_agreement", c.rescue_min_agreement),
      field("rescue_min_coverage", c.rescue_min_coverage),
      field("rescue_margin", c.rescue_margin),
      field("onh_mask", c.onh_mask),
      field("layer_depth_prior", c.layer_depth_prior),
      field("threads", c.threads),
  };
}

std::vector<Field> vessel_fields(VesselShadow& v) {
  return {field("center_x", v.center_x), field("width", v.width),
          field("attenuation", v.attenuation)};
}

std::vector<Field> canal_fields(CanalSpec& c) {
  return {field("center_x", c.center_x),     field("center_z", c.center_z),
          field("semi_major", c.semi_major), field("semi_minor", c.semi_minor),
          field("angle", c.angle),           field("intensity", c.intensity)};
}

std::vector<Field> bump_fields(BumpSpec& b) {
  return {field("center_x", b.center_x), field("center_z", b.center_z),
          field("sigma_x", b.sigma_x),   field("sigma_z", b.sigma_z),
          field("amplitude", b.amplitude)};
}

// Optional nested object; null clears it.
template <class T>
Field optional_object(std::string name, std::optional<T>& ref,
                      std::vector<Field> (*make)(T&)) {
  return Field{
      name,
      [&ref, make](const json& v, const std::string& path, Errors& errors) {
        if (v.is_null()) {
          ref.reset();
          return;
        }
        T tmp = ref.value_or(T{});
        read_object(v, path, make(tmp), errors);
        ref = tmp;
      },
      [&ref, make] { return ref ? write_object(make(*ref)) : json(nullptr); },
      [make] {
        T dummy{};
        json s = object_schema(make(dummy));
        s["type"] = {"object", "null"};
        return s;
      }};
}

std::vector<Field> phantom_fields(PhantomSpec& p) {
  std::vector<Field> f{
      field("nx", p.nx),
      field("ny", p.ny),
      field("nz", p.nz),
      field("spacing_um", p.spacing_um),
      field("base_row", p.base_row),
      field("thickness", p.thickness),
      field("intensity", p.intensity),
      field("noise_sigma", p.noise_sigma),
      field("speckle_shape", p.speckle_shape),
      field("wave_amplitude", p.wave_amplitude),
      field("wave_period", p.wave_period),
      field("wave_phase", p.wave_phase),
      field("dip_fraction", p.dip_fraction),
      field("dip_sigma", p.dip_sigma),
      field("dip_center_x", p.dip_center_x),
      field("dip_center_z", p.dip_center_z),
      field("dip_sigma_z", p.dip_sigma_z),
      field("drift", p.drift),
      field("drift_z", p.drift_z),
  };
  f.push_back(Field{
      "vessels",
      [&p](const json& v, const std::string& path, Errors& errors) {
        if (!v.is_array()) {
          errors.push_back(fmt::format("{}: expected an array", path));
          return;
        }
        std::vector<VesselShadow> out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
          read_object(v[i], fmt::format("{}/{}", path, i), vessel_fields(out[i]), errors);
        }
        p.vessels = out;
      },
      [&p] {
        json a = json::array();
        for (auto& v : p.vessels) a.push_back(write_object(vessel_fields(v)));
        return a;
      },
      [] {
        VesselShadow dummy;
        return json{{"type", "array"}, {"items", object_schema(vessel_fields(dummy))}};
      }});
  f.push_back(optional_object<CanalSpec>("canal", p.canal, canal_fields));
  f.push_back(optional_object<BumpSpec>("bump", p.bump, bump_fields));
  return f;
}

constexpr std::array<std::string_view, 4> kVariants{"standard", "normal", "merged", "volume"};

PhantomSpec variant_spec(std::string_view name) {
  if (name == "normal") return normal_phantom_spec();
  if (name == "merged") return merged_phantom_spec();
  if (name == "volume") return volume_phantom_spec();
  return standard_phantom_spec();
}

}  // namespace

json to_json(const PipelineConfig& config) {
  PipelineConfig c = config;
  return write_object(pipeline_fields(c));
}

json to_json(const PhantomSpec& spec) {
  PhantomSpec p = spec;
  return write_object(phantom_fields(p));
}

json to_json(const Config& config) {
  return {{"pipeline", to_json(config.pipeline)}, {"phantom", to_json(config.phantom)}};
}

json config_schema() {
  PipelineConfig c;
  PhantomSpec p;
  json phantom = object_schema(phantom_fields(p));
  phantom["properties"]["variant"] = {{"type", "string"}, {"enum", kVariants},
                                      {"description", "preset applied before the other keys"}};
  json schema = {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
                 {"title", "dmseg configuration"},
                 {"type", "object"},
                 {"additionalProperties", false},
                 {"properties", {{"pipeline", object_schema(pipeline_fields(c))}, {"phantom", phantom}}}};
  return schema;
}

Config config_from_json(const json& document) {
  Config out;
  Errors errors;
  if (!document.is_object()) {
    fail(ErrorCode::Config, "config: /: expected an object");
  }
  for (const auto& [key, value] : document.items()) {
    if (key == "pipeline") {
      read_object(value, "/pipeline", pipeline_fields(out.pipeline), errors);
    } else if (key == "phantom") {
      if (value.is_object() && value.contains("variant")) {
        const json& name = value["variant"];
        if (name.is_string() &&
            std::find(kVariants.begin(), kVariants.end(), name.get<std::string>()) != kVariants.end()) {
          out.phantom = variant_spec(name.get<std::string>());
        } else {
          errors.push_back("/phantom/variant: expected one of standard, normal, merged, volume");
        }
      }
      read_object(value, "/phantom", phantom_fields(out.phantom), errors, {"variant"});
    } else {
      errors.push_back(fmt::format("/{}: unknown key", key));
    }
  }
  if (!errors.empty()) {
    std::string msg = "config: invalid fields";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorCode::Config, msg);
  }
  validate(out.pipeline);
  return out;
}

Config parse_config(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    parse_fail(e.byte > 0 ? e.byte - 1 : 0, fmt::format("config: {}", e.what()));
  }
  return config_from_json(doc);
}

Config load_config(const std::filesystem::path& path) {
  Config cfg = path.empty() ? Config{} : parse_config(read_file(path));
  if (const char* env = std::getenv("DMSEG_SEED"); env && *env) {
    std::uint64_t seed = 0;
    const std::string_view s(env);
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), seed);
    require(ec == std::errc{} && end == s.data() + s.size(), ErrorCode::Config,
            fmt::format("DMSEG_SEED '{}' is not a non-negative integer", s));
    cfg.pipeline.seed = seed;
  }
  return cfg;
}

json to_json(const ErrorReport& report) {
  const auto surface = [](const SurfaceError& e) {
    json j = {{"samples", e.samples},
              {"missing", e.missing},
              {"signed_mean_px", e.signed_mean_px},
              {"signed_sd_px", e.signed_sd_px},
              {"unsigned_mean_px", e.unsigned_mean_px},
              {"unsigned_sd_px", e.unsigned_sd_px},
              {"signed_mean_um", e.signed_mean_um},
              {"signed_sd_um", e.signed_sd_um},
              {"unsigned_mean_um", e.unsigned_mean_um},
              {"unsigned_sd_um", e.unsigned_sd_um}};
    return j;
  };
  json out;
  out["axial_um"] = report.axial_um;
  json surfaces = json::array();
  for (const auto& e : report.surfaces) {
    json j = surface(e);
    j["surface"] = surface_id(e.surface);
    surfaces.push_back(j);
  }
  out["surfaces"] = surfaces;
  out["overall"] = surface(report.overall);
  json thick = json::array();
  for (const auto& t : report.thickness) {
    thick.push_back({{"from", "1"},
                     {"to", surface_id(t.surface)},
                     {"samples", t.samples},
                     {"mean_px", t.mean_px},
                     {"mean_um", t.mean_um}});
  }
  out["thickness"] = thick;
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::Io, fmt::format("cannot write {}", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorCode::Io, fmt::format("write failed: {}", path.string()));
}

}  // namespace dmseg::io
