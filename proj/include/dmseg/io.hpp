#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "dmseg/graph_nodes.hpp"
#include "dmseg/phantom_eval.hpp"
#include "dmseg/pipeline.hpp"
#include "dmseg/surfaces.hpp"

namespace dmseg::io {

using json = nlohmann::json;

enum class Dtype { U8, U16LE };

std::string_view to_string(Dtype dtype);

// Volume file: one-line JSON header, then raw voxels (x fastest, then y, then z).
// Intensities in [0, 1] are quantized to the full integer range of the dtype.
std::string encode_volume(const Volume& volume, Dtype dtype = Dtype::U16LE);
Volume decode_volume(std::string_view bytes);

// Binary PGM (P5), maxval up to 65535.
ImageSlice decode_pgm(std::string_view bytes);
std::string encode_pgm(const ImageSlice& image, int maxval = 255);

/// Binary PPM (P6) of the slice in gray with each present surface drawn in its own colour.
std::string render_overlay(const ImageSlice& image, const SurfaceSet& surfaces, std::size_t z = 0);

// Surface CSV: surface_id,z_index,column,row_px,provenance. Rows are sorted by
// anatomical surface order, then slice, then column. Undefined samples are "nan".
std::string encode_surfaces(const SurfaceSet& surfaces);
SurfaceSet decode_surfaces(std::string_view text);

// Configuration file: {"pipeline": {...}, "phantom": {...}}, both optional.
// Unknown keys and wrong types are rejected; the error lists every offending path.
struct Config {
  PipelineConfig pipeline;
  PhantomSpec phantom;
};

json to_json(const PipelineConfig& config);
json to_json(const PhantomSpec& spec);
json to_json(const Config& config);
Config config_from_json(const json& document);

/// JSON Schema of the config file, generated from the same key tables.
json config_schema();
Config parse_config(std::string_view text);

/// Reads a config file (empty path: defaults) and applies DMSEG_SEED.
Config load_config(const std::filesystem::path& path);

json to_json(const ErrorReport& report);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dmseg::io
