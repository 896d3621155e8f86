#include "dmseg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dmseg/error.hpp"
#include "dmseg/io.hpp"
#include "dmseg/model_select.hpp"
#include "dmseg/phantom_eval.hpp"
#include "dmseg/pipeline.hpp"

namespace dmseg::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

struct Input {
  std::optional<ImageSlice> slice;
  std::optional<Volume> volume;
};

// PGM or volume file, told apart by the first bytes.
Input read_input(const fs::path& path, std::optional<std::size_t> slice) {
  const std::string bytes = io::read_file(path);
  Input in;
  if (bytes.rfind("P5", 0) == 0) {
    require(!slice || *slice == 0, ErrorCode::Input, "--slice applies to volume input only");
    in.slice = io::decode_pgm(bytes);
  } else {
    in.volume = io::decode_volume(bytes);
    if (slice) in.slice = in.volume->slice(*slice);
    else if (in.volume->nz == 1) in.slice = in.volume->slice(0);
  }
  return in;
}

ImageSlice require_slice(const Input& in) {
  require(in.slice.has_value(), ErrorCode::Input,
          "the input volume has several slices; choose one with --slice");
  return *in.slice;
}

void write_output(const std::string& path, std::string_view bytes) {
  if (path == "-") std::cout << bytes << std::flush;
  else io::write_file(path, bytes);
}

json map_event(const MapDiagnostics& m) {
  return {{"event", "map"},
          {"name", m.name},
          {"nodes", m.nodes},
          {"sigma_geo", m.sigma_geo},
          {"sigma_feat", m.sigma_feat},
          {"radius", m.radius},
          {"eigenvalues", m.eigenvalues},
          {"k_elbow", m.k_elbow ? json(*m.k_elbow) : json(nullptr)},
          {"elbow_confidence", m.elbow_confidence},
          {"k_used", m.k_used},
          {"cluster_sizes", m.cluster_sizes},
          {"tiny_cluster", m.tiny_cluster},
          {"coincident", m.coincident}};
}

void emit_log(const std::string& format, const std::string& file, const SegmentationResult& r) {
  if (format == "none") return;
  std::ostringstream out;
  const Diagnostics& d = r.diagnostics;
  if (format == "json") {
    for (const auto& m : d.maps) out << map_event(m).dump() << '\n';
    for (const auto& t : d.trail) {
      out << json{{"event", "trail"}, {"step", t.step}, {"detail", t.detail}}.dump() << '\n';
    }
    for (const auto& f : d.flags) out << json{{"event", "flag"}, {"detail", f}}.dump() << '\n';
    json ids = json::array();
    for (std::size_t s : r.surfaces.present()) ids.push_back(surface_id(s));
    out << json{{"event", "summary"},
                {"protocol_path", d.protocol_path},
                {"surfaces", ids},
                {"surface_count", r.surfaces.count()},
                {"clamped_columns", d.clamped_columns},
                {"split_column", d.split_column}}
               .dump()
        << '\n';
  } else {
    for (const auto& m : d.maps) {
      out << fmt::format("map {}: {} nodes, elbow {}, k {}\n", m.name, m.nodes,
                         m.k_elbow ? std::to_string(*m.k_elbow) : "none", m.k_used);
    }
    for (const auto& t : d.trail) out << fmt::format("{}: {}\n", t.step, t.detail);
    for (const auto& f : d.flags) out << "flag: " << f << '\n';
    out << fmt::format("path {}, {} surfaces\n", d.protocol_path, r.surfaces.count());
  }
  if (file.empty()) std::cerr << out.str() << std::flush;
  else io::write_file(file, out.str());
}

io::Config config_for(const std::string& path, int threads) {
  io::Config cfg = io::load_config(path);
  if (threads > 0) cfg.pipeline.threads = threads;
  return cfg;
}

std::array<double, 3> parse_spacing(const std::string& text) {
  std::array<double, 3> out{};
  std::stringstream ss(text);
  std::string part;
  std::size_t i = 0;
  while (std::getline(ss, part, ',')) {
    require(i < 3, ErrorCode::Parameter, "--spacing takes three values sx,sy,sz");
    try {
      std::size_t used = 0;
      out[i] = std::stod(part, &used);
      require(used == part.size(), ErrorCode::Parameter, "");
    } catch (...) {
      fail(ErrorCode::Parameter, fmt::format("--spacing: '{}' is not a number", part));
    }
    require(out[i] > 0.0, ErrorCode::Parameter, "--spacing values must be positive");
    ++i;
  }
  require(i == 3, ErrorCode::Parameter, "--spacing takes three values sx,sy,sz");
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  double lo = 0, hi = 0;
  std::size_t steps = 0;
  char c1 = 0, c2 = 0;
  std::istringstream ss(text);
  ss >> lo >> c1 >> hi >> c2 >> steps;
  require(ss && c1 == ':' && c2 == ':' && ss.peek() == EOF, ErrorCode::Parameter,
          fmt::format("--grid '{}' is not lo:hi:steps", text));
  require(lo > 0.0 && hi > lo && steps >= 3, ErrorCode::Parameter,
          "--grid needs 0 < lo < hi and at least 3 steps");
  return log_grid(lo, hi, steps);
}

std::string format_double(double v) { return fmt::format("{:.9g}", v); }

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Diffusion-map layer segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides the config)")
      ->check(CLI::Range(1, 256));

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Write a synthetic phantom and its truth surfaces");
  std::string ph_spec, ph_out, ph_truth, ph_variant, ph_dtype = "u16le", ph_pgm;
  std::uint64_t ph_seed = 1;
  phantom->add_option("--spec", ph_spec, "Config file with a phantom section");
  phantom->add_option("--variant", ph_variant, "Preset: standard, normal, merged, volume")
      ->check(CLI::IsMember({"standard", "normal", "merged", "volume"}));
  phantom->add_option("--seed", ph_seed, "Noise seed");
  phantom->add_option("--out", ph_out, "Volume file")->required();
  phantom->add_option("--truth", ph_truth, "Truth CSV (default: <out> with .truth.csv)");
  phantom->add_option("--dtype", ph_dtype, "u8 or u16le")->check(CLI::IsMember({"u8", "u16le"}));
  phantom->add_option("--pgm", ph_pgm, "Also write the first slice as a 16-bit PGM");

  // segment2d
  auto* seg2 = app.add_subcommand("segment2d", "Segment one slice");
  std::string s2_in, s2_config, s2_out, s2_overlay, s2_log = "none", s2_log_file;
  std::optional<std::size_t> s2_slice;
  seg2->add_option("--in", s2_in, "PGM or volume file")->required();
  seg2->add_option("--slice", s2_slice, "Slice of a volume input");
  seg2->add_option("--config", s2_config, "Config file");
  seg2->add_option("--out", s2_out, "Surface CSV")->required();
  seg2->add_option("--overlay", s2_overlay, "PPM overlay");
  seg2->add_option("--log", s2_log, "Decision log: none, text, json")
      ->check(CLI::IsMember({"none", "text", "json"}));
  seg2->add_option("--log-file", s2_log_file, "Write the log here instead of stderr");

  // segment3d
  auto* seg3 = app.add_subcommand("segment3d", "Segment a volume");
  std::string s3_in, s3_config, s3_out, s3_log = "none", s3_log_file;
  bool s3_pathology = false, s3_onh = false;
  seg3->add_option("--in", s3_in, "Volume file")->required();
  seg3->add_option("--config", s3_config, "Config file");
  seg3->add_option("--out", s3_out, "Surface CSV")->required();
  seg3->add_flag("--pathology-mode", s3_pathology, "Gradient search on every slice");
  seg3->add_flag("--onh-mask", s3_onh, "Exclude a detected optic nerve head canal");
  seg3->add_option("--log", s3_log, "Decision log: none, text, json")
      ->check(CLI::IsMember({"none", "text", "json"}));
  seg3->add_option("--log-file", s3_log_file, "Write the log here instead of stderr");

  // eval
  auto* eval = app.add_subcommand("eval", "Border and thickness errors against a truth file");
  std::string ev_pred, ev_truth, ev_spacing = "1,1,1", ev_out = "-";
  eval->add_option("--pred", ev_pred, "Predicted surface CSV")->required();
  eval->add_option("--truth", ev_truth, "Truth surface CSV")->required();
  eval->add_option("--spacing", ev_spacing, "Voxel spacing sx,sy,sz in micrometres");
  eval->add_option("--out", ev_out, "JSON report (- for stdout)");

  // sigma-scan
  auto* scan = app.add_subcommand("sigma-scan", "Kernel sum L(sigma) over a log grid");
  std::string sc_in, sc_config, sc_grid = "0.0001:100:31", sc_out = "-";
  std::optional<std::size_t> sc_slice;
  scan->add_option("--in", sc_in, "PGM or volume file")->required();
  scan->add_option("--slice", sc_slice, "Slice of a volume input (omit for the whole volume)");
  scan->add_option("--config", sc_config, "Config file");
  scan->add_option("--grid", sc_grid, "lo:hi:steps");
  scan->add_option("--out", sc_out, "CSV (- for stdout)");

  // eigplot
  auto* eig = app.add_subcommand("eigplot", "Leading eigenvalues and the elbow decision");
  std::string eg_in, eg_config, eg_out = "-";
  std::optional<std::size_t> eg_slice;
  int eg_stage = 1;
  eig->add_option("--in", eg_in, "PGM or volume file")->required();
  eig->add_option("--slice", eg_slice, "Slice of a volume input (omit for the 3D pipeline)");
  eig->add_option("--config", eg_config, "Config file");
  eig->add_option("--stage", eg_stage, "1 or 2")->check(CLI::IsMember({1, 2}));
  eig->add_option("--out", eg_out, "CSV (- for stdout)");

  // schema
  auto* schema = app.add_subcommand("schema", "Print the config JSON schema");
  std::string sch_out = "-";
  schema->add_option("--out", sch_out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ERROR USAGE: " << e.what() << '\n';
    return 2;
  }

  try {
    if (phantom->parsed()) {
      io::Config cfg = config_for(ph_spec, threads);
      PhantomSpec spec = cfg.phantom;
      if (!ph_variant.empty()) {
        require(ph_spec.empty(), ErrorCode::Parameter, "use either --spec or --variant");
        spec = ph_variant == "normal"   ? normal_phantom_spec()
               : ph_variant == "merged" ? merged_phantom_spec()
               : ph_variant == "volume" ? volume_phantom_spec()
                                        : standard_phantom_spec();
      }
      const Phantom ph = generate_phantom(spec, ph_seed);
      io::write_file(ph_out, io::encode_volume(ph.volume, ph_dtype == "u8" ? io::Dtype::U8
                                                                            : io::Dtype::U16LE));
      if (ph_truth.empty()) ph_truth = fs::path(ph_out).replace_extension(".truth.csv").string();
      io::write_file(ph_truth, io::encode_surfaces(ph.truth));
      if (!ph_pgm.empty()) io::write_file(ph_pgm, io::encode_pgm(ph.volume.slice(0), 65535));
    } else if (seg2->parsed()) {
      const io::Config cfg = config_for(s2_config, threads);
      const ImageSlice slice = require_slice(read_input(s2_in, s2_slice));
      const SegmentationResult r = segment_2d(slice, cfg.pipeline);
      io::write_file(s2_out, io::encode_surfaces(r.surfaces));
      if (!s2_overlay.empty()) io::write_file(s2_overlay, io::render_overlay(slice, r.surfaces));
      emit_log(s2_log, s2_log_file, r);
    } else if (seg3->parsed()) {
      io::Config cfg = config_for(s3_config, threads);
      if (s3_pathology) cfg.pipeline.pathology_mode = true;
      if (s3_onh) cfg.pipeline.onh_mask = true;
      const Input in = read_input(s3_in, std::nullopt);
      require(in.volume.has_value(), ErrorCode::Input, "segment3d needs a volume file");
      const SegmentationResult r = segment_3d(*in.volume, cfg.pipeline);
      io::write_file(s3_out, io::encode_surfaces(r.surfaces));
      emit_log(s3_log, s3_log_file, r);
    } else if (eval->parsed()) {
      const auto spacing = parse_spacing(ev_spacing);
      const SurfaceSet pred = io::decode_surfaces(io::read_file(ev_pred));
      const SurfaceSet truth = io::decode_surfaces(io::read_file(ev_truth));
      const ErrorReport report = border_errors(pred, truth, spacing[1]);
      write_output(ev_out, io::to_json(report).dump(2) + "\n");
    } else if (scan->parsed()) {
      const io::Config cfg = config_for(sc_config, threads);
      const Input in = read_input(sc_in, sc_slice);
      const PipelineConfig& pc = cfg.pipeline;
      NodeGrid grid;
      double radius = 0.0;
      if (in.slice) {
        grid = normalize_features(
            window_nodes_2d(*in.slice, pc.stage1_block_2d[0], pc.stage1_block_2d[1]));
        radius = pc.radius_stage1_2d * std::sqrt(2.0);
      } else {
        grid = normalize_features(window_nodes_3d(*in.volume, pc.stage1_block_3d));
        radius = pc.radius_stage1_3d * std::sqrt(3.0);
      }
      // Same block-unit metric as the first-stage map.
      SigmaScanOptions opt;
      const int depth_axis = grid.dims == 2 ? 0 : 1;
      for (int d = 0; d < grid.dims; ++d) {
        opt.axis_scale[d] = 1.0 / static_cast<double>(grid.block_shape[d]);
        if (d != depth_axis) opt.axis_scale[d] *= pc.lateral_scale_stage1;
      }
      opt.default_factor = pc.sigma_factor;
      opt.threads = pc.threads;
      const SigmaScan s = scan_sigma(grid, parse_grid(sc_grid), radius, opt);
      std::string csv = "sigma,L,slope,in_region\n";
      for (std::size_t i = 0; i < s.sigma_grid.size(); ++i) {
        csv += fmt::format("{},{},{},{}\n", format_double(s.sigma_grid[i]),
                           format_double(s.L_values[i]),
                           i < s.slopes.size() ? format_double(s.slopes[i]) : "",
                           i >= s.lo && i <= s.hi ? 1 : 0);
      }
      write_output(sc_out, csv);
      std::cerr << json{{"chosen_sigma", s.chosen_sigma},
                        {"region", {s.sigma_grid[s.lo], s.sigma_grid[s.hi]}},
                        {"default_sigma", s.default_sigma},
                        {"default_in_region", s.default_in_region}}
                       .dump()
                << '\n';
    } else if (eig->parsed()) {
      const io::Config cfg = config_for(eg_config, threads);
      const Input in = read_input(eg_in, eg_slice);
      Diagnostics diag;
      if (in.slice) {
        if (eg_stage == 1) run_stage1_2d(*in.slice, cfg.pipeline, diag);
        else diag = segment_2d(*in.slice, cfg.pipeline).diagnostics;
      } else {
        if (eg_stage == 1) run_stage1_3d(*in.volume, cfg.pipeline, diag);
        else diag = segment_3d(*in.volume, cfg.pipeline).diagnostics;
      }
      const std::string prefix = eg_stage == 1 ? "stage1" : "stage2";
      std::string csv = "map,index,eigenvalue,elbow_k,k_used\n";
      for (const auto& m : diag.maps) {
        if (m.name.rfind(prefix, 0) != 0) continue;
        for (std::size_t i = 0; i < m.eigenvalues.size(); ++i) {
          csv += fmt::format("{},{},{},{},{}\n", m.name, i, format_double(m.eigenvalues[i]),
                             m.k_elbow ? std::to_string(*m.k_elbow) : "none", m.k_used);
        }
      }
      write_output(eg_out, csv);
    } else if (schema->parsed()) {
      write_output(sch_out, io::config_schema().dump(2) + "\n");
    }
  } catch (const Error& e) {
    std::cerr << "ERROR " << to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR INTERNAL: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace dmseg::cli
