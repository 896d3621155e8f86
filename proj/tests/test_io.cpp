#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <string>

#include "dmseg/error.hpp"
#include "dmseg/io.hpp"

using namespace dmseg;

namespace {

Volume random_volume(std::size_t nx, std::size_t ny, std::size_t nz, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Volume v;
  v.nx = nx;
  v.ny = ny;
  v.nz = nz;
  v.spacing_um = {13.67, 4.81, 24.41};
  v.intensities.resize(nx * ny * nz);
  for (double& x : v.intensities) x = u(rng);
  return v;
}

// Error code and the message of a throwing call.
template <class Fn>
std::pair<ErrorCode, std::string> error_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return {e.code(), e.what()};
  }
  return {ErrorCode::Io, "no error"};
}

SurfaceSet sample_surfaces(std::size_t cols, std::size_t slices) {
  SurfaceSet s(cols, slices);
  for (std::size_t id : {kS1, kS6a, kS7, kS10}) {
    Surface& surf = s.emplace(id, Provenance::GradientRefined);
    for (std::size_t i = 0; i < surf.rows.size(); ++i) {
      surf.rows[i] = 100.0 + 10.0 * static_cast<double>(id) + 0.001 * static_cast<double>(i * 37 % 1000);
      if (i % 5 == 0) surf.provenance[i] = Provenance::Interpolated;
    }
  }
  s.at(kS6a).rows[3] = std::nan("");
  return s;
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("volume round trip is byte-exact for both dtypes") {
  const Volume v = random_volume(7, 5, 3, 1);
  for (io::Dtype dt : {io::Dtype::U8, io::Dtype::U16LE}) {
    const std::string a = io::encode_volume(v, dt);
    const Volume back = io::decode_volume(a);
    CHECK(back.nx == 7);
    CHECK(back.ny == 5);
    CHECK(back.nz == 3);
    CHECK(back.spacing_um == v.spacing_um);
    CHECK(io::encode_volume(back, dt) == a);
    const double step = dt == io::Dtype::U8 ? 1.0 / 255.0 : 1.0 / 65535.0;
    for (std::size_t i = 0; i < v.intensities.size(); ++i) {
      CHECK(std::abs(back.intensities[i] - v.intensities[i]) <= 0.5 * step + 1e-12);
    }
  }
}

TEST_CASE("volume header and payload layout") {
  Volume v = random_volume(2, 1, 1, 2);
  v.intensities = {0.0, 1.0};
  const std::string bytes = io::encode_volume(v, io::Dtype::U16LE);
  const std::size_t eol = bytes.find('\n');
  CHECK(bytes.substr(0, eol) ==
        R"({"magic":"DMSEG-VOL1","dims":[2,1,1],"spacing_um":[13.67,4.81,24.41],"dtype":"u16le"})");
  CHECK(bytes.size() == eol + 1 + 4);
  CHECK(static_cast<unsigned char>(bytes[eol + 3]) == 0xff);
  CHECK(static_cast<unsigned char>(bytes[eol + 4]) == 0xff);
}

TEST_CASE("malformed volumes report a byte offset") {
  const std::string good = io::encode_volume(random_volume(4, 4, 2, 3), io::Dtype::U8);
  auto [code, msg] = error_of([&] { io::decode_volume(good.substr(0, good.size() - 3)); });
  CHECK(code == ErrorCode::Parse);
  const std::size_t eol = good.find('\n');
  CHECK(msg.find("byte " + std::to_string(good.size() - 3)) != std::string::npos);
  CHECK(eol > 0);

  auto [c2, m2] = error_of([] { io::decode_volume("{\"magic\":\"DMSEG-VOL1\",}\n"); });
  CHECK(c2 == ErrorCode::Parse);
  CHECK(m2.rfind("byte 22", 0) == 0);

  auto [c3, m3] = error_of([] {
    io::decode_volume(R"({"magic":"DMSEG-VOL1","dims":[1,1,1],"spacing_um":[1,1,1],"dtype":"u8","x":1})"
                      "\n\x01");
  });
  CHECK(c3 == ErrorCode::Parse);
  CHECK(m3.find("unknown key") != std::string::npos);
  CHECK(error_of([] { io::decode_volume("no newline"); }).first == ErrorCode::Parse);
  CHECK(error_of([] {
          io::decode_volume(R"({"magic":"OTHER","dims":[1,1,1],"spacing_um":[1,1,1],"dtype":"u8"})"
                            "\n\x01");
        }).first == ErrorCode::Parse);
}

TEST_CASE("PGM 8 and 16 bit") {
  std::string p8 = "P5\n# comment\n3 2\n255\n";
  for (int v : {0, 51, 255, 102, 204, 153}) p8.push_back(static_cast<char>(v));
  const ImageSlice a = io::decode_pgm(p8);
  CHECK(a.rows == 2);
  CHECK(a.cols == 3);
  CHECK(a.at(0, 1) == doctest::Approx(0.2));
  CHECK(a.at(1, 1) == doctest::Approx(0.8));

  std::string p16 = "P5 2 1 65535\n";
  p16 += std::string("\xff\xff\x80\x00", 4);
  const ImageSlice b = io::decode_pgm(p16);
  CHECK(b.at(0, 0) == 1.0);
  CHECK(b.at(0, 1) == doctest::Approx(32768.0 / 65535.0));
}

TEST_CASE("PGM round trip and errors") {
  ImageSlice img;
  img.rows = 4;
  img.cols = 5;
  for (int i = 0; i < 20; ++i) img.intensities.push_back(i / 19.0);
  for (int maxval : {255, 65535}) {
    const std::string a = io::encode_pgm(img, maxval);
    CHECK(io::encode_pgm(io::decode_pgm(a), maxval) == a);
  }
  auto [code, msg] = error_of([] { io::decode_pgm("P5\n3 2\n255\n\x01\x02"); });
  CHECK(code == ErrorCode::Parse);
  CHECK(msg.rfind("byte 13", 0) == 0);
  CHECK(error_of([] { io::decode_pgm("P2\n1 1\n255\n1"); }).first == ErrorCode::Parse);
  CHECK(error_of([] { io::decode_pgm("P5\nx 1\n255\n\x01"); }).second.rfind("byte 3", 0) == 0);
}

TEST_CASE("overlay draws each surface in its colour") {
  ImageSlice img;
  img.rows = 20;
  img.cols = 4;
  img.intensities.assign(80, 0.5);
  SurfaceSet s(4, 1);
  s.set(kS1, {3.2, 3.4, 3.6, std::nan("")}, Provenance::Clustered);
  s.set(kS7, {10, 10, 10, 10}, Provenance::Clustered);
  const std::string ppm = io::render_overlay(img, s);
  const std::string header = "P6\n4 20\n255\n";
  REQUIRE(ppm.rfind(header, 0) == 0);
  CHECK(ppm.size() == header.size() + 20 * 4 * 3);
  const auto px = [&](std::size_t r, std::size_t c, int ch) {
    return static_cast<unsigned char>(ppm[header.size() + (r * 4 + c) * 3 + ch]);
  };
  CHECK(px(3, 0, 0) == 255);
  CHECK(px(3, 0, 1) == 0);
  CHECK(px(4, 2, 0) == 255);
  CHECK(px(3, 3, 0) == 128);  // undefined sample leaves the gray pixel
  CHECK(px(10, 1, 2) == 255);
  CHECK(px(0, 0, 0) == 128);
}

TEST_CASE("surface CSV round trip and ordering") {
  const SurfaceSet s = sample_surfaces(6, 3);
  const std::string a = io::encode_surfaces(s);
  CHECK(a.rfind("surface_id,z_index,column,row_px,provenance\n1,0,0,100.000,interpolated\n", 0) == 0);
  // 6a sorts between 6 and 7, slices before columns.
  CHECK(a.find("6a,") < a.find("\n7,"));
  CHECK(a.find("1,1,0,") > a.find("1,0,5,"));
  CHECK(a.find("6a,0,3,nan,") != std::string::npos);
  const SurfaceSet back = io::decode_surfaces(a);
  CHECK(back.cols == 6);
  CHECK(back.slices == 3);
  CHECK(back.present() == s.present());
  CHECK(io::encode_surfaces(back) == a);
}

TEST_CASE("2D surfaces use slice 0 and three decimals") {
  SurfaceSet s(2, 1);
  s.set(kS10, {1.23456, -0.0001}, Provenance::Clustered);
  CHECK(io::encode_surfaces(s) ==
        "surface_id,z_index,column,row_px,provenance\n10,0,0,1.235,clustered\n10,0,1,0.000,clustered\n");
}

TEST_CASE("malformed surface CSV") {
  const std::string h = "surface_id,z_index,column,row_px,provenance\n";
  auto [code, msg] = error_of([&] {
    io::decode_surfaces(h + "2,0,1,5.000,clustered\n2,0,0,5.000,clustered\n");
  });
  CHECK(code == ErrorCode::Parse);
  CHECK(msg.rfind("byte " + std::to_string(h.size() + 22), 0) == 0);
  CHECK(error_of([&] { io::decode_surfaces(h + "12,0,0,5.000,clustered\n"); }).second.rfind(
            "byte " + std::to_string(h.size()), 0) == 0);
  CHECK(error_of([&] { io::decode_surfaces(h + "1,0,0,abc,clustered\n"); }).first == ErrorCode::Parse);
  CHECK(error_of([&] { io::decode_surfaces(h + "1,0,0,1.0\n"); }).first == ErrorCode::Parse);
  CHECK(error_of([&] { io::decode_surfaces(h + "1,0,0,1.0,guessed\n"); }).first == ErrorCode::Parse);
  CHECK(error_of([] { io::decode_surfaces("row,col\n"); }).first == ErrorCode::Parse);
}

TEST_CASE("config defaults round trip") {
  const io::Config defaults;
  const io::json j = io::to_json(defaults);
  const io::Config back = io::config_from_json(j);
  CHECK(io::to_json(back) == j);
  CHECK(j["pipeline"]["k_stage1"] == 3);
  CHECK(j["pipeline"]["surface8_polarity"] == "darkening");
}

TEST_CASE("config errors list every offending path") {
  auto [code, msg] = error_of([] {
    io::parse_config(R"({"pipeline":{"tau":"x","bogus":1,"smoothing":{"nope":2},
                       "stage1_block_2d":[10]},"phantom":{"canal":{"bad":1}},"extra":1})");
  });
  CHECK(code == ErrorCode::Config);
  for (const char* path : {"/pipeline/tau", "/pipeline/bogus", "/pipeline/smoothing/nope",
                           "/pipeline/stage1_block_2d", "/phantom/canal/bad", "/extra"}) {
    CHECK(msg.find(path) != std::string::npos);
  }
  auto [c2, m2] = error_of([] { io::parse_config(R"({"pipeline":{"tau":1,}})"); });
  CHECK(c2 == ErrorCode::Parse);
  CHECK(m2.rfind("byte 21", 0) == 0);
  // Known keys with invalid values.
  CHECK(error_of([] { io::parse_config(R"({"pipeline":{"k_stage2":1}})"); }).first ==
        ErrorCode::Config);
}

TEST_CASE("config values and phantom presets") {
  const io::Config c = io::parse_config(
      R"({"pipeline":{"tau":2,"surface1_polarity":"darkening","layer_depth_prior":[0.1,0.2,0.3,0.4,0.5,0.6]},
          "phantom":{"variant":"merged","nz":3,"vessels":[{"center_x":30,"width":4}],
                     "bump":{"amplitude":5}}})");
  CHECK(c.pipeline.tau == 2);
  CHECK(c.pipeline.surface1_polarity == EdgePolarity::Darkening);
  CHECK(c.pipeline.layer_depth_prior[5] == 0.6);
  CHECK(c.phantom.intensity == merged_phantom_spec().intensity);
  CHECK(c.phantom.nz == 3);
  REQUIRE(c.phantom.vessels.size() == 1);
  CHECK(c.phantom.vessels[0].width == 4.0);
  CHECK(c.phantom.vessels[0].attenuation == VesselShadow{}.attenuation);
  REQUIRE(c.phantom.bump.has_value());
  CHECK(c.phantom.bump->amplitude == 5.0);
  CHECK_FALSE(c.phantom.canal.has_value());
}

TEST_CASE("DMSEG_SEED overrides the configured seed") {
  ::setenv("DMSEG_SEED", "77", 1);
  CHECK(io::load_config({}).pipeline.seed == 77);
  ::setenv("DMSEG_SEED", "-3", 1);
  CHECK(error_of([] { io::load_config({}); }).first == ErrorCode::Config);
  ::unsetenv("DMSEG_SEED");
  CHECK(io::load_config({}).pipeline.seed == PipelineConfig{}.seed);
}

TEST_CASE("published schema matches the key tables") {
  const io::json schema = io::config_schema();
  const io::json file = io::json::parse(io::read_file(DMSEG_SOURCE_DIR "/schema/config.schema.json"));
  CHECK(file == schema);
  const io::json defaults = io::to_json(io::Config{});
  for (const char* section : {"pipeline", "phantom"}) {
    const auto& props = schema["properties"][section]["properties"];
    for (const auto& [key, _] : defaults[section].items()) CHECK(props.contains(key));
  }
  CHECK(schema["properties"]["pipeline"]["properties"].size() == defaults["pipeline"].size());
  CHECK(schema["properties"]["pipeline"]["additionalProperties"] == false);
}

TEST_CASE("error report JSON") {
  SurfaceSet t(3, 1);
  t.set(kS1, {1, 2, 3}, Provenance::Clustered);
  t.set(kS7, {5, 6, 7}, Provenance::Clustered);
  const io::json j = io::to_json(border_errors(t, t, 4.81));
  CHECK(j["axial_um"] == 4.81);
  CHECK(j["surfaces"][1]["surface"] == "7");
  CHECK(j["overall"]["unsigned_mean_um"] == 0.0);
  CHECK(j["thickness"][0]["to"] == "7");
}

}  // TEST_SUITE
