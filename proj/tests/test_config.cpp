#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "compact_sdf/config.hpp"
#include "compact_sdf/error.hpp"

using namespace csdf;

TEST_CASE("desk and paper presets") {
  const auto desk = make_preset("desk");
  CHECK(desk.model.latent_dim == 16);
  CHECK(desk.model.grid_resolution == 32);
  CHECK(desk.sampling.fine_resolution == 128);
  CHECK(desk.train.epochs == 400);
  const auto paper = make_preset("paper");
  CHECK(paper.model.latent_dim == 256);
  CHECK(paper.model.hidden_width == 512);
  CHECK(paper.sampling.fine_resolution == 512);
  CHECK(paper.train.lr_grid == 1e-1);
  CHECK_NOTHROW(desk.validate());
  CHECK_NOTHROW(paper.validate());
  CHECK_THROWS_AS(make_preset("huge"), Error);
}

TEST_CASE("every key round-trips through get and set") {
  auto c = make_preset("desk");
  for (const auto& key : RunConfig::keys()) {
    const std::string v = c.get(key);
    auto d = make_preset("paper");
    d.set(key, v);
    CHECK_MESSAGE(d.get(key) == v, key);
  }
}

TEST_CASE("bad keys and values are rejected") {
  auto c = make_preset("desk");
  CHECK_THROWS_AS(c.set("train.nope", "1"), Error);
  CHECK_THROWS_AS(c.set("train.epochs", "ten"), Error);
  CHECK_THROWS_AS(c.set("train.epochs", "10x"), Error);
  CHECK_THROWS_AS(c.set("model.pe_include_input", "maybe"), Error);
  c.set("sampling.fine_resolution", "100");
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("text files with sections and a preset line") {
  auto c = make_preset("desk");
  c.set("train.epochs", "7");
  c.apply_text("# comment\npreset = desk\n[train]\nlr_net = 0.25\n\n[data]\nshapes = a.obj, b.ply\n");
  CHECK(c.train.epochs == 400);  // the preset line reset it
  CHECK(c.train.lr_net == 0.25);
  REQUIRE(c.shapes.size() == 2);
  CHECK(c.shapes[1] == "b.ply");
  CHECK_THROWS_AS(c.apply_text("[train\n"), Error);
  CHECK_THROWS_AS(c.apply_text("epochs 3\n"), Error);
}

TEST_CASE("to_text reproduces the config") {
  auto c = make_preset("paper");
  c.set("run.seed", "99");
  c.set("metrics.tau", "0.005");
  RunConfig d = make_preset("desk");
  d.apply_text(c.to_text());
  CHECK(d.to_text() == c.to_text());
}

TEST_CASE("apply_file and shape paths") {
  const auto p = std::filesystem::temp_directory_path() / "compact_sdf_test_config.conf";
  {
    std::ofstream f(p);
    f << "[data]\ndir = meshes\nshapes = x.obj, /abs/y.obj\n";
  }
  auto c = make_preset("desk");
  c.apply_file(p);
  std::filesystem::remove(p);
  CHECK(c.shape_path(0) == std::filesystem::path("meshes/x.obj"));
  CHECK(c.shape_path(1) == std::filesystem::path("/abs/y.obj"));
  CHECK_THROWS_AS(c.shape_path(2), Error);
  CHECK_THROWS_AS(c.apply_file("/nonexistent/compact_sdf.conf"), Error);
}
