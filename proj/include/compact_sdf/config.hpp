#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "compact_sdf/model.hpp"
#include "compact_sdf/sampling.hpp"

namespace csdf {

// Every pipeline parameter. Keys are "section.name"; presets set all of them.
struct RunConfig {
  std::string preset;
  std::filesystem::path data_dir = ".";
  std::vector<std::string> shapes;  // mesh files, relative to data_dir
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  QueryConfig sampling;
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
  int recon_resolution = 64;
  int recon_layers = 3;
  std::size_t eval_points = 30000;
  double eval_tau = 0.01;

  // Throws Error(kInvalidArgument) for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  // `[section]` headers, `name = value` lines, `#` comments.
  void apply_text(std::string_view text);
  void apply_file(const std::filesystem::path& path);
  std::string to_text() const;

  void validate() const;
  std::filesystem::path shape_path(std::size_t index) const;
};

// "desk" or "paper"; throws for anything else.
RunConfig make_preset(std::string_view name);

}  // namespace csdf
