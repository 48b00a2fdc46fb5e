#include "compact_sdf/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "compact_sdf/error.hpp"
#include "compact_sdf/io.hpp"

namespace csdf {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::kInvalidArgument,
              "invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, text);
  return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, text);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Access>
Field number(Access access) {
  return {[access](RunConfig& c, std::string_view k, std::string_view v) {
            access(c) = parse_number<T>(k, v);
          },
          [access](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>)
              return format_double(access(const_cast<RunConfig&>(c)));
            else
              return std::to_string(access(const_cast<RunConfig&>(c)));
          }};
}

template <class Access>
Field boolean(Access access) {
  return {[access](RunConfig& c, std::string_view k, std::string_view v) {
            access(c) = parse_bool(k, v);
          },
          [access](const RunConfig& c) {
            return std::string(access(const_cast<RunConfig&>(c)) ? "true" : "false");
          }};
}

#define FIELD(type, expr) number<type>([](RunConfig& c) -> auto& { return expr; })
#define FLAG(expr) boolean([](RunConfig& c) -> auto& { return expr; })

const std::map<std::string, Field, std::less<>>& registry() {
  static const std::map<std::string, Field, std::less<>> fields = {
      {"data.dir",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.data_dir = trim(v); },
        [](const RunConfig& c) { return c.data_dir.string(); }}},
      {"data.shapes",
       {[](RunConfig& c, std::string_view, std::string_view v) {
          c.shapes.clear();
          std::string item;
          std::istringstream in{std::string(v)};
          while (std::getline(in, item, ','))
            if (auto t = trim(item); !t.empty()) c.shapes.push_back(t);
        },
        [](const RunConfig& c) {
          std::string out;
          for (std::size_t i = 0; i < c.shapes.size(); ++i) out += (i ? "," : "") + c.shapes[i];
          return out;
        }}},
      {"output.dir",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.output_dir = trim(v); },
        [](const RunConfig& c) { return c.output_dir.string(); }}},
      {"run.seed", FIELD(std::uint64_t, c.seed)},

      {"sampling.coarse_resolution", FIELD(int, c.sampling.coarse_resolution)},
      {"sampling.fine_resolution", FIELD(int, c.sampling.fine_resolution)},
      {"sampling.layers", FIELD(int, c.sampling.layers)},

      {"model.latent_dim", FIELD(int, c.model.latent_dim)},
      {"model.grid_resolution", FIELD(int, c.model.grid_resolution)},
      {"model.feature_dim", FIELD(int, c.model.feature_dim)},
      {"model.hidden_layers", FIELD(int, c.model.hidden_layers)},
      {"model.hidden_width", FIELD(int, c.model.hidden_width)},
      {"model.pe_bands", FIELD(int, c.model.pos_enc.bands)},
      {"model.pe_include_input", FLAG(c.model.pos_enc.include_input)},
      {"model.grid_init_std", FIELD(double, c.model.grid_init_std)},

      {"train.epochs", FIELD(int, c.train.epochs)},
      {"train.lr_grid", FIELD(double, c.train.lr_grid)},
      {"train.lr_latent", FIELD(double, c.train.lr_latent)},
      {"train.lr_net", FIELD(double, c.train.lr_net)},
      {"train.decay", FIELD(double, c.train.decay)},
      {"train.decay_every", FIELD(int, c.train.decay_every)},
      {"train.lambda_latent", FIELD(double, c.train.lambda_latent)},
      {"train.lambda_grid", FIELD(double, c.train.lambda_grid)},
      {"train.sigma_latent", FIELD(double, c.train.sigma_latent)},
      {"train.sigma_grid", FIELD(double, c.train.sigma_grid)},
      {"train.batch_size", FIELD(std::size_t, c.train.batch_size)},
      {"train.checkpoint_every", FIELD(int, c.train.checkpoint_every)},
      {"train.ovf_in_band_only", FLAG(c.train.ovf_in_band_only)},

      {"infer.iterations", FIELD(int, c.infer.iterations)},
      {"infer.lr", FIELD(double, c.infer.lr)},
      {"infer.lambda_latent", FIELD(double, c.infer.lambda_latent)},
      {"infer.batch_size", FIELD(std::size_t, c.infer.batch_size)},

      {"reconstruct.resolution", FIELD(int, c.recon_resolution)},
      {"reconstruct.layers", FIELD(int, c.recon_layers)},

      {"metrics.n_points", FIELD(std::size_t, c.eval_points)},
      {"metrics.tau", FIELD(double, c.eval_tau)},
  };
  return fields;
}

#undef FIELD
#undef FLAG

const Field& lookup(std::string_view key) {
  const auto& r = registry();
  const auto it = r.find(key);
  if (it == r.end()) throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
  return it->second;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  lookup(trim(key)).set(*this, trim(key), value);
}

std::string RunConfig::get(std::string_view key) const { return lookup(trim(key)).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : registry()) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::apply_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw Error(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": bad section header");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::kParse, "config line " + std::to_string(lineno) + ": expected key = value");
    const std::string name = trim(std::string_view(t).substr(0, eq));
    const std::string key = section.empty() ? name : section + "." + name;
    if (key == "preset") {
      // A preset line resets every parameter; later lines override it.
      *this = make_preset(trim(std::string_view(t).substr(eq + 1)));
      continue;
    }
    set(key, std::string_view(t).substr(eq + 1));
  }
}

void RunConfig::apply_file(const std::filesystem::path& path) { apply_text(read_file(path)); }

std::string RunConfig::to_text() const {
  std::string out = "preset = " + preset + "\n";
  std::string section;
  for (const auto& key : keys()) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + get(key) + "\n";
  }
  return out;
}

void RunConfig::validate() const {
  train.validate();
  if (sampling.coarse_resolution < 1 || sampling.fine_resolution < 2 ||
      sampling.fine_resolution % sampling.coarse_resolution != 0 || sampling.layers < 0)
    throw Error(ErrorCode::kInvalidArgument,
                "sampling needs fine_resolution to be a multiple of coarse_resolution");
  if (model.latent_dim < 1 || model.feature_dim < 1 || model.grid_resolution < 2 ||
      model.hidden_layers < 1 || model.hidden_width < 1 || model.pos_enc.bands < 1)
    throw Error(ErrorCode::kInvalidArgument, "invalid model dimensions");
  if (recon_resolution < 2 || recon_layers < 0)
    throw Error(ErrorCode::kInvalidArgument, "invalid reconstruction settings");
  if (eval_points == 0 || !(eval_tau > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "invalid metric settings");
}

std::filesystem::path RunConfig::shape_path(std::size_t index) const {
  if (index >= shapes.size())
    throw Error(ErrorCode::kUnknownShape, "unknown shape id " + std::to_string(index));
  const std::filesystem::path p = shapes[index];
  return p.is_absolute() ? p : data_dir / p;
}

RunConfig make_preset(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "desk") {
    c.sampling = {32, 128, 3};
    c.model.latent_dim = 16;
    c.model.grid_resolution = 32;
    c.model.feature_dim = 16;
    c.model.hidden_layers = 4;
    c.model.hidden_width = 64;
    c.train.epochs = 400;
    c.train.decay_every = 100;
    // At G=32, F=16 a grid rate of 1e-1 leaves the features noisy enough to
    // put spurious zero crossings into the band.
    c.train.lr_grid = 1e-2;
    c.recon_resolution = 64;
    c.eval_points = 500000;
  } else if (name == "paper") {
    c.sampling = {128, 512, 3};
    c.model.latent_dim = 256;
    c.model.grid_resolution = 128;
    c.model.feature_dim = 128;
    c.model.hidden_layers = 8;
    c.model.hidden_width = 512;
    c.train.epochs = 4000;
    c.train.decay_every = 1000;
    c.train.lr_grid = 1e-1;
    c.recon_resolution = 512;
    c.eval_points = 500000;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + std::string(name) + "'");
  }
  c.model.pos_enc = {6, true};
  c.model.grid_init_std = 0.01;
  c.train.lr_latent = 1e-3;
  c.train.lr_net = 5e-4;
  c.train.decay = 0.5;
  c.train.lambda_latent = 1e-4;
  c.train.lambda_grid = 1e-4;
  c.train.sigma_latent = 1.0;
  c.train.sigma_grid = 1.0;
  c.train.batch_size = 8192;
  c.train.checkpoint_every = 100;
  c.train.ovf_in_band_only = false;
  c.infer.iterations = 800;
  c.infer.lr = 1e-2;
  c.infer.lambda_latent = 1e-4;
  c.infer.batch_size = 8192;
  c.recon_layers = 3;
  c.eval_tau = 0.01;
  return c;
}

}  // namespace csdf
