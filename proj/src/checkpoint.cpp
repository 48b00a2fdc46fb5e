#include <cmath>

#include "binary_io.hpp"
#include "compact_sdf/error.hpp"
#include "compact_sdf/io.hpp"
#include "compact_sdf/model.hpp"

namespace csdf {
namespace {

constexpr char kMagic[4] = {'C', 'S', 'D', 'F'};
constexpr std::uint32_t kVersion = 1;

void put_widths(detail::ByteWriter& w, const Mlp<float>& mlp) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(mlp.layer_count()));
  for (int width : mlp.widths()) w.put<std::uint32_t>(static_cast<std::uint32_t>(width));
}

std::vector<int> get_widths(detail::ByteReader& r) {
  const auto layers = r.get<std::uint32_t>();
  if (layers < 2 || layers > 1024) throw Error(ErrorCode::kParse, "checkpoint: bad layer count");
  std::vector<int> widths(layers + 1);
  for (auto& w : widths) {
    w = static_cast<int>(r.get<std::uint32_t>());
    if (w < 1 || w > (1 << 20)) throw Error(ErrorCode::kParse, "checkpoint: bad layer width");
  }
  if (widths.back() != 1) throw Error(ErrorCode::kParse, "checkpoint: branch output must be scalar");
  return widths;
}

Mlp<float> shaped_mlp(const std::vector<int>& widths) {
  Mlp<float> mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    mlp.weights.emplace_back(widths[l + 1], widths[l]);
    mlp.biases.emplace_back(widths[l + 1]);
  }
  return mlp;
}

void put_params(detail::ByteWriter& w, const Parameters<float>& p) {
  p.for_each_block([&](const float* data, Eigen::Index n, ParamGroup) {
    for (Eigen::Index i = 0; i < n; ++i) w.put<float>(data[i]);
  });
}

void get_params(detail::ByteReader& r, Parameters<float>& p) {
  p.for_each_block([&](float* data, Eigen::Index n, ParamGroup) {
    for (Eigen::Index i = 0; i < n; ++i) data[i] = r.get<float>();
  });
}

}  // namespace

std::string encode_checkpoint(const ModelState<float>& state) {
  const ModelConfig& c = state.config;
  detail::ByteWriter w;
  w.reserve(12 * state.params.scalar_count() + 256);
  w.put_bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.latent_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.feature_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.grid_resolution));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.pos_enc.bands));
  put_widths(w, state.params.gen);
  put_widths(w, state.params.ovf);
  w.put<std::uint32_t>(state.shape_count());
  w.put<std::uint32_t>(state.epoch);
  w.put<std::uint64_t>(state.step);
  put_params(w, state.params);
  put_params(w, state.adam_m);
  put_params(w, state.adam_v);
  return w.take();
}

ModelState<float> decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (r.get_bytes(4) != std::string_view(kMagic, 4))
    throw Error(ErrorCode::kParse, "checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw Error(ErrorCode::kParse, "checkpoint: unsupported version " + std::to_string(version));

  ModelConfig c;
  c.latent_dim = static_cast<int>(r.get<std::uint32_t>());
  c.feature_dim = static_cast<int>(r.get<std::uint32_t>());
  c.grid_resolution = static_cast<int>(r.get<std::uint32_t>());
  c.pos_enc.bands = static_cast<int>(r.get<std::uint32_t>());
  if (c.latent_dim < 1 || c.feature_dim < 1 || c.grid_resolution < 2 || c.pos_enc.bands < 1 ||
      c.grid_resolution > 4096 || c.pos_enc.bands > 30)
    throw Error(ErrorCode::kParse, "checkpoint: bad dimensions");
  const auto gen = get_widths(r);
  const auto ovf = get_widths(r);

  const int pe_without_input = 6 * c.pos_enc.bands;
  if (gen[0] == pe_without_input + 3 + c.latent_dim) {
    c.pos_enc.include_input = true;
  } else if (gen[0] == pe_without_input + c.latent_dim) {
    c.pos_enc.include_input = false;
  } else {
    throw Error(ErrorCode::kParse, "checkpoint: generalization input width does not match");
  }
  if (ovf[0] != c.ovf_input_width())
    throw Error(ErrorCode::kParse, "checkpoint: overfitting input width does not match");
  if (gen.size() != ovf.size())
    throw Error(ErrorCode::kParse, "checkpoint: branches differ in depth");
  c.hidden_layers = static_cast<int>(gen.size()) - 2;
  c.hidden_width = gen[1];

  const auto shapes = r.get<std::uint32_t>();
  if (shapes < 1) throw Error(ErrorCode::kParse, "checkpoint: no shapes");

  ModelState<float> st;
  st.config = c;
  st.epoch = r.get<std::uint32_t>();
  st.step = r.get<std::uint64_t>();
  st.params.gen = shaped_mlp(gen);
  st.params.ovf = shaped_mlp(ovf);
  st.params.grid = FeatureGrid<float>(c.grid_resolution, c.feature_dim);
  st.params.latents = Tensor<float>(c.latent_dim, shapes);

  const std::size_t needed = 3 * sizeof(float) * st.params.scalar_count();
  if (r.remaining() != needed)
    throw Error(ErrorCode::kParse, "checkpoint: payload is " + std::to_string(r.remaining()) +
                                       " bytes, expected " + std::to_string(needed));
  st.adam_m = st.params.zeros_like();
  st.adam_v = st.params.zeros_like();
  get_params(r, st.params);
  get_params(r, st.adam_m);
  get_params(r, st.adam_v);
  return st;
}

void save_checkpoint(const ModelState<float>& state, const std::filesystem::path& path) {
  atomic_write_file(path, encode_checkpoint(state));
}

ModelState<float> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace csdf
