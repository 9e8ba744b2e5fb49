// Copyright 2026 The mimkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mimkit/model.hpp"

#include <cmath>
#include <fstream>

#include "mimkit/json_fields.hpp"
#include "mimkit/rng.hpp"
#include "mimkit/tensor_io.hpp"

namespace mimkit {

// ---- config -------------------------------------------------------------------

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model." + msg); };
  if (patch_side == 0 || image_side == 0 || channels == 0) fail("image_side/channels/patch_side must be positive");
  if (image_side % patch_side != 0) fail("image_side must be a multiple of patch_side");
  if (enc_depth < 1) fail("enc_depth must be >= 1");
  if (dec_depth < 1) fail("dec_depth must be >= 1");
  if (enc_heads == 0 || embed_dim % enc_heads != 0) fail("embed_dim must be divisible by enc_heads");
  if (dec_heads == 0 || dec_width % dec_heads != 0) fail("dec_width must be divisible by dec_heads");
  if (embed_dim == 0 || embed_dim % 4 != 0) fail("embed_dim must be a positive multiple of 4 (sine-cosine table)");
  if (dec_width == 0 || dec_width % 4 != 0) fail("dec_width must be a positive multiple of 4 (sine-cosine table)");
  if (target_dim == 0) fail("target_dim must be positive");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_side", c.image_side}, {"channels", c.channels},   {"patch_side", c.patch_side},
                     {"embed_dim", c.embed_dim},   {"enc_depth", c.enc_depth}, {"enc_heads", c.enc_heads},
                     {"mlp_ratio", c.mlp_ratio},   {"dec_depth", c.dec_depth}, {"dec_width", c.dec_width},
                     {"dec_heads", c.dec_heads},   {"target_dim", c.target_dim}, {"proj_hidden", c.proj_hidden},
                     {"use_cls", c.use_cls},       {"multi_block", c.multi_block},
                     {"aggregate", c.aggregate == Aggregate::kMean ? "mean" : "sum"}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  using namespace json_fields;
  const std::string s = "model";
  check_keys(j, s,
             {"image_side", "channels", "patch_side", "embed_dim", "enc_depth", "enc_heads", "mlp_ratio", "dec_depth",
              "dec_width", "dec_heads", "target_dim", "proj_hidden", "use_cls", "multi_block", "aggregate"});
  c.image_side = get(j, s, "image_side", c.image_side);
  c.channels = get(j, s, "channels", c.channels);
  c.patch_side = get(j, s, "patch_side", c.patch_side);
  c.embed_dim = get(j, s, "embed_dim", c.embed_dim);
  c.enc_depth = get(j, s, "enc_depth", c.enc_depth);
  c.enc_heads = get(j, s, "enc_heads", c.enc_heads);
  c.mlp_ratio = get(j, s, "mlp_ratio", c.mlp_ratio);
  c.dec_depth = get(j, s, "dec_depth", c.dec_depth);
  c.dec_width = get(j, s, "dec_width", c.dec_width);
  c.dec_heads = get(j, s, "dec_heads", c.dec_heads);
  c.target_dim = get(j, s, "target_dim", c.target_dim);
  c.proj_hidden = get(j, s, "proj_hidden", c.proj_hidden);
  c.use_cls = get(j, s, "use_cls", c.use_cls);
  c.multi_block = get(j, s, "multi_block", c.multi_block);
  const std::string agg = get<std::string>(j, s, "aggregate", c.aggregate == Aggregate::kMean ? "mean" : "sum");
  if (agg == "mean") {
    c.aggregate = Aggregate::kMean;
  } else if (agg == "sum") {
    c.aggregate = Aggregate::kSum;
  } else {
    throw ConfigError("model.aggregate: expected \"mean\" or \"sum\"");
  }
}

// ---- construction -------------------------------------------------------------

template <typename T>
Tensor<T> sincos_pos_embed(std::size_t grid_side, std::size_t dim) {
  if (dim % 4 != 0) throw ConfigError("sine-cosine table needs a dimension divisible by 4");
  const std::size_t quarter = dim / 4;
  Tensor<T> table({grid_side * grid_side, dim});
  for (std::size_t r = 0; r < grid_side; ++r) {
    for (std::size_t c = 0; c < grid_side; ++c) {
      const std::size_t row = r * grid_side + c;
      for (std::size_t i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        const double ac = static_cast<double>(c) * omega, ar = static_cast<double>(r) * omega;
        table[row * dim + i] = static_cast<T>(std::sin(ac));
        table[row * dim + quarter + i] = static_cast<T>(std::cos(ac));
        table[row * dim + 2 * quarter + i] = static_cast<T>(std::sin(ar));
        table[row * dim + 3 * quarter + i] = static_cast<T>(std::cos(ar));
      }
    }
  }
  return table;
}

namespace {

struct Initializer {
  Rng rng;

  template <typename T>
  Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor<T> w({fan_in, fan_out});
    for (auto& v : w.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return w;
  }

  template <typename T>
  Tensor<T> gaussian(std::size_t n, double sd) {
    Tensor<T> t({n});
    for (auto& v : t.mutable_data()) v = static_cast<T>(sd * rng.normal());
    return t;
  }
};

template <typename T>
void add_linear(ParamMap<T>& p, Initializer& init, const std::string& name, std::size_t in, std::size_t out) {
  p.emplace(name + ".w", init.xavier<T>(in, out));
  p.emplace(name + ".b", Tensor<T>({out}));
}

template <typename T>
void add_norm(ParamMap<T>& p, const std::string& name, std::size_t dim) {
  p.emplace(name + ".g", Tensor<T>::full({dim}, T(1)));
  p.emplace(name + ".b", Tensor<T>({dim}));
}

template <typename T>
void add_block(ParamMap<T>& p, Initializer& init, const std::string& name, std::size_t dim, std::size_t mlp_ratio) {
  add_norm(p, name + ".ln1", dim);
  add_linear(p, init, name + ".attn.qkv", dim, 3 * dim);
  add_linear(p, init, name + ".attn.proj", dim, dim);
  add_norm(p, name + ".ln2", dim);
  add_linear(p, init, name + ".mlp.fc1", dim, mlp_ratio * dim);
  add_linear(p, init, name + ".mlp.fc2", mlp_ratio * dim, dim);
}

}  // namespace

template <typename T>
StudentModel<T>::StudentModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Initializer init{Rng(seed)};
  const ModelConfig& c = config_;
  add_linear(params_, init, "patch_embed", c.patch_dim(), c.embed_dim);
  if (c.use_cls) params_.emplace("cls_token", init.gaussian<T>(c.embed_dim, 0.02));
  for (std::size_t l = 0; l < c.enc_depth; ++l) add_block(params_, init, "enc." + std::to_string(l), c.embed_dim, c.mlp_ratio);
  add_norm(params_, "enc.norm", c.embed_dim);
  add_linear(params_, init, "dec.embed", c.embed_dim, c.dec_width);
  params_.emplace("mask_token", init.gaussian<T>(c.dec_width, 0.02));
  for (std::size_t l = 0; l < c.dec_depth; ++l) add_block(params_, init, "dec." + std::to_string(l), c.dec_width, c.mlp_ratio);
  add_norm(params_, "dec.norm", c.dec_width);
  add_linear(params_, init, "dec.pred", c.dec_width, c.target_dim);
  add_linear(params_, init, "proj.fc1", c.embed_dim, c.projector_hidden());
  add_linear(params_, init, "proj.fc2", c.projector_hidden(), c.target_dim);
  enc_pos_ = sincos_pos_embed<T>(c.grid_side(), c.embed_dim);
  dec_pos_ = sincos_pos_embed<T>(c.grid_side(), c.dec_width);
}

template <typename T>
StudentModel<T>::StudentModel(const ModelConfig& config, ParamMap<T> params) : config_(config) {
  config_.validate();
  const StudentModel reference(config_, 0);
  for (const auto& [name, ref] : reference.params_) {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("checkpoint is missing parameter " + name);
    if (it->second.shape() != ref.shape()) {
      throw DataError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                      shape_str(ref.shape()));
    }
  }
  if (params.size() != reference.params_.size()) throw DataError("checkpoint has unexpected parameters");
  params_ = std::move(params);
  enc_pos_ = reference.enc_pos_;
  dec_pos_ = reference.dec_pos_;
}

template <typename T>
ParamMap<T> StudentModel<T>::bind(Tape<T>* tape) const {
  if (!tape) return params_;
  ParamMap<T> bound;
  for (const auto& [name, value] : params_) bound.emplace(name, tape->parameter(name, value));
  return bound;
}

template <typename T>
std::size_t StudentModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, value] : params_) n += value.numel();
  return n;
}

// ---- forward ------------------------------------------------------------------

namespace {

template <typename T>
const Tensor<T>& param(const ParamMap<T>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw ContractError("unknown parameter " + name);
  return it->second;
}

template <typename T>
Tensor<T> linear(const ParamMap<T>& p, const std::string& name, const Tensor<T>& x) {
  return add_rowwise(matmul(x, param(p, name + ".w")), param(p, name + ".b"));
}

template <typename T>
Tensor<T> norm(const ParamMap<T>& p, const std::string& name, const Tensor<T>& x) {
  return layer_norm(x, param(p, name + ".g"), param(p, name + ".b"), static_cast<T>(kLayerNormEps));
}

template <typename T>
Tensor<T> attention(const ParamMap<T>& p, const std::string& name, const Tensor<T>& x, std::size_t heads) {
  const std::size_t dim = x.dim(1), head_dim = dim / heads;
  const Tensor<T> qkv = linear(p, name + ".qkv", x);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<Tensor<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> q = slice_cols(qkv, h * head_dim, head_dim);
    const Tensor<T> k = slice_cols(qkv, dim + h * head_dim, head_dim);
    const Tensor<T> v = slice_cols(qkv, 2 * dim + h * head_dim, head_dim);
    const Tensor<T> weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt), 1);
    outs.push_back(matmul(weights, v));
  }
  return linear(p, name + ".proj", concat_cols(outs));
}

// Pre-norm transformer block.
template <typename T>
Tensor<T> block(const ParamMap<T>& p, const std::string& name, const Tensor<T>& x, std::size_t heads) {
  const Tensor<T> a = add(x, attention(p, name + ".attn", norm(p, name + ".ln1", x), heads));
  const Tensor<T> hidden = gelu(linear(p, name + ".mlp.fc1", norm(p, name + ".ln2", a)));
  return add(a, linear(p, name + ".mlp.fc2", hidden));
}

}  // namespace

template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_side) {
  if (image.rank() != 3) throw DimensionError("image must be [C x H x W], got " + shape_str(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h != w || patch_side == 0 || h % patch_side != 0) {
    throw DimensionError("image " + shape_str(image.shape()) + " is not a square multiple of patch side " +
                         std::to_string(patch_side));
  }
  const std::size_t g = h / patch_side, pd = c * patch_side * patch_side;
  Tensor<T> out({g * g, pd});
  for (std::size_t pr = 0; pr < g; ++pr)
    for (std::size_t pc = 0; pc < g; ++pc) {
      T* dst = out.mutable_data().data() + (pr * g + pc) * pd;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < patch_side; ++y)
          for (std::size_t x = 0; x < patch_side; ++x)
            *dst++ = image[(ch * h + pr * patch_side + y) * w + pc * patch_side + x];
    }
  return out;
}

template <typename T>
Tensor<T> embed_patches(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image) {
  const ModelConfig& c = model.config();
  if (image.rank() != 3 || image.dim(0) != c.channels || image.dim(1) != c.image_side || image.dim(2) != c.image_side) {
    throw DimensionError("image " + shape_str(image.shape()) + " does not match model geometry " +
                         shape_str({c.channels, c.image_side, c.image_side}));
  }
  return linear(p, "patch_embed", patchify(image, c.patch_side));
}

template <typename T>
Tensor<T> patch_embed(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image) {
  return add(embed_patches(model, p, image), model.encoder_pos());
}

template <typename T>
StudentOutput<T> encode_visible(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& tokens,
                                const PatchMask& mask) {
  const ModelConfig& c = model.config();
  if (mask.num_patches() != c.num_patches()) throw DimensionError("mask grid does not match model grid");
  if (mask.visible().empty()) throw DegenerateMaskError("encoder needs at least one visible patch");
  const std::size_t v = mask.visible().size();
  Tensor<T> x = gather_rows(tokens, std::span<const std::size_t>(mask.visible()));
  const std::size_t offset = c.use_cls ? 1 : 0;
  if (c.use_cls) x = concat_rows(reshape(param(p, "cls_token"), {1, c.embed_dim}), x);
  StudentOutput<T> out;
  for (std::size_t l = 0; l < c.enc_depth; ++l) {
    x = block(p, "enc." + std::to_string(l), x, c.enc_heads);
    out.layers.push_back(slice_rows(x, offset, v));
    if (c.use_cls) out.cls_layers.push_back(slice_rows(x, 0, 1));
  }
  return out;
}

template <typename T>
Tensor<T> aggregate_multi_block(const std::vector<Tensor<T>>& layers, const ModelConfig& config) {
  if (layers.empty()) throw ContractError("aggregate_multi_block: no encoder layers");
  if (!config.multi_block) return layers.back();
  Tensor<T> total = layers.front();
  for (std::size_t l = 1; l < layers.size(); ++l) total = add(total, layers[l]);
  if (config.aggregate == Aggregate::kSum || layers.size() == 1) return total;
  return scale(total, T(1) / static_cast<T>(layers.size()));
}

template <typename T>
Tensor<T> decode(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& h_visible, const PatchMask& mask) {
  const ModelConfig& c = model.config();
  const Tensor<T> vis = linear(p, "dec.embed", norm(p, "enc.norm", h_visible));
  Tensor<T> x = scatter_rows(repeat_rows(param(p, "mask_token"), c.num_patches()), vis,
                             std::span<const std::size_t>(mask.visible()));
  x = add(x, model.decoder_pos());
  for (std::size_t l = 0; l < c.dec_depth; ++l) x = block(p, "dec." + std::to_string(l), x, c.dec_heads);
  return linear(p, "dec.pred", norm(p, "dec.norm", x));
}

template <typename T>
Tensor<T> project_global(const StudentModel<T>& /*model*/, const ParamMap<T>& p, const Tensor<T>& tokens) {
  if (tokens.rank() != 2 || tokens.dim(0) == 0) throw DegenerateMaskError("projector needs at least one visible token");
  return linear(p, "proj.fc2", relu(linear(p, "proj.fc1", norm(p, "enc.norm", tokens))));
}

template <typename T>
StudentOutput<T> forward(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image,
                         const PatchMask& mask, bool with_projector) {
  StudentOutput<T> out = encode_visible(model, p, patch_embed(model, p, image), mask);
  out.h = aggregate_multi_block(out.layers, model.config());
  out.z = decode(model, p, out.h, mask);
  if (with_projector) out.projected = project_global(model, p, out.layers.back());
  return out;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_uint(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError("checkpoint truncated");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const StudentModel<float>& model) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const std::string header = nlohmann::json(model.config()).dump();
  put_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put_u32(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, value] : model.params()) {  // std::map: sorted by name
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, value);
  }
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

StudentModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  const std::uint64_t header_len = get_uint(in, 8);
  if (header_len > (1u << 20)) throw DataError("checkpoint header too large");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError("checkpoint truncated");
  ModelConfig config;
  try {
    config = nlohmann::json::parse(header).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  const std::uint64_t count = get_uint(in, 4);
  ParamMap<float> params;
  std::string previous;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t len = get_uint(in, 4);
    if (len > 4096) throw DataError("checkpoint parameter name too long");
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("checkpoint truncated");
    if (i > 0 && !(previous < name)) throw DataError("checkpoint parameter names are not sorted");
    previous = name;
    params.emplace(name, read_tensor(in));
  }
  return StudentModel<float>(config, std::move(params));
}

#define MIMKIT_INSTANTIATE(T)                                                                                   \
  template class StudentModel<T>;                                                                               \
  template Tensor<T> sincos_pos_embed<T>(std::size_t, std::size_t);                                             \
  template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                                   \
  template Tensor<T> embed_patches(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&);               \
  template Tensor<T> patch_embed(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&);                 \
  template StudentOutput<T> encode_visible(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&,        \
                                           const PatchMask&);                                                   \
  template Tensor<T> aggregate_multi_block(const std::vector<Tensor<T>>&, const ModelConfig&);                  \
  template Tensor<T> decode(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&, const PatchMask&);    \
  template Tensor<T> project_global(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&);              \
  template StudentOutput<T> forward(const StudentModel<T>&, const ParamMap<T>&, const Tensor<T>&,               \
                                    const PatchMask&, bool);

MIMKIT_INSTANTIATE(float)
MIMKIT_INSTANTIATE(double)

#undef MIMKIT_INSTANTIATE

}  // namespace mimkit
