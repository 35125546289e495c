#include "readlab/models/bundle.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

#include "readlab/tensor/ops.hpp"
#include "readlab/world/scene.hpp"

namespace readlab::models {

namespace ops = readlab::tensor;

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

ModelBundle ModelBundle::create(std::uint64_t seed, Decoder decoder) {
  std::mt19937_64 rng(world::derive_seed(seed, 0x6d6f64656cULL));
  ModelBundle b;
  b.text = Encoder::create("text", text_encoder_shape(), rng);
  b.image = Encoder::create("image", image_encoder_shape(), rng);
  b.decoder = std::move(decoder);
  b.projector = normal_parameter("projector", {b.text.shape.out_dim, b.decoder.shape.width},
                                 1.0 / std::sqrt(static_cast<double>(b.text.shape.out_dim)), rng);
  b.log_scale = filled_parameter("log_scale", {1}, std::log(1.0 / 0.07));
  return b;
}

std::vector<Parameter*> ModelBundle::trainable() {
  std::vector<Parameter*> out;
  text.collect(out);
  image.collect(out);
  out.push_back(&projector);
  out.push_back(&log_scale);
  return out;
}

std::vector<Parameter*> ModelBundle::decoder_parameters() {
  std::vector<Parameter*> out;
  decoder.collect(out);
  return out;
}

std::vector<Parameter*> ModelBundle::all() {
  auto out = trainable();
  decoder.collect(out);
  return out;
}

Tensor project(Graph& g, Parameter& projector, const Tensor& v) {
  if (v.shape().size() != 2 || v.shape()[1] != projector.shape()[0]) {
    throw tensor::ShapeError("project: embedding " + tensor::to_string(v.shape()) + " vs projector " +
                             tensor::to_string(projector.shape()));
  }
  return ops::matmul(v, g.param(projector));
}

Tensor logit_scale(Graph& g, Parameter& log_scale) { return ops::exp(g.param(log_scale)); }

void clamp_log_scale(Parameter& log_scale) {
  static const double lo = std::log(kMinLogitScale), hi = std::log(kMaxLogitScale);
  for (double& s : log_scale.values()) s = std::clamp(s, lo, hi);
}

double temperature(const Parameter& log_scale) { return 1.0 / std::exp(log_scale.values()[0]); }

std::string parameter_hash(const std::vector<Parameter*>& params) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  for (const auto* p : params) {
    EVP_DigestUpdate(ctx.get(), p->name().data(), p->name().size());
    for (auto d : p->shape()) {
      const std::uint64_t v = d;
      EVP_DigestUpdate(ctx.get(), &v, sizeof v);
    }
    EVP_DigestUpdate(ctx.get(), p->values().data(), p->values().size() * sizeof(double));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

void Container::add(const Parameter& p) {
  add(p.name(), p.shape(), std::vector<double>(p.values().begin(), p.values().end()));
}

void Container::add(std::string name, Shape shape, std::vector<double> values) {
  if (has(name)) throw std::invalid_argument("checkpoint: duplicate blob " + name);
  blobs.push_back(Blob{std::move(name), std::move(shape), std::move(values)});
}

bool Container::has(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return true;
  }
  return false;
}

const Blob& Container::blob(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return b;
  }
  throw std::runtime_error("checkpoint: missing blob " + name);
}

void Container::load_into(Parameter& p) const {
  const auto& b = blob(p.name());
  if (b.shape != p.shape()) {
    throw std::runtime_error("checkpoint: blob " + p.name() + " has shape " + tensor::to_string(b.shape) +
                             ", expected " + tensor::to_string(p.shape()));
  }
  std::copy(b.values.begin(), b.values.end(), p.values().begin());
}

std::map<std::string, std::uint64_t> model_dims() {
  const auto t = text_encoder_shape();
  const auto i = image_encoder_shape();
  const auto d = default_decoder_shape();
  return {
      {"text_vocab", t.vocab},      {"image_vocab", i.vocab},    {"image_offset", static_cast<std::uint64_t>(i.id_offset)},
      {"text_width", t.width},      {"text_blocks", t.blocks},   {"text_max_len", t.max_len},
      {"image_width", i.width},     {"image_blocks", i.blocks},  {"image_len", i.max_len},
      {"shared_dim", t.out_dim},    {"decoder_width", d.width},  {"decoder_blocks", d.blocks},
      {"decoder_max_len", d.max_len},
  };
}

namespace {

constexpr char kMagic[8] = {'R', 'E', 'A', 'D', 'L', 'A', 'B', '\0'};

void put_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); }

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

std::string get_string(std::istream& in) {
  const auto n = get_u64(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  put_u64(out, kCheckpointVersion);
  put_u64(out, c.dims.size());
  for (const auto& [k, v] : c.dims) {
    put_string(out, k);
    put_u64(out, v);
  }
  put_u64(out, c.decoder_frozen ? 1 : 0);
  put_u64(out, c.metadata.size());
  for (const auto& [k, v] : c.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u64(out, c.blobs.size());
  for (const auto& b : c.blobs) {
    put_string(out, b.name);
    put_u64(out, b.shape.size());
    for (auto d : b.shape) put_u64(out, d);
    put_u64(out, b.values.size());
    out.write(reinterpret_cast<const char*>(b.values.data()),
              static_cast<std::streamsize>(b.values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = get_u64(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error(path.string() + ": checkpoint version " + std::to_string(version) +
                             ", expected " + std::to_string(kCheckpointVersion));
  }
  Container c;
  for (auto n = get_u64(in); n > 0; --n) {
    auto k = get_string(in);
    c.dims[k] = get_u64(in);
  }
  if (c.dims != model_dims()) {
    throw std::runtime_error(path.string() + ": model dimensions or vocabulary sizes differ from this build");
  }
  c.decoder_frozen = get_u64(in) != 0;
  for (auto n = get_u64(in); n > 0; --n) {
    auto k = get_string(in);
    c.metadata[k] = get_string(in);
  }
  for (auto n = get_u64(in); n > 0; --n) {
    Blob b;
    b.name = get_string(in);
    const auto rank = get_u64(in);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt rank for " + b.name);
    for (std::uint64_t r = 0; r < rank; ++r) b.shape.push_back(get_u64(in));
    const auto count = get_u64(in);
    if (count != tensor::numel(b.shape)) throw std::runtime_error("checkpoint: size mismatch for " + b.name);
    b.values.resize(count);
    if (!in.read(reinterpret_cast<char*>(b.values.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
      throw std::runtime_error("checkpoint: truncated blob " + b.name);
    }
    c.blobs.push_back(std::move(b));
  }
  return c;
}

namespace {

Decoder decoder_from(const Container& c) {
  std::mt19937_64 rng(0);
  auto d = Decoder::create(default_decoder_shape(), rng);
  std::vector<Parameter*> params;
  d.collect(params);
  for (auto* p : params) c.load_into(*p);
  if (c.decoder_frozen) d.freeze();
  return d;
}

}  // namespace

void save_decoder(const std::filesystem::path& path, Decoder& decoder) {
  Container c;
  c.dims = model_dims();
  c.decoder_frozen = decoder.frozen;
  std::vector<Parameter*> params;
  decoder.collect(params);
  for (auto* p : params) c.add(*p);
  write_container(path, c);
}

Decoder load_decoder(const std::filesystem::path& path) { return decoder_from(read_container(path)); }

void store_bundle(Container& c, ModelBundle& bundle) {
  c.dims = model_dims();
  c.decoder_frozen = bundle.decoder.frozen;
  for (auto* p : bundle.all()) c.add(*p);
}

void save_bundle(const std::filesystem::path& path, ModelBundle& bundle,
                 const std::map<std::string, std::string>& metadata) {
  Container c;
  c.metadata = metadata;
  store_bundle(c, bundle);
  write_container(path, c);
}

ModelBundle bundle_from(const Container& c) {
  auto b = ModelBundle::create(0, decoder_from(c));
  for (auto* p : b.trainable()) c.load_into(*p);
  return b;
}

ModelBundle load_bundle(const std::filesystem::path& path) { return bundle_from(read_container(path)); }

}  // namespace readlab::models
