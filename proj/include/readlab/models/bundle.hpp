#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "readlab/models/decoder.hpp"
#include "readlab/models/encoder.hpp"

namespace readlab::models {

/// Bounds on exp(log_scale), i.e. on 1/temperature.
inline constexpr double kMinLogitScale = 1.0;
inline constexpr double kMaxLogitScale = 100.0;

/// Everything stage-1 training touches: both encoders, the projector, the
/// log-scale of the inverse temperature, and the frozen decoder.
struct ModelBundle {
  Encoder text;
  Encoder image;
  Parameter projector;  // [text out_dim, decoder width]
  Parameter log_scale;  // [1]
  Decoder decoder;

  /// Fresh encoders, projector and temperature; `decoder` is taken as given.
  static ModelBundle create(std::uint64_t seed, Decoder decoder);

  /// Encoders, projector, log-scale, in a fixed order.
  std::vector<Parameter*> trainable();
  std::vector<Parameter*> decoder_parameters();
  std::vector<Parameter*> all();
};

/// h = v W for v of shape [N, d]; rejects mismatched widths.
Tensor project(Graph& g, Parameter& projector, const Tensor& v);
/// exp(log_scale) as a one-element tensor.
Tensor logit_scale(Graph& g, Parameter& log_scale);
/// Clamps log_scale so that exp(log_scale) lies in [kMinLogitScale, kMaxLogitScale].
void clamp_log_scale(Parameter& log_scale);
double temperature(const Parameter& log_scale);

/// SHA-256 over parameter names, shapes and values, as lowercase hex.
std::string parameter_hash(const std::vector<Parameter*>& params);

// Checkpoint container: a versioned binary file with a header (magic,
// version, model dimensions, vocabulary sizes, decoder frozen flag), string
// metadata, and named parameter blobs stored as little-endian 64-bit floats.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Blob {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Container {
  std::map<std::string, std::uint64_t> dims;
  bool decoder_frozen = false;
  std::map<std::string, std::string> metadata;
  std::vector<Blob> blobs;

  void add(const Parameter& p);
  void add(std::string name, Shape shape, std::vector<double> values);
  const Blob& blob(const std::string& name) const;
  bool has(const std::string& name) const;
  /// Copies the blob named like `p` into it; rejects a shape mismatch.
  void load_into(Parameter& p) const;
};

/// Dimensions written into every container and checked on load.
std::map<std::string, std::uint64_t> model_dims();

void write_container(const std::filesystem::path& path, const Container& c);
/// Rejects bad magic, another version, or dimensions differing from model_dims().
Container read_container(const std::filesystem::path& path);

void save_decoder(const std::filesystem::path& path, Decoder& decoder);
/// The decoder comes back frozen if it was saved frozen.
Decoder load_decoder(const std::filesystem::path& path);

void save_bundle(const std::filesystem::path& path, ModelBundle& bundle,
                 const std::map<std::string, std::string>& metadata = {});
ModelBundle load_bundle(const std::filesystem::path& path);
/// Bundle parameters from an already-read container.
ModelBundle bundle_from(const Container& c);
void store_bundle(Container& c, ModelBundle& bundle);

}  // namespace readlab::models
