#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nnprobe/store.hpp"

namespace nnprobe::store {

enum class FixtureKind { classifier, vae };

/// Description of a synthetic experiment family.
///
/// classifier: dense stack `input -> dense_1 .. dense_n` with widths taken
/// from `layer_sizes` (first entry is the input width, last the class count).
/// With `conv_channels > 0` the input is a 6x6 single-channel image followed
/// by `conv_1` (3x3 valid) and `flatten` before the dense stack.
///
/// vae: `input -> enc_1 -> {z_mean, z_log_var} -> z -> dec_1 -> dec_out`.
/// `defect_layer` (normally "z_log_var") routes that layer of the first model
/// through max(0, .). `latent_variances[i]` rescales model i's `z`
/// activations to exactly that population variance.
struct FixtureSpec {
  FixtureKind kind = FixtureKind::classifier;
  int num_models = 3;
  std::vector<int> layer_sizes{4, 2, 2};
  int num_checkpoints = 2;
  int num_samples = 20;
  int num_classes = 2;
  int conv_channels = 0;
  int latent_dim = 2;
  std::optional<std::string> defect_layer;
  std::vector<double> latent_variances;
  std::string id_prefix;  // defaults to "m", "vae" by kind
};

/// Parses "uc1" | "uc2" | "uc3" or "<kind>:key=value,..." (keys: models,
/// layers (dash separated), checkpoints, samples, classes, conv, latent,
/// defect, variances (dash separated), prefix).
FixtureSpec parse_fixture_spec(const std::string& text);

/// Writes a complete log directory under `out` and loads it. Identical
/// (spec, seed) produce byte-identical files. Throws Error when `out` is not
/// writable.
CatalogPtr generate_fixture(const FixtureSpec& spec, std::uint64_t seed, const std::filesystem::path& out);

}  // namespace nnprobe::store
