#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nap/kfac.hpp"
#include "nap/net.hpp"
#include "nap/tensor.hpp"

namespace nap::io {

struct Dataset {
  Tensor images;  // N x features, values in [0,1]
  std::vector<int> labels;
  int num_classes = 0;
  ActShape geometry;  // how a row is interpreted (flat width or CxHxW)
  std::string split;  // "train" / "test" / ...
  std::size_t size() const { return labels.size(); }
};

/// IDX parse failure; `offset` is the byte position the problem was
/// detected at.
struct IdxError : std::runtime_error {
  enum class Kind { BadMagic, Truncated, CountMismatch };
  Kind kind;
  std::size_t offset;
  IdxError(Kind k, std::size_t off, const std::string& msg)
      : std::runtime_error(msg), kind(k), offset(off) {}
};

/// Parses an IDX u8 image file (magic 0x00000803) plus the matching label
/// file (magic 0x00000801). Pixels map to [0,1] as p/255; the image and
/// label counts must agree.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes canonical IDX files (big-endian headers, u8 payloads).
void save_idx(const std::string& images_path, const std::string& labels_path,
              const std::vector<std::uint8_t>& pixels, std::uint32_t n, std::uint32_t rows,
              std::uint32_t cols, const std::vector<std::uint8_t>& labels);

enum class SynthMode { GaussianClusters, TeacherNet };

struct SynthSpec {
  std::size_t n = 1000;
  int features = 8;
  int classes = 3;
  SynthMode mode = SynthMode::GaussianClusters;
  /// GaussianClusters: each class center sits at this distance (in units of
  /// the within-cluster sigma) from the origin, in a random direction.
  double separation = 4.0;
};

/// Deterministic synthetic dataset. Features are affinely rescaled to
/// [0,1] after generation (cluster structure is affine-invariant).
Dataset synth_dataset(std::uint64_t seed, const SynthSpec& spec);

/// Procedural 28x28 grayscale digit corpus (10 classes): stroke glyphs with
/// random affine jitter, thickness and noise, quantized to u8 exactly like
/// an IDX payload. A stand-in with the same geometry and format as MNIST.
Dataset digits_dataset(std::uint64_t seed, std::size_t n, const std::string& split);

/// Same corpus written as canonical IDX files.
void write_digits_idx(const std::string& images_path, const std::string& labels_path,
                      std::uint64_t seed, std::size_t n);

// --- checkpoint container -------------------------------------------------

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::uint64_t train_steps = 0;
  std::vector<double> lambda_history;
  std::vector<std::uint64_t> flops_history;
};

struct Checkpoint {
  Model model;  // geometry from the embedded arch string, weights + masks from payload
  std::optional<ModelStats> stats;
  CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "NAPC", u32 LE version, length-prefixed
/// architecture text, per-layer little-endian f64 weights with bit-packed
/// masks (LSB-first within each byte), optional statistics blocks behind
/// presence flags, run metadata, and a trailing CRC32 over all preceding
/// bytes. Round-trips are bit-exact.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace nap::io
