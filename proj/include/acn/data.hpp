#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acn/tensor.hpp"

namespace acn {

// A labelled batch. Inputs are [n, C, H, W] images with values in [0, 1] or
// [n, d] feature vectors.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  bool is_image() const { return inputs.rank() == 4; }
  // Number of values in one example.
  std::size_t example_size() const;
  Shape example_shape() const;

  // Examples at the given positions, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  // Inputs of the given positions stacked into one tensor.
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  // Throws InputError when sizes or labels are inconsistent.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

std::vector<std::size_t> class_histogram(const Dataset& ds);

// ---- CIFAR-10 binary format ---------------------------------------------

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;

// Parses concatenated 3073-byte records (label, 1024 R, 1024 G, 1024 B).
Dataset parse_cifar10(std::span<const std::uint8_t> bytes, std::string split);
Dataset read_cifar10_file(const std::filesystem::path& path, std::string split);

// Reads data_batch_1..5.bin and test_batch.bin from dir.
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

// ---- synthetic tasks ------------------------------------------------------

enum class SynthKind { Blobs, Spirals };

struct SynthSpec {
  SynthKind kind = SynthKind::Blobs;
  int n_classes = 10;
  int n_per_class = 100;
  // Latent feature dimension. Spirals live in 2D and are embedded into dim.
  std::size_t dim = 16;
  // Distance scale between class centres (blobs) or arm gap (spirals).
  double separation = 3.0;
  // Isotropic noise added to every latent sample.
  double noise = 1.0;
  // Gaussian clusters per class for blobs; >1 makes classes non-convex.
  int modes_per_class = 1;
  // When image_size > 0 the latent vectors are rendered as
  // [image_channels, image_size, image_size] images through a fixed random
  // projection and a logistic squashing into (0, 1).
  std::size_t image_size = 0;
  std::size_t image_channels = 3;
  double render_gain = 1.0;
  std::uint64_t seed = 1;
};

// Class structure (centres, projection) depends on spec.seed only; samples
// depend on spec.seed and sample_stream, so splits share one task.
Dataset synth_classification(const SynthSpec& spec, std::uint64_t sample_stream = 0,
                             std::string split = "train");

// Stratified split; the test part receives round(fraction * class size) of
// every class.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction,
                                             std::uint64_t seed);

// Keeps the listed classes and relabels them 0..k-1 in the listed order.
Dataset select_classes(const Dataset& ds, std::span<const int> classes);

// First n examples of every class after a seeded shuffle.
Dataset subset_per_class(const Dataset& ds, std::size_t n, std::uint64_t seed);

// ---- noise ------------------------------------------------------------------

// x' = clamp(x + e, 0, 1), e ~ N(0, sigma^2) i.i.d.
Dataset add_gaussian_noise(const Dataset& ds, double sigma, std::uint64_t seed);

// Sets round(p * H * W) distinct pixel positions per image to 0 or 1 (all
// channels together), each with probability 1/2.
Dataset add_salt_pepper(const Dataset& ds, double p, std::uint64_t seed);

// ---- cache format -------------------------------------------------------

// "ACNDSET1" | u32 rank | u64 extents | i32 classes | u64 n | i32 labels |
// u64 split length | split bytes | f64 values, all little-endian.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace acn
