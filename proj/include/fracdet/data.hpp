#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fracdet/image.hpp"
#include "fracdet/preprocess.hpp"
#include "fracdet/tensor.hpp"

namespace fracdet {

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct BoundingBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  BoundingBox dilated(int r) const { return {x0 - r, y0 - r, x1 + r, y1 + r}; }
  bool operator==(const BoundingBox&) const = default;
};

struct Sample {
  std::filesystem::path path;       // empty for in-memory samples
  std::optional<ColorImage> image;  // set for in-memory samples
  std::size_t label = 0;
  std::optional<BoundingBox> crack;

  ColorImage load() const;
  std::string name() const;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names{"fractured", "not fractured"};
  std::vector<std::string> warnings;

  std::vector<std::size_t> class_counts() const;
  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

void validate(const SplitRatios& ratios);

// Per class: floor(n * train) training samples, floor(n * val) validation
// samples, and the remainder for test. Products are floored after adding
// 1e-9 so exact products such as 4840 * 0.7 are not lost to binary rounding.
std::array<std::size_t, 3> split_class_count(std::size_t n, const SplitRatios& ratios);
std::vector<std::array<std::size_t, 3>> split_counts(const std::vector<std::size_t>& class_counts,
                                                     const SplitRatios& ratios);

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

// Stratified split: every class is shuffled with a generator seeded from
// (seed, class) and cut by split_class_count.
DatasetSplit stratified_split(const LabeledDataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

// CSV with header path,label,split.
void write_split_manifest(const DatasetSplit& split, const std::filesystem::path& path);

// root/<class>/<image>. Class indices follow the lexicographic order of the
// subdirectory names. Files that are not decodable images are skipped and
// reported in `warnings`. An optional root/cracks.csv (file,x0,y0,x1,y1)
// attaches crack boxes to samples.
LabeledDataset load_directory(const std::filesystem::path& root);

struct SyntheticConfig {
  int size = 64;
  int band_min_width = 14;
  int band_max_width = 22;
  int crack_thickness = 3;
  double crack_amplitude = 2.0;  // vertical jaggedness, pixels
  double noise_std = 6.0;
  std::uint64_t seed = 7;
};

// Noisy background with a bright smooth vertical "bone" band; fractured
// samples additionally carry a dark jagged transverse crack across the band,
// recorded in Sample::crack. Samples alternate fractured / not fractured.
LabeledDataset generate_synthetic(const SyntheticConfig& cfg, std::size_t n_per_class);

// Writes root/<class name>/NNNNN.pgm and root/cracks.csv.
void write_dataset(const LabeledDataset& dataset, const std::filesystem::path& root);

// Deterministic batch order for one epoch; the final short batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t shuffle_seed,
                                              std::uint64_t epoch);

struct TensorSample {
  Tensor input;
  std::size_t label = 0;
};

// Runs the model-input branch of the preprocessing pipeline on every sample.
std::vector<TensorSample> prepare_tensors(const LabeledDataset& dataset, const PipelineConfig& cfg);

}  // namespace fracdet
