#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfilter/training.hpp"

namespace cfilter {

// Images with one class blob per label plus an additive confounder patch in
// the top-left corner. The patch is present (s = 1) when it "matches" the
// label with probability equal to the split's correlation, where the matching
// patch state for label y is y mod 2.
struct ConfoundedImageConfig {
  std::size_t image_size = 16;
  std::size_t num_classes = 2;
  std::size_t blob_size = 4;
  double class_amp = 0.12;
  std::size_t patch_size = 3;
  double confounder_amp = 1.0;
  double background = 0.0;
  double train_correlation = 0.95;
  double test_correlation = 0.0;
  double noise_std = 0.1;
  std::size_t n_train = 2000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 0;
  // When set, the confounder set is drawn independently from this seed
  // instead of reusing the task samples.
  std::optional<std::uint64_t> confounder_seed;

  void validate() const;
  bool operator==(const ConfoundedImageConfig&) const = default;
};

// Two features: x1 = signal_weight * (2y-1) + noise, x2 = confounder_weight *
// (2s-1) + noise, with s = y at the split's correlation.
struct ToyConfig {
  std::uint64_t seed = 0;
  std::size_t n = 1000;
  double signal_weight = 1.0;
  double confounder_weight = 2.0;
  double train_correlation = 0.95;
  double test_correlation = 0.0;
  double noise_std = 1.0;
  std::optional<std::uint64_t> confounder_seed;

  void validate() const;
  bool operator==(const ToyConfig&) const = default;
};

struct Rect {
  std::size_t row = 0, col = 0, height = 0, width = 0;
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row && r < row + height && c >= col && c < col + width;
  }
  bool overlaps(const Rect& o) const {
    return row < o.row + o.height && o.row < row + height && col < o.col + o.width &&
           o.col < col + width;
  }
};

struct ImageGeometry {
  std::vector<Rect> class_blobs;  // one per class
  Rect patch;
};

// Throws ConfigError when patterns overlap or do not fit.
ImageGeometry image_geometry(const ConfoundedImageConfig& config);

struct DatasetBundle {
  LabeledSet train;          // task labels y
  std::vector<int> train_s;  // confounder labels of the task samples
  LabeledSet confounder;     // labels are s
  LabeledSet test_deconf;    // correlation = test_correlation
  std::vector<int> test_deconf_s;
  LabeledSet test_aligned;   // correlation = train_correlation
  std::vector<int> test_aligned_s;
  std::string manifest;      // canonical JSON

  bool operator==(const DatasetBundle& other) const;
};

DatasetBundle generate(const ConfoundedImageConfig& config);
DatasetBundle toy_linear(const ToyConfig& config);

// Fraction of samples whose s equals the matching state y mod 2.
double match_rate(const std::vector<int>& y, const std::vector<int>& s);

inline constexpr int kBundleFormatVersion = 1;

// Directory with manifest.json and one binary tensor record per array.
void save_bundle(const DatasetBundle& bundle, const std::string& dir);
DatasetBundle load_bundle(const std::string& dir);

}  // namespace cfilter
