#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attnforge/tensor.hpp"

namespace attnforge {

// Synthetic image datasets with known labeling rules, so accuracy floors are
// exact. All pixels are 0 or 1; label noise rewrites a label to a different
// class after the pattern is drawn. Generators:
//   stripes:    class c draws stripes with orientation c % 2 (0 along rows,
//               1 along columns) and half-period c / 2 + 1, at a random phase
//   checker:    class c draws a checkerboard with cell size c + 1, with a
//               random parity flip
//   blob-count: class c scatters c + 1 two-by-two blobs on distinct cells of
//               the half-resolution grid; label = pixel sum / 4 - 1
struct DatasetSpec {
  std::string generator = "stripes";
  int image_side = 16;
  int classes = 2;
  int train_size = 500;
  int val_size = 100;
  int test_size = 100;
  double label_noise = 0.0;
  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct DatasetSplit {
  std::vector<Tensor> images;  // each image_side x image_side
  std::vector<int> labels;
};

struct Dataset {
  DatasetSpec spec;
  DatasetSplit train, val, test;
};

// deterministic: the same spec always yields the same dataset. Class
// assignments are balanced within one example per class before noise.
Dataset generate_dataset(const DatasetSpec& spec);

// the generator's own labeling rule applied to a clean image; noise-free
// datasets are recoverable exactly
int bayes_label(const DatasetSpec& spec, const Tensor& image);

// manifest.json plus raw little-endian blobs (f64 images, u32 labels) per split
void write_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace attnforge
