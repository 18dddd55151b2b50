#pragma once

#include "inbiased/data_factory.hpp"
#include "inbiased/rng.hpp"

namespace testing {

/// Small learnable problem: class k draws a bright block in its own region
/// of an otherwise noisy 3 x side x side image.
inline inbiased::Dataset blocks_dataset(inbiased::Index n, int classes, std::uint64_t seed, int side = 8) {
  using namespace inbiased;
  Dataset d;
  d.spec.name = DatasetName::folder;
  for (int k = 0; k < classes; ++k) d.classes.push_back("class" + std::to_string(k));
  d.data.images = Tensor<float>(n, Dims{3, side, side});
  Rng rng(seed);
  const int block = side / 2;
  for (Index i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % classes);
    d.data.labels.push_back(label);
    const int oy = (label / 2) % 2 * block;
    const int ox = label % 2 * block;
    for (int c = 0; c < 3; ++c) {
      auto p = d.data.images.plane(i, c);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const bool inside = y >= oy && y < oy + block && x >= ox && x < ox + block;
          p(y, x) = static_cast<float>((inside ? 0.6 : 0.0) + 0.4 * rng.uniform());
        }
      }
    }
  }
  return d;
}

}  // namespace testing
