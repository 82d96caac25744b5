#pragma once

#include <cstdint>
#include <vector>

#include "lthead/numerics.hpp"

namespace lthead {

/// K x D class text embeddings with unit-norm rows.
class TextClassEmbeddings {
 public:
  /// Normalizes every row; a zero row is a DataError.
  static TextClassEmbeddings from_raw(Matrix raw);

  const Matrix& matrix() const noexcept { return embeddings_; }
  std::size_t num_classes() const noexcept { return embeddings_.rows(); }
  std::size_t dim() const noexcept { return embeddings_.cols(); }

 private:
  Matrix embeddings_;
};

struct ZeroShotResult {
  std::vector<std::uint32_t> predictions;
  Matrix probabilities;  // N x K
};

/// p(y = j | x) = softmax_j(cos(T_j, I) / temperature); prediction is the argmax.
ZeroShotResult zero_shot_classify(const Matrix& image_embeddings,
                                  const TextClassEmbeddings& classes, double temperature = 1.0);

}  // namespace lthead
