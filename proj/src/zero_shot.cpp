#include "lthead/zero_shot.hpp"

#include <cmath>
#include <string>

#include "lthead/errors.hpp"
#include "lthead/evaluation.hpp"

namespace lthead {

namespace {

void normalize_rows(Matrix& m, const char* what) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DataError(std::string(what) + " row " + std::to_string(i) + " has zero or invalid norm");
    }
    for (double& v : row) v /= norm;
  }
}

}  // namespace

TextClassEmbeddings TextClassEmbeddings::from_raw(Matrix raw) {
  if (raw.rows() == 0 || raw.cols() == 0) throw DataError("class embeddings are empty");
  normalize_rows(raw, "class embedding");
  TextClassEmbeddings t;
  t.embeddings_ = std::move(raw);
  return t;
}

ZeroShotResult zero_shot_classify(const Matrix& image_embeddings,
                                  const TextClassEmbeddings& classes, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("zero_shot_classify: temperature must be positive");
  if (image_embeddings.cols() != classes.dim()) {
    throw ShapeError("zero_shot_classify: image dim " + std::to_string(image_embeddings.cols()) +
                     " != class dim " + std::to_string(classes.dim()));
  }
  Matrix images = image_embeddings;
  normalize_rows(images, "image embedding");
  Matrix cosine = matmul_bt(images, classes.matrix());
  for (double& v : cosine.values()) v /= temperature;
  ZeroShotResult out;
  out.predictions = argmax_rows(cosine);
  out.probabilities = softmax_rows(cosine);
  return out;
}

}  // namespace lthead
