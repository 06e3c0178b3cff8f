#include "udab/augment.hpp"

#include <cmath>

#include "udab/error.hpp"

namespace udab {

RowVector column_std(const Matrix& features) {
  const RowVector mean = features.colwise().mean();
  RowVector var = (features.rowwise() - mean).array().square().colwise().mean();
  return var.array().sqrt().max(1e-6);
}

VectorAugmenter::VectorAugmenter(RowVector feature_std, double weak_jitter, double strong_jitter, double dropout)
    : feature_std_(std::move(feature_std)), weak_jitter_(weak_jitter), strong_jitter_(strong_jitter), dropout_(dropout) {}

Matrix VectorAugmenter::weak(const Matrix& batch, Rng& rng) const {
  Matrix out = batch;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += rng.normal(0.0, weak_jitter_ * feature_std_(j));
  }
  return out;
}

Matrix VectorAugmenter::strong(const Matrix& batch, Rng& rng) const {
  Matrix out = batch;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) += rng.normal(0.0, strong_jitter_ * feature_std_(j));
      if (rng.bernoulli(dropout_)) out(i, j) = 0.0;
    }
  }
  return out;
}

namespace {

Matrix shift_images(const Matrix& batch, ImageShape s, Rng& rng) {
  Matrix out = Matrix::Zero(batch.rows(), batch.cols());
  for (Eigen::Index i = 0; i < batch.rows(); ++i) {
    const int dr = static_cast<int>(rng.below(3)) - 1;
    const int dc = static_cast<int>(rng.below(3)) - 1;
    for (int r = 0; r < s.height; ++r) {
      for (int c = 0; c < s.width; ++c) {
        const int sr = r - dr, sc = c - dc;
        if (sr < 0 || sr >= s.height || sc < 0 || sc >= s.width) continue;
        for (int ch = 0; ch < s.channels; ++ch) {
          out(i, (r * s.width + c) * s.channels + ch) = batch(i, (sr * s.width + sc) * s.channels + ch);
        }
      }
    }
  }
  return out;
}

}  // namespace

Matrix ImageAugmenter::weak(const Matrix& batch, Rng& rng) const { return shift_images(batch, shape_, rng); }

Matrix ImageAugmenter::strong(const Matrix& batch, Rng& rng) const {
  Matrix out = shift_images(batch, shape_, rng);
  const ImageShape s = shape_;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (rng.bernoulli(0.5)) {
      const RowVector row = out.row(i);
      for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) {
          for (int ch = 0; ch < s.channels; ++ch) {
            out(i, (r * s.width + c) * s.channels + ch) = row((r * s.width + (s.width - 1 - c)) * s.channels + ch);
          }
        }
      }
    }
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += rng.normal(0.0, 0.2);
    const int r0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.height - 1)));
    const int c0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.width - 1)));
    for (int r = r0; r < r0 + 2; ++r) {
      for (int c = c0; c < c0 + 2; ++c) {
        for (int ch = 0; ch < s.channels; ++ch) out(i, (r * s.width + c) * s.channels + ch) = 0.0;
      }
    }
  }
  return out;
}

std::string data_mode_name(const LabeledSet& set) { return set.image_shape().is_image() ? "image" : "vector"; }

std::shared_ptr<const Augmenter> make_augmenter(const std::string& mode, const LabeledSet& reference) {
  if (mode == "vector") return std::make_shared<VectorAugmenter>(column_std(reference.features()));
  if (mode == "image") {
    if (!reference.image_shape().is_image()) throw ConfigError("data.mode", "image augmenter needs image data");
    return std::make_shared<ImageAugmenter>(reference.image_shape());
  }
  throw ConfigError("data.mode", "no augmenters registered for data mode '" + mode + "'");
}

}  // namespace udab
