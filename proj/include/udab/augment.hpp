#pragma once

#include <map>
#include <memory>
#include <string>

#include "udab/data.hpp"
#include "udab/rng.hpp"
#include "udab/tensor.hpp"

namespace udab {

/// Weak and strong stochastic views of a batch.
class Augmenter {
 public:
  virtual ~Augmenter() = default;
  virtual Matrix weak(const Matrix& batch, Rng& rng) const = 0;
  virtual Matrix strong(const Matrix& batch, Rng& rng) const = 0;
};

/// Gaussian jitter scaled by per-feature std; the strong view adds
/// coordinate dropout.
class VectorAugmenter final : public Augmenter {
 public:
  explicit VectorAugmenter(RowVector feature_std, double weak_jitter = 0.05, double strong_jitter = 0.1,
                           double dropout = 0.2);
  Matrix weak(const Matrix& batch, Rng& rng) const override;
  Matrix strong(const Matrix& batch, Rng& rng) const override;

 private:
  RowVector feature_std_;
  double weak_jitter_;
  double strong_jitter_;
  double dropout_;
};

/// Weak: random shift by up to one pixel. Strong: shift, horizontal flip,
/// pixel noise and a 2x2 cutout.
class ImageAugmenter final : public Augmenter {
 public:
  explicit ImageAugmenter(ImageShape shape) : shape_(shape) {}
  Matrix weak(const Matrix& batch, Rng& rng) const override;
  Matrix strong(const Matrix& batch, Rng& rng) const override;

 private:
  ImageShape shape_;
};

/// Per-column standard deviation (floored at 1e-6).
RowVector column_std(const Matrix& features);

/// Builds the augmenter for a data mode name ("vector" or "image") from the
/// training features. Unknown modes are a configuration error.
std::shared_ptr<const Augmenter> make_augmenter(const std::string& mode, const LabeledSet& reference);

std::string data_mode_name(const LabeledSet& set);

}  // namespace udab
