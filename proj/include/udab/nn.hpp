#pragma once

#include <memory>
#include <string>
#include <vector>

#include "udab/data.hpp"
#include "udab/rng.hpp"
#include "udab/tensor.hpp"

namespace udab::nn {

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
};

/// Activations saved by one forward call for the matching backward call.
/// Keeping them outside the module lets the same network run forward on
/// several batches before any of them is backpropagated.
struct Cache {
  std::vector<Matrix> saved;
  std::vector<Cache> children;
};

class Module {
 public:
  virtual ~Module() = default;

  /// `cache` may be null for inference-only calls.
  virtual Matrix forward(const Matrix& x, Cache* cache) const = 0;
  /// Adds parameter gradients and returns d(loss)/d(input).
  virtual Matrix backward(const Matrix& grad_out, const Cache& cache) = 0;
  virtual void collect(std::vector<Parameter*>& out) { (void)out; }
  virtual int out_dim() const = 0;
};

using ModulePtr = std::unique_ptr<Module>;

/// Fan-in scaled uniform initialisation: U(-b, b), b = 1/sqrt(fan_in).
class Linear final : public Module {
 public:
  Linear(int in, int out, Rng& rng, std::string name);

  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return static_cast<int>(weight_.value.rows()); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

 private:
  Parameter weight_;  // out x in
  Parameter bias_;    // 1 x out
};

class Relu final : public Module {
 public:
  explicit Relu(int dim) : dim_(dim) {}
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  int out_dim() const override { return dim_; }

 private:
  int dim_;
};

/// Normalises each contiguous group of `width` columns (one token) to zero
/// mean and unit variance, then applies a learned scale and shift.
class LayerNorm final : public Module {
 public:
  LayerNorm(int tokens, int width, std::string name);
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return tokens_ * width_; }

 private:
  int tokens_;
  int width_;
  Parameter gain_;
  Parameter shift_;
};

class Sequential final : public Module {
 public:
  Sequential() = default;
  void add(ModulePtr m) { layers_.push_back(std::move(m)); }
  std::size_t size() const { return layers_.size(); }

  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override;

 private:
  std::vector<ModulePtr> layers_;
};

/// y = x + inner(x).
class Residual final : public Module {
 public:
  explicit Residual(ModulePtr inner) : inner_(std::move(inner)) {}
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override { inner_->collect(out); }
  int out_dim() const override { return inner_->out_dim(); }

 private:
  ModulePtr inner_;
};

/// Applies `inner` independently to each of `tokens` column groups.
class PerToken final : public Module {
 public:
  PerToken(int tokens, int in_width, ModulePtr inner) : tokens_(tokens), in_width_(in_width), inner_(std::move(inner)) {}
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override { inner_->collect(out); }
  int out_dim() const override { return tokens_ * inner_->out_dim(); }

 private:
  int tokens_;
  int in_width_;
  ModulePtr inner_;
};

/// Same-padded stride-1 convolution over HWC-flattened images.
class Conv2d final : public Module {
 public:
  Conv2d(ImageShape in, int out_channels, int kernel_h, int kernel_w, Rng& rng, std::string name);
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return in_.height * in_.width * out_channels_; }
  ImageShape out_shape() const { return {in_.height, in_.width, out_channels_}; }

 private:
  Matrix im2col(const Matrix& x, Eigen::Index sample) const;

  ImageShape in_;
  int out_channels_;
  int kh_;
  int kw_;
  Parameter weight_;  // out_channels x (kh * kw * in_channels)
  Parameter bias_;
};

/// Cuts each input row into `tokens` patches (zero padded) and embeds each
/// patch linearly, plus a learned position embedding.
class PatchEmbed final : public Module {
 public:
  /// `patches[t]` lists the input columns of token t; -1 means padding.
  PatchEmbed(std::vector<std::vector<int>> patches, int width, Rng& rng, std::string name);
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return tokens() * width_; }
  int tokens() const { return static_cast<int>(patches_.size()); }

  /// Patch layout for an input: 2x2 patches for images, otherwise
  /// consecutive chunks giving at most `max_tokens` tokens.
  static std::vector<std::vector<int>> layout(int input_dim, ImageShape shape, int max_tokens);

 private:
  std::vector<std::vector<int>> patches_;
  int in_dim_;
  int patch_size_;
  int width_;
  Parameter weight_;    // width x patch_size
  Parameter bias_;      // 1 x width
  Parameter position_;  // tokens x width
};

/// Single-head scaled dot-product self-attention over tokens.
class SelfAttention final : public Module {
 public:
  SelfAttention(int tokens, int width, Rng& rng, std::string name);
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return tokens_ * width_; }

 private:
  int tokens_;
  int width_;
  Linear query_;
  Linear key_;
  Linear value_;
  Linear output_;
};

/// Linear map across tokens (the same for every channel).
class TokenMix final : public Module {
 public:
  TokenMix(int tokens, int width, Rng& rng, std::string name);
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  void collect(std::vector<Parameter*>& out) override;
  int out_dim() const override { return tokens_ * width_; }

 private:
  int tokens_;
  int width_;
  Parameter weight_;  // tokens x tokens
  Parameter bias_;    // 1 x tokens
};

class TokenMeanPool final : public Module {
 public:
  TokenMeanPool(int tokens, int width) : tokens_(tokens), width_(width) {}
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  int out_dim() const override { return width_; }

 private:
  int tokens_;
  int width_;
};

/// Identity forward; backward multiplies the incoming gradient by -coeff.
class GradientReversal final : public Module {
 public:
  explicit GradientReversal(int dim, double coeff = 1.0) : dim_(dim), coeff_(coeff) {}
  void set_coeff(double coeff);
  double coeff() const { return coeff_; }
  Matrix forward(const Matrix& x, Cache* cache) const override;
  Matrix backward(const Matrix& grad_out, const Cache& cache) override;
  int out_dim() const override { return dim_; }

 private:
  int dim_;
  double coeff_;
};

std::size_t parameter_count(const std::vector<Parameter*>& params);
void zero_grad(const std::vector<Parameter*>& params);

}  // namespace udab::nn
