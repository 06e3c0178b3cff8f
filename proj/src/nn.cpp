#include "udab/nn.hpp"

#include <cmath>

#include "udab/error.hpp"

namespace udab::nn {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

void check_width(const Matrix& x, Eigen::Index expected, const char* who) {
  if (x.cols() != expected) {
    throw Error(ErrorCode::kShape, std::string(who) + ": expected width " + std::to_string(expected) + ", got " +
                                       std::to_string(x.cols()));
  }
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

// --- Linear ---------------------------------------------------------------

Linear::Linear(int in, int out, Rng& rng, std::string name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Parameter(name + ".weight", uniform_matrix(out, in, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, out, bound, rng));
}

Matrix Linear::forward(const Matrix& x, Cache* cache) const {
  check_width(x, weight_.value.cols(), "linear");
  Matrix y = x * weight_.value.transpose();
  y.rowwise() += bias_.value.row(0);
  if (cache != nullptr) cache->saved = {x};
  return y;
}

Matrix Linear::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& x = cache.saved.at(0);
  weight_.grad.noalias() += grad_out.transpose() * x;
  bias_.grad.row(0) += grad_out.colwise().sum();
  return grad_out * weight_.value;
}

void Linear::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --- Relu -----------------------------------------------------------------

Matrix Relu::forward(const Matrix& x, Cache* cache) const {
  Matrix y = x.cwiseMax(0.0);
  if (cache != nullptr) cache->saved = {x};
  return y;
}

Matrix Relu::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& x = cache.saved.at(0);
  return (x.array() > 0.0).select(grad_out, 0.0);
}

// --- LayerNorm ------------------------------------------------------------

LayerNorm::LayerNorm(int tokens, int width, std::string name)
    : tokens_(tokens),
      width_(width),
      gain_(name + ".gain", Matrix::Ones(1, width)),
      shift_(name + ".shift", Matrix::Zero(1, width)) {}

Matrix LayerNorm::forward(const Matrix& x, Cache* cache) const {
  check_width(x, static_cast<Eigen::Index>(tokens_) * width_, "layernorm");
  const Eigen::Index rows = x.rows() * tokens_;
  ConstMap xt(x.data(), rows, width_);
  Matrix normed(rows, width_);
  Matrix inv_std(rows, 1);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = xt.row(r).mean();
    const double var = (xt.row(r).array() - mean).square().mean();
    inv_std(r, 0) = 1.0 / std::sqrt(var + kLayerNormEps);
    normed.row(r) = (xt.row(r).array() - mean) * inv_std(r, 0);
  }
  Matrix y = normed.array().rowwise() * gain_.value.row(0).array();
  y.rowwise() += shift_.value.row(0);
  if (cache != nullptr) cache->saved = {normed, inv_std};
  return MutMap(y.data(), x.rows(), x.cols());
}

Matrix LayerNorm::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& normed = cache.saved.at(0);
  const Matrix& inv_std = cache.saved.at(1);
  const Eigen::Index rows = normed.rows();
  ConstMap g(grad_out.data(), rows, width_);
  gain_.grad.row(0) += (g.array() * normed.array()).colwise().sum().matrix();
  shift_.grad.row(0) += g.colwise().sum();
  Matrix dx(rows, width_);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const RowVector dn = g.row(r).cwiseProduct(gain_.value.row(0));
    const double mean_dn = dn.mean();
    const double mean_dn_n = dn.cwiseProduct(normed.row(r)).mean();
    dx.row(r) = inv_std(r, 0) * (dn.array() - mean_dn - normed.row(r).array() * mean_dn_n);
  }
  return MutMap(dx.data(), grad_out.rows(), grad_out.cols());
}

void LayerNorm::collect(std::vector<Parameter*>& out) {
  out.push_back(&gain_);
  out.push_back(&shift_);
}

// --- Sequential -----------------------------------------------------------

Matrix Sequential::forward(const Matrix& x, Cache* cache) const {
  if (cache != nullptr) cache->children.assign(layers_.size(), Cache{});
  Matrix h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, cache != nullptr ? &cache->children[i] : nullptr);
  }
  return h;
}

Matrix Sequential::backward(const Matrix& grad_out, const Cache& cache) {
  Matrix g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, cache.children.at(i));
  return g;
}

void Sequential::collect(std::vector<Parameter*>& out) {
  for (auto& layer : layers_) layer->collect(out);
}

int Sequential::out_dim() const { return layers_.empty() ? 0 : layers_.back()->out_dim(); }

// --- Residual -------------------------------------------------------------

Matrix Residual::forward(const Matrix& x, Cache* cache) const {
  if (cache != nullptr) cache->children.assign(1, Cache{});
  return x + inner_->forward(x, cache != nullptr ? &cache->children[0] : nullptr);
}

Matrix Residual::backward(const Matrix& grad_out, const Cache& cache) {
  return grad_out + inner_->backward(grad_out, cache.children.at(0));
}

// --- PerToken -------------------------------------------------------------

Matrix PerToken::forward(const Matrix& x, Cache* cache) const {
  check_width(x, static_cast<Eigen::Index>(tokens_) * in_width_, "per-token");
  if (cache != nullptr) cache->children.assign(1, Cache{});
  const Matrix tokens = ConstMap(x.data(), x.rows() * tokens_, in_width_);
  Matrix y = inner_->forward(tokens, cache != nullptr ? &cache->children[0] : nullptr);
  return MutMap(y.data(), x.rows(), static_cast<Eigen::Index>(tokens_) * y.cols());
}

Matrix PerToken::backward(const Matrix& grad_out, const Cache& cache) {
  const Eigen::Index rows = grad_out.rows() * tokens_;
  const Matrix g = ConstMap(grad_out.data(), rows, grad_out.cols() / tokens_);
  Matrix dx = inner_->backward(g, cache.children.at(0));
  return MutMap(dx.data(), grad_out.rows(), static_cast<Eigen::Index>(tokens_) * in_width_);
}

// --- Conv2d ---------------------------------------------------------------

Conv2d::Conv2d(ImageShape in, int out_channels, int kernel_h, int kernel_w, Rng& rng, std::string name)
    : in_(in), out_channels_(out_channels), kh_(kernel_h), kw_(kernel_w) {
  const int fan_in = kh_ * kw_ * in_.channels;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight_ = Parameter(name + ".weight", uniform_matrix(out_channels, fan_in, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, out_channels, bound, rng));
}

Matrix Conv2d::im2col(const Matrix& x, Eigen::Index sample) const {
  const int h = in_.height, w = in_.width, c = in_.channels;
  Matrix col = Matrix::Zero(static_cast<Eigen::Index>(h) * w, static_cast<Eigen::Index>(kh_) * kw_ * c);
  for (int r = 0; r < h; ++r) {
    for (int q = 0; q < w; ++q) {
      const Eigen::Index out_row = static_cast<Eigen::Index>(r) * w + q;
      for (int i = 0; i < kh_; ++i) {
        const int rr = r + i - kh_ / 2;
        if (rr < 0 || rr >= h) continue;
        for (int j = 0; j < kw_; ++j) {
          const int qq = q + j - kw_ / 2;
          if (qq < 0 || qq >= w) continue;
          for (int ch = 0; ch < c; ++ch) {
            col(out_row, (static_cast<Eigen::Index>(i) * kw_ + j) * c + ch) =
                x(sample, (static_cast<Eigen::Index>(rr) * w + qq) * c + ch);
          }
        }
      }
    }
  }
  return col;
}

Matrix Conv2d::forward(const Matrix& x, Cache* cache) const {
  check_width(x, in_.size(), "conv2d");
  Matrix y(x.rows(), out_dim());
  for (Eigen::Index s = 0; s < x.rows(); ++s) {
    Matrix out = im2col(x, s) * weight_.value.transpose();
    out.rowwise() += bias_.value.row(0);
    y.row(s) = MutMap(out.data(), 1, out.size());
  }
  if (cache != nullptr) cache->saved = {x};
  return y;
}

Matrix Conv2d::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& x = cache.saved.at(0);
  const int h = in_.height, w = in_.width, c = in_.channels;
  Matrix dx = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index s = 0; s < x.rows(); ++s) {
    const Matrix g = ConstMap(grad_out.row(s).data(), static_cast<Eigen::Index>(h) * w, out_channels_);
    const Matrix col = im2col(x, s);
    weight_.grad.noalias() += g.transpose() * col;
    bias_.grad.row(0) += g.colwise().sum();
    const Matrix dcol = g * weight_.value;
    for (int r = 0; r < h; ++r) {
      for (int q = 0; q < w; ++q) {
        const Eigen::Index out_row = static_cast<Eigen::Index>(r) * w + q;
        for (int i = 0; i < kh_; ++i) {
          const int rr = r + i - kh_ / 2;
          if (rr < 0 || rr >= h) continue;
          for (int j = 0; j < kw_; ++j) {
            const int qq = q + j - kw_ / 2;
            if (qq < 0 || qq >= w) continue;
            for (int ch = 0; ch < c; ++ch) {
              dx(s, (static_cast<Eigen::Index>(rr) * w + qq) * c + ch) +=
                  dcol(out_row, (static_cast<Eigen::Index>(i) * kw_ + j) * c + ch);
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --- PatchEmbed -----------------------------------------------------------

std::vector<std::vector<int>> PatchEmbed::layout(int input_dim, ImageShape shape, int max_tokens) {
  std::vector<std::vector<int>> patches;
  if (shape.is_image() && shape.height % 2 == 0 && shape.width % 2 == 0) {
    for (int r = 0; r < shape.height; r += 2) {
      for (int q = 0; q < shape.width; q += 2) {
        std::vector<int> patch;
        for (int i = 0; i < 2; ++i) {
          for (int j = 0; j < 2; ++j) {
            for (int ch = 0; ch < shape.channels; ++ch) {
              patch.push_back(((r + i) * shape.width + (q + j)) * shape.channels + ch);
            }
          }
        }
        patches.push_back(std::move(patch));
      }
    }
    return patches;
  }
  const int tokens = std::max(1, std::min(input_dim, max_tokens));
  const int size = (input_dim + tokens - 1) / tokens;
  for (int t = 0; t < tokens; ++t) {
    std::vector<int> patch;
    for (int k = 0; k < size; ++k) {
      const int col = t * size + k;
      patch.push_back(col < input_dim ? col : -1);
    }
    patches.push_back(std::move(patch));
  }
  return patches;
}

PatchEmbed::PatchEmbed(std::vector<std::vector<int>> patches, int width, Rng& rng, std::string name)
    : patches_(std::move(patches)), width_(width) {
  patch_size_ = static_cast<int>(patches_.at(0).size());
  in_dim_ = 0;
  for (const auto& p : patches_) {
    for (const int col : p) in_dim_ = std::max(in_dim_, col + 1);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(patch_size_));
  weight_ = Parameter(name + ".weight", uniform_matrix(width, patch_size_, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, width, bound, rng));
  position_ = Parameter(name + ".position", uniform_matrix(tokens(), width, 0.1, rng));
}

Matrix PatchEmbed::forward(const Matrix& x, Cache* cache) const {
  check_width(x, in_dim_, "patch-embed");
  const Eigen::Index n = x.rows();
  const int t_count = tokens();
  Matrix gathered = Matrix::Zero(n * t_count, patch_size_);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      for (int k = 0; k < patch_size_; ++k) {
        const int col = patches_[t][k];
        if (col >= 0) gathered(i * t_count + t, k) = x(i, col);
      }
    }
  }
  Matrix y = gathered * weight_.value.transpose();
  y.rowwise() += bias_.value.row(0);
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) += position_.value.row(r % t_count);
  if (cache != nullptr) cache->saved = {gathered};
  return MutMap(y.data(), n, static_cast<Eigen::Index>(t_count) * width_);
}

Matrix PatchEmbed::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& gathered = cache.saved.at(0);
  const int t_count = tokens();
  const Eigen::Index n = grad_out.rows();
  const Matrix g = ConstMap(grad_out.data(), n * t_count, width_);
  weight_.grad.noalias() += g.transpose() * gathered;
  bias_.grad.row(0) += g.colwise().sum();
  for (Eigen::Index r = 0; r < g.rows(); ++r) position_.grad.row(r % t_count) += g.row(r);
  const Matrix dg = g * weight_.value;
  Matrix dx = Matrix::Zero(n, in_dim_);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int t = 0; t < t_count; ++t) {
      for (int k = 0; k < patch_size_; ++k) {
        const int col = patches_[t][k];
        if (col >= 0) dx(i, col) += dg(i * t_count + t, k);
      }
    }
  }
  return dx;
}

void PatchEmbed::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
  out.push_back(&position_);
}

// --- SelfAttention --------------------------------------------------------

SelfAttention::SelfAttention(int tokens, int width, Rng& rng, std::string name)
    : tokens_(tokens),
      width_(width),
      query_(width, width, rng, name + ".query"),
      key_(width, width, rng, name + ".key"),
      value_(width, width, rng, name + ".value"),
      output_(width, width, rng, name + ".output") {}

Matrix SelfAttention::forward(const Matrix& x, Cache* cache) const {
  check_width(x, static_cast<Eigen::Index>(tokens_) * width_, "self-attention");
  const Eigen::Index n = x.rows();
  const Matrix rows = ConstMap(x.data(), n * tokens_, width_);
  if (cache != nullptr) cache->children.assign(4, Cache{});
  auto child = [&](int i) { return cache != nullptr ? &cache->children[i] : nullptr; };
  const Matrix q = query_.forward(rows, child(0));
  const Matrix k = key_.forward(rows, child(1));
  const Matrix v = value_.forward(rows, child(2));
  const double scale = 1.0 / std::sqrt(static_cast<double>(width_));
  Matrix attn(n * tokens_, tokens_);
  Matrix mixed(n * tokens_, width_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r0 = i * tokens_;
    Matrix s = q.middleRows(r0, tokens_) * k.middleRows(r0, tokens_).transpose() * scale;
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double m = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - m).exp();
      s.row(r) /= s.row(r).sum();
    }
    attn.middleRows(r0, tokens_) = s;
    mixed.middleRows(r0, tokens_) = s * v.middleRows(r0, tokens_);
  }
  Matrix y = output_.forward(mixed, child(3));
  if (cache != nullptr) cache->saved = {q, k, v, attn};
  return MutMap(y.data(), n, static_cast<Eigen::Index>(tokens_) * width_);
}

Matrix SelfAttention::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& q = cache.saved.at(0);
  const Matrix& k = cache.saved.at(1);
  const Matrix& v = cache.saved.at(2);
  const Matrix& attn = cache.saved.at(3);
  const Eigen::Index n = grad_out.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(width_));
  const Matrix g = ConstMap(grad_out.data(), n * tokens_, width_);
  const Matrix d_mixed = output_.backward(g, cache.children.at(3));
  Matrix dq(q.rows(), q.cols()), dk(k.rows(), k.cols()), dv(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index r0 = i * tokens_;
    const auto a = attn.middleRows(r0, tokens_);
    const auto dm = d_mixed.middleRows(r0, tokens_);
    dv.middleRows(r0, tokens_) = a.transpose() * dm;
    const Matrix da = dm * v.middleRows(r0, tokens_).transpose();
    Matrix ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
    ds *= scale;
    dq.middleRows(r0, tokens_) = ds * k.middleRows(r0, tokens_);
    dk.middleRows(r0, tokens_) = ds.transpose() * q.middleRows(r0, tokens_);
  }
  Matrix dx = query_.backward(dq, cache.children.at(0));
  dx += key_.backward(dk, cache.children.at(1));
  dx += value_.backward(dv, cache.children.at(2));
  return MutMap(dx.data(), n, static_cast<Eigen::Index>(tokens_) * width_);
}

void SelfAttention::collect(std::vector<Parameter*>& out) {
  query_.collect(out);
  key_.collect(out);
  value_.collect(out);
  output_.collect(out);
}

// --- TokenMix -------------------------------------------------------------

TokenMix::TokenMix(int tokens, int width, Rng& rng, std::string name) : tokens_(tokens), width_(width) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(tokens));
  weight_ = Parameter(name + ".weight", uniform_matrix(tokens, tokens, bound, rng));
  bias_ = Parameter(name + ".bias", uniform_matrix(1, tokens, bound, rng));
}

Matrix TokenMix::forward(const Matrix& x, Cache* cache) const {
  check_width(x, static_cast<Eigen::Index>(tokens_) * width_, "token-mix");
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const ConstMap xi(x.row(i).data(), tokens_, width_);
    Matrix yi = weight_.value * xi;
    yi.colwise() += bias_.value.row(0).transpose();
    y.row(i) = MutMap(yi.data(), 1, yi.size());
  }
  if (cache != nullptr) cache->saved = {x};
  return y;
}

Matrix TokenMix::backward(const Matrix& grad_out, const Cache& cache) {
  const Matrix& x = cache.saved.at(0);
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const ConstMap xi(x.row(i).data(), tokens_, width_);
    const ConstMap gi(grad_out.row(i).data(), tokens_, width_);
    weight_.grad.noalias() += gi * xi.transpose();
    bias_.grad.row(0) += gi.rowwise().sum().transpose();
    Matrix di = weight_.value.transpose() * gi;
    dx.row(i) = MutMap(di.data(), 1, di.size());
  }
  return dx;
}

void TokenMix::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --- TokenMeanPool --------------------------------------------------------

Matrix TokenMeanPool::forward(const Matrix& x, Cache* cache) const {
  check_width(x, static_cast<Eigen::Index>(tokens_) * width_, "token-pool");
  (void)cache;
  Matrix y = Matrix::Zero(x.rows(), width_);
  for (int t = 0; t < tokens_; ++t) y += x.middleCols(static_cast<Eigen::Index>(t) * width_, width_);
  return y / static_cast<double>(tokens_);
}

Matrix TokenMeanPool::backward(const Matrix& grad_out, const Cache& cache) {
  (void)cache;
  Matrix dx(grad_out.rows(), static_cast<Eigen::Index>(tokens_) * width_);
  for (int t = 0; t < tokens_; ++t) {
    dx.middleCols(static_cast<Eigen::Index>(t) * width_, width_) = grad_out / static_cast<double>(tokens_);
  }
  return dx;
}

// --- GradientReversal -----------------------------------------------------

void GradientReversal::set_coeff(double coeff) {
  if (coeff < 0.0) throw Error(ErrorCode::kPrecondition, "gradient reversal coefficient must be >= 0");
  coeff_ = coeff;
}

Matrix GradientReversal::forward(const Matrix& x, Cache* cache) const {
  (void)cache;
  return x;
}

Matrix GradientReversal::backward(const Matrix& grad_out, const Cache& cache) {
  (void)cache;
  return -coeff_ * grad_out;
}

std::size_t parameter_count(const std::vector<Parameter*>& params) {
  std::size_t total = 0;
  for (const Parameter* p : params) total += static_cast<std::size_t>(p->value.size());
  return total;
}

void zero_grad(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) p->grad.setZero();
}

}  // namespace udab::nn
