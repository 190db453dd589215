// Dense parameter storage and the differentiable building blocks shared by
// the encoder, the relation head and the pretraining heads. All arithmetic is
// double precision so analytic gradients can be checked by finite
// differences.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "argrel/common.hpp"

namespace argrel {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;

struct ParamTensor {
  std::string name;
  Mat value;
};

// Ordered collection of named tensors; gradients and optimizer moments use
// the same layout as the parameters they belong to.
struct ParamSet {
  std::vector<ParamTensor> tensors;

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    tensors.push_back({std::move(name), Mat::Zero(rows, cols)});
    return tensors.size() - 1;
  }
  Mat& operator[](std::size_t i) { return tensors[i].value; }
  const Mat& operator[](std::size_t i) const { return tensors[i].value; }
  std::size_t size() const { return tensors.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
    return n;
  }
  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& t : tensors) z.tensors.push_back({t.name, Mat::Zero(t.value.rows(), t.value.cols())});
    return z;
  }
  void set_zero() {
    for (auto& t : tensors) t.value.setZero();
  }
  void scale(double s) {
    for (auto& t : tensors) t.value *= s;
  }
  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.value.allFinite()) return false;
    return true;
  }
  bool same_shape(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (tensors[i].name != o.tensors[i].name || tensors[i].value.rows() != o[i].rows() ||
          tensors[i].value.cols() != o[i].cols())
        return false;
    return true;
  }
  // Bitwise equality of every entry.
  bool operator==(const ParamSet& o) const {
    if (!same_shape(o)) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (tensors[i].value != o[i]) return false;
    return true;
  }
};

inline void init_normal(Mat& m, double stddev, Rng& rng) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
}

// ---------------------------------------------------------------------------
// Adam with bias correction.

struct AdamState {
  ParamSet m, v;
  long step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit AdamState(const ParamSet& like) : m(like.zeros_like()), v(like.zeros_like()) {}

  void update(ParamSet& params, const ParamSet& grads, double lr) {
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      const auto& g = grads[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g.cwiseProduct(g);
      p.array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

enum class Schedule { constant, linear };

inline std::string_view to_string(Schedule s) { return s == Schedule::constant ? "constant" : "linear"; }
inline Schedule schedule_from_string(std::string_view s) {
  if (s == "constant") return Schedule::constant;
  if (s == "linear") return Schedule::linear;
  fail(ErrorCode::parse, "unknown schedule '" + std::string(s) + "'");
}

// Linear warmup to `lr`, then constant or linear decay to zero at `total`.
inline double scheduled_lr(double lr, long step, long warmup, long total, Schedule schedule) {
  if (warmup > 0 && step < warmup) return lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (schedule == Schedule::constant || total <= warmup) return lr;
  const double remaining = static_cast<double>(total - step) / static_cast<double>(total - warmup);
  return lr * std::max(0.0, remaining);
}

// ---------------------------------------------------------------------------
// Layer primitives. Each forward records what its backward needs.

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;
  Eigen::VectorXd inv_std;
};

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache* cache) {
  const Eigen::Index d = x.cols();
  Mat xhat(x.rows(), d);
  Eigen::VectorXd inv(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    inv(r) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(r) = (x.row(r).array() - mu) * inv(r);
  }
  Mat y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

// Returns dx; accumulates into dgain/dbias.
inline Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& c, Mat& dgain,
                               Mat& dbias) {
  dgain.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Mat dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).mean();
    dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

// tanh approximation of GELU.
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline Mat gelu(const Mat& u) {
  return u.unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
  });
}

inline Mat gelu_backward(const Mat& du, const Mat& u) {
  const Mat deriv = u.unaryExpr([](double x) {
    const double t = std::tanh(kGeluC * (x + 0.044715 * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  });
  return du.cwiseProduct(deriv);
}

inline void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}

inline RowVec softmax(const RowVec& logits) {
  const double mx = logits.maxCoeff();
  RowVec e = (logits.array() - mx).exp();
  return e / e.sum();
}

// Inverted dropout mask: entries are 0 or 1/(1-p).
inline Mat dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < p ? 0.0 : keep;
  return m;
}

}  // namespace argrel
