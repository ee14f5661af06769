#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "avca/rng.hpp"
#include "avca/tape.hpp"

namespace avca {

enum class Mode { Train, Eval };

namespace detail {

template <typename Scalar>
void require_same_shape(const char* op, Var<Scalar> a, Var<Scalar> b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
}

template <typename Scalar>
void require_same_tape(Var<Scalar> a, Var<Scalar> b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("add", a, b);
  Tape<Scalar>* t = a.tape;
  return t->record(a.value() + b.value(), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("sub", a, b);
  Tape<Scalar>* t = a.tape;
  return t->record(a.value() - b.value(), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  detail::require_same_shape("mul", a, b);
  Tape<Scalar>* t = a.tape;
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  return t->record(std::move(out), {a, b}, [t, a, b](const Matrix<Scalar>& g) {
    t->accumulate(a, g.cwiseProduct(b.value()));
    t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar s) {
  Tape<Scalar>* t = x.tape;
  return t->record(x.value() * s, {x}, [t, x, s](const Matrix<Scalar>& g) { t->accumulate(x, g * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar s) {
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value().array() + s;
  return t->record(std::move(out), {x}, [t, x](const Matrix<Scalar>& g) { t->accumulate(x, g); });
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) {
  return sub(a, b);
}

// ---------------------------------------------------------------------------
// Affine maps

/// x [B x in] * weight [in x out].
template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> x, Var<Scalar> w) {
  detail::require_same_tape(x, w);
  if (x.cols() != w.rows()) {
    throw DimensionError("matmul: input " + shape_string(x.value()) + " incompatible with weight " +
                         shape_string(w.value()));
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value() * w.value();
  return t->record(std::move(out), {x, w}, [t, x, w](const Matrix<Scalar>& g) {
    if (t->needs_grad(x)) t->accumulate(x, g * w.value().transpose());
    if (t->needs_grad(w)) t->accumulate(w, x.value().transpose() * g);
  });
}

/// x [B x in] * weight [in x out] + bias [out], bias broadcast over rows.
template <typename Scalar>
Var<Scalar> linear(Var<Scalar> x, Var<Scalar> w, Var<Scalar> b) {
  detail::require_same_tape(x, w);
  detail::require_same_tape(x, b);
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: input " + shape_string(x.value()) + ", weight " +
                         shape_string(w.value()) + ", bias " + shape_string(b.value()) +
                         " do not conform");
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return t->record(std::move(out), {x, w, b}, [t, x, w, b](const Matrix<Scalar>& g) {
    if (t->needs_grad(x)) t->accumulate(x, g * w.value().transpose());
    if (t->needs_grad(w)) t->accumulate(w, x.value().transpose() * g);
    if (t->needs_grad(b)) t->accumulate(b, g.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  return t->record(std::move(out), {x}, [t, x](const Matrix<Scalar>& g) {
    t->accumulate(x, (x.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

/// Tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> x) {
  static constexpr Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2 / pi)
  static constexpr Scalar k = static_cast<Scalar>(0.044715);
  Tape<Scalar>* t = x.tape;
  const auto& xa = x.value().array();
  Matrix<Scalar> th = (c * (xa + k * xa.cube())).tanh().matrix();
  Matrix<Scalar> out = (Scalar(0.5) * xa * (Scalar(1) + th.array())).matrix();
  return t->record(std::move(out), {x}, [t, x, th = std::move(th)](const Matrix<Scalar>& g) {
    const auto& xv = x.value().array();
    const auto tv = th.array();
    auto d = Scalar(0.5) * (Scalar(1) + tv) +
             Scalar(0.5) * xv * (Scalar(1) - tv.square()) * c * (Scalar(1) + Scalar(3) * k * xv.square());
    t->accumulate(x, (g.array() * d).matrix());
  });
}

enum class Activation { Relu, Gelu };

template <typename Scalar>
Var<Scalar> activation(Var<Scalar> x, Activation kind) {
  return kind == Activation::Relu ? relu(x) : gelu(x);
}

// ---------------------------------------------------------------------------
// Dropout

/// Draws the inverted-dropout mask: 0 with probability `rate`, else 1/(1-rate).
template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, double rate, const StreamKey& key) {
  auto gen = key.engine();
  const Scalar keep = static_cast<Scalar>(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(rows, cols);
  for (Index i = 0; i < mask.size(); ++i) {
    mask.data()[i] = uniform01(gen) < rate ? Scalar(0) : keep;
  }
  return mask;
}

template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> x, double rate, Mode mode, const StreamKey& key) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Eval || rate == 0.0) return x;
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> mask = dropout_mask<Scalar>(x.rows(), x.cols(), rate, key);
  Matrix<Scalar> out = x.value().cwiseProduct(mask);
  return t->record(std::move(out), {x}, [t, x, mask = std::move(mask)](const Matrix<Scalar>& g) {
    t->accumulate(x, g.cwiseProduct(mask));
  });
}

// ---------------------------------------------------------------------------
// Normalisation

/// Learnable affine pair plus running statistics of one batch-norm layer.
template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> scale;
  Tensor<Scalar> shift;
  RowVector<Scalar> running_mean;
  RowVector<Scalar> running_var;
  Scalar momentum = Scalar(0.1);
  Scalar eps = Scalar(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(Index features)
      : scale(Shape{features}, true),
        shift(Shape{features}, true),
        running_mean(RowVector<Scalar>::Zero(features)),
        running_var(RowVector<Scalar>::Ones(features)) {
    scale.data().setOnes();
  }

  Index features() const { return scale.size(); }
};

/// Batch normalisation over the rows of x [B x F].
///
/// Train mode normalises with the biased batch variance and folds the same
/// biased statistics into the running buffers; eval mode reads the buffers.
template <typename Scalar>
Var<Scalar> batchnorm(Var<Scalar> x, BatchNormState<Scalar>& state, Mode mode) {
  Tape<Scalar>* t = x.tape;
  const Index n = x.rows();
  const Index f = x.cols();
  if (f != state.features()) {
    throw DimensionError("batchnorm: input " + shape_string(x.value()) + " has " + std::to_string(f) +
                         " features, layer expects " + std::to_string(state.features()));
  }
  Var<Scalar> gamma = t->parameter(state.scale);
  Var<Scalar> beta = t->parameter(state.shift);
  const auto g_row = state.scale.data().row(0);
  const auto b_row = state.shift.data().row(0);

  if (mode == Mode::Eval) {
    RowVector<Scalar> inv_std = (state.running_var.array() + state.eps).rsqrt().matrix();
    Matrix<Scalar> xhat = (x.value().rowwise() - state.running_mean).array().rowwise() * inv_std.array();
    Matrix<Scalar> out = (xhat.array().rowwise() * g_row.array()).rowwise() + b_row.array();
    return t->record(std::move(out), {x, gamma, beta},
                     [t, x, gamma, beta, inv_std, xhat = std::move(xhat)](const Matrix<Scalar>& g) {
                       const auto gr = gamma.value().row(0);
                       if (t->needs_grad(x)) {
                         t->accumulate(x, (g.array().rowwise() * (gr.array() * inv_std.array())).matrix());
                       }
                       t->accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                       t->accumulate(beta, g.colwise().sum());
                     });
  }

  if (n < 2) {
    throw DegenerateBatchError("batchnorm: train mode needs at least 2 rows, got " + std::to_string(n));
  }
  RowVector<Scalar> mean = x.value().colwise().mean();
  Matrix<Scalar> centered = x.value().rowwise() - mean;
  RowVector<Scalar> var = centered.array().square().colwise().mean().matrix();
  RowVector<Scalar> inv_std = (var.array() + state.eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered.array().rowwise() * inv_std.array();
  Matrix<Scalar> out = (xhat.array().rowwise() * g_row.array()).rowwise() + b_row.array();

  state.running_mean = (Scalar(1) - state.momentum) * state.running_mean + state.momentum * mean;
  state.running_var = (Scalar(1) - state.momentum) * state.running_var + state.momentum * var;

  return t->record(std::move(out), {x, gamma, beta},
                   [t, x, gamma, beta, inv_std, n, xhat = std::move(xhat)](const Matrix<Scalar>& g) {
                     t->accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                     t->accumulate(beta, g.colwise().sum());
                     if (!t->needs_grad(x)) return;
                     const auto gr = gamma.value().row(0);
                     Matrix<Scalar> gx_hat = g.array().rowwise() * gr.array();
                     RowVector<Scalar> sum_g = gx_hat.colwise().sum();
                     RowVector<Scalar> sum_gx = gx_hat.cwiseProduct(xhat).colwise().sum();
                     Matrix<Scalar> gx = (gx_hat * Scalar(n)).rowwise() - sum_g;
                     gx -= (xhat.array().rowwise() * sum_gx.array()).matrix();
                     gx = gx.array().rowwise() * (inv_std.array() / Scalar(n));
                     t->accumulate(x, gx);
                   });
}

/// Layer normalisation across the columns of each row, eps = 1e-5.
template <typename Scalar>
Var<Scalar> layernorm(Var<Scalar> x, Var<Scalar> scale, Var<Scalar> shift, Scalar eps = Scalar(1e-5)) {
  detail::require_same_tape(x, scale);
  detail::require_same_tape(x, shift);
  const Index f = x.cols();
  if (scale.rows() != 1 || scale.cols() != f || shift.rows() != 1 || shift.cols() != f) {
    throw DimensionError("layernorm: input " + shape_string(x.value()) + " with scale " +
                         shape_string(scale.value()) + " and shift " + shape_string(shift.value()));
  }
  Tape<Scalar>* t = x.tape;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.value().rowwise().mean();
  Matrix<Scalar> centered = x.value().colwise() - mean;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std =
      (centered.array().square().rowwise().mean() + eps).rsqrt().matrix();
  Matrix<Scalar> xhat = centered.array().colwise() * inv_std.array();
  Matrix<Scalar> out = (xhat.array().rowwise() * scale.value().row(0).array()).rowwise() +
                       shift.value().row(0).array();
  return t->record(std::move(out), {x, scale, shift},
                   [t, x, scale, shift, f, inv_std, xhat = std::move(xhat)](const Matrix<Scalar>& g) {
                     t->accumulate(scale, g.cwiseProduct(xhat).colwise().sum());
                     t->accumulate(shift, g.colwise().sum());
                     if (!t->needs_grad(x)) return;
                     Matrix<Scalar> gx_hat = g.array().rowwise() * scale.value().row(0).array();
                     Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_g = gx_hat.rowwise().sum();
                     Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum_gx = gx_hat.cwiseProduct(xhat).rowwise().sum();
                     Matrix<Scalar> gx = (gx_hat * Scalar(f)).colwise() - sum_g;
                     gx -= (xhat.array().colwise() * sum_gx.array()).matrix();
                     gx = gx.array().colwise() * (inv_std.array() / Scalar(f));
                     t->accumulate(x, gx);
                   });
}

// ---------------------------------------------------------------------------
// Softmax and reshaping

/// Row-wise softmax, stabilised by subtracting each row's maximum.
template <typename Scalar>
Var<Scalar> softmax_rows(Var<Scalar> x) {
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value().colwise() - x.value().rowwise().maxCoeff();
  out = out.array().exp();
  out = out.array().colwise() / out.array().rowwise().sum();
  Matrix<Scalar> y = out;
  return t->record(std::move(out), {x}, [t, x, y = std::move(y)](const Matrix<Scalar>& g) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dot = g.cwiseProduct(y).rowwise().sum();
    t->accumulate(x, ((g.colwise() - dot).array() * y.array()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols: " + shape_string(a.value()) + " vs " + shape_string(b.value()));
  }
  Tape<Scalar>* t = a.tape;
  const Index ca = a.cols();
  const Index cb = b.cols();
  Matrix<Scalar> out(a.rows(), ca + cb);
  out << a.value(), b.value();
  return t->record(std::move(out), {a, b}, [t, a, b, ca, cb](const Matrix<Scalar>& g) {
    t->accumulate(a, g.leftCols(ca));
    t->accumulate(b, g.rightCols(cb));
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows: " + shape_string(a.value()) + " vs " + shape_string(b.value()));
  }
  Tape<Scalar>* t = a.tape;
  const Index ra = a.rows();
  const Index rb = b.rows();
  Matrix<Scalar> out(ra + rb, a.cols());
  out << a.value(), b.value();
  return t->record(std::move(out), {a, b}, [t, a, b, ra, rb](const Matrix<Scalar>& g) {
    t->accumulate(a, g.topRows(ra));
    t->accumulate(b, g.bottomRows(rb));
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> x, Index start, Index count) {
  if (start < 0 || count <= 0 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_string(x.value()));
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value().middleRows(start, count);
  return t->record(std::move(out), {x}, [t, x, start, count](const Matrix<Scalar>& g) {
    Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
    gx.middleRows(start, count) = g;
    t->accumulate(x, gx);
  });
}

/// out[:, j] = x[:, index[j]]; repeated indices fan out and sum on backward.
template <typename Scalar>
Var<Scalar> gather_cols(Var<Scalar> x, std::vector<Index> index) {
  for (Index j : index) {
    if (j < 0 || j >= x.cols()) throw DimensionError("gather_cols: column index out of range");
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out(x.rows(), static_cast<Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) out.col(static_cast<Index>(j)) = x.value().col(index[j]);
  return t->record(std::move(out), {x}, [t, x, index = std::move(index)](const Matrix<Scalar>& g) {
    Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
    for (std::size_t j = 0; j < index.size(); ++j) gx.col(index[j]) += g.col(static_cast<Index>(j));
    t->accumulate(x, gx);
  });
}

/// out[i, :] = x[index[i], :].
template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> x, std::vector<Index> index) {
  for (Index i : index) {
    if (i < 0 || i >= x.rows()) throw DimensionError("gather_rows: row index out of range");
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Index>(i)) = x.value().row(index[i]);
  return t->record(std::move(out), {x}, [t, x, index = std::move(index)](const Matrix<Scalar>& g) {
    Matrix<Scalar> gx = Matrix<Scalar>::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < index.size(); ++i) gx.row(index[i]) += g.row(static_cast<Index>(i));
    t->accumulate(x, gx);
  });
}

/// Reinterprets the row-major buffer with a new row/column split.
template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Index rows, Index cols) {
  if (rows * cols != x.value().size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.value()) + " as " +
                         shape_string(Shape{rows, cols}));
  }
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(x.value().data(), rows, cols);
  const Index r0 = x.rows();
  const Index c0 = x.cols();
  return t->record(std::move(out), {x}, [t, x, r0, c0](const Matrix<Scalar>& g) {
    t->accumulate(x, Eigen::Map<const Matrix<Scalar>>(g.data(), r0, c0));
  });
}

/// Sums consecutive column blocks of width `group`: [B x G*group] -> [B x G].
template <typename Scalar>
Var<Scalar> group_sum_cols(Var<Scalar> x, Index group) {
  if (group <= 0 || x.cols() % group != 0) {
    throw DimensionError("group_sum_cols: width " + std::to_string(x.cols()) + " not divisible by " +
                         std::to_string(group));
  }
  Tape<Scalar>* t = x.tape;
  const Index groups = x.cols() / group;
  Matrix<Scalar> out(x.rows(), groups);
  for (Index h = 0; h < groups; ++h) out.col(h) = x.value().middleCols(h * group, group).rowwise().sum();
  return t->record(std::move(out), {x}, [t, x, group, groups](const Matrix<Scalar>& g) {
    Matrix<Scalar> gx(x.rows(), x.cols());
    for (Index h = 0; h < groups; ++h) gx.middleCols(h * group, group) = g.col(h).replicate(1, group);
    t->accumulate(x, gx);
  });
}

// ---------------------------------------------------------------------------
// Reductions and distances

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  return t->record(std::move(out), {x}, [t, x](const Matrix<Scalar>& g) {
    t->accumulate(x, Matrix<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.value().size()));
}

/// Sum_i w_i x_i / Sum_i w_i over a column x [B x 1]; zero when all weights are 0.
template <typename Scalar>
Var<Scalar> weighted_mean(Var<Scalar> x, std::span<const Scalar> weights) {
  if (x.cols() != 1 || static_cast<std::size_t>(x.rows()) != weights.size()) {
    throw DimensionError("weighted_mean: column " + shape_string(x.value()) + " with " +
                         std::to_string(weights.size()) + " weights");
  }
  Tape<Scalar>* t = x.tape;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> w(x.rows());
  for (Index i = 0; i < x.rows(); ++i) w(i) = weights[static_cast<std::size_t>(i)];
  const Scalar total = w.sum();
  if (total > Scalar(0)) w /= total;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total > Scalar(0) ? x.value().col(0).dot(w) : Scalar(0);
  return t->record(std::move(out), {x}, [t, x, w](const Matrix<Scalar>& g) {
    if (w.sum() == Scalar(0)) return;
    t->accumulate(x, w * g(0, 0));
  });
}

/// Euclidean norm of each row: [B x n] -> [B x 1]. Zero rows get a zero subgradient.
template <typename Scalar>
Var<Scalar> row_norm(Var<Scalar> x) {
  Tape<Scalar>* t = x.tape;
  Matrix<Scalar> out = x.value().rowwise().norm();
  Matrix<Scalar> norms = out;
  return t->record(std::move(out), {x}, [t, x, norms = std::move(norms)](const Matrix<Scalar>& g) {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coef(x.rows());
    for (Index i = 0; i < x.rows(); ++i) {
      coef(i) = norms(i, 0) > Scalar(0) ? g(i, 0) / norms(i, 0) : Scalar(0);
    }
    t->accumulate(x, (x.value().array().colwise() * coef.array()).matrix());
  });
}

/// Per-row ||u - v||_2 as a column [B x 1].
template <typename Scalar>
Var<Scalar> l2_distance(Var<Scalar> u, Var<Scalar> v) {
  detail::require_same_shape("l2_distance", u, v);
  return row_norm(sub(u, v));
}

/// Mean squared error: mean over features per row, then mean over the batch.
template <typename Scalar>
Var<Scalar> mse(Var<Scalar> b, Var<Scalar> c) {
  detail::require_same_shape("mse", b, c);
  Var<Scalar> diff = sub(b, c);
  return mean(mul(diff, diff));
}

template <typename Scalar>
Scalar scalar_value(Var<Scalar> x) {
  if (x.value().size() != 1) throw ContractError("expected a scalar, got " + shape_string(x.value()));
  return x.value()(0, 0);
}

}  // namespace avca
