#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "avca/tensor.hpp"

namespace avca {

/// Moment buffers and hyperparameters of a bias-corrected Adam optimizer.
template <typename Scalar>
struct AdamState {
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Applies one Adam update in place to every tensor in `params`.
///
/// Moment buffers are created on the first call and must keep matching the
/// parameter list afterwards.
template <typename Scalar>
void adam_step(std::span<Tensor<Scalar>* const> params, AdamState<Scalar>& state) {
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Matrix<Scalar>::Zero(p->data().rows(), p->data().cols()));
      state.second_moment.push_back(Matrix<Scalar>::Zero(p->data().rows(), p->data().cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: parameter list changed size between steps");
  }
  for (const auto* p : params) {
    if (!p->has_grad()) throw ContractError("adam_step: parameter " + shape_string(p->shape()) + " has no gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto step_size = static_cast<Scalar>(state.learning_rate / bc1);
  const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
  const auto eps = static_cast<Scalar>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = *params[i];
    const Matrix<Scalar>& g = p.grad();
    Matrix<Scalar>& m = state.first_moment[i];
    Matrix<Scalar>& v = state.second_moment[i];
    if (m.rows() != g.rows() || m.cols() != g.cols()) {
      throw DimensionError("adam_step: moment buffer " + shape_string(m) + " vs gradient " + shape_string(g));
    }
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    p.data().array() -= step_size * m.array() / ((v.array() * inv_bc2).sqrt() + eps);
  }
}

/// Reduce-on-plateau learning-rate schedule for a higher-is-better metric.
struct PlateauScheduler {
  double learning_rate = 1e-3;
  int patience = 3;
  double factor = 0.1;
  double best = -std::numeric_limits<double>::infinity();
  int epochs_since_improvement = 0;
  int reductions = 0;

  PlateauScheduler() = default;
  PlateauScheduler(double lr, int patience_epochs, double reduce_factor)
      : learning_rate(lr), patience(patience_epochs), factor(reduce_factor) {}

  /// Records one epoch's metric and returns the learning rate to use next.
  double step(double metric) {
    if (metric > best) {
      best = metric;
      epochs_since_improvement = 0;
      return learning_rate;
    }
    if (++epochs_since_improvement >= patience) {
      learning_rate *= factor;
      ++reductions;
      epochs_since_improvement = 0;
    }
    return learning_rate;
  }
};

}  // namespace avca
