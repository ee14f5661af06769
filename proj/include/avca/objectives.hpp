#pragma once

#include <random>
#include <vector>

#include "avca/model.hpp"

namespace avca {

/// Negative pairing for one batch.
///
/// Row i is the anchor and the positive comes from the same row (matching
/// video and label); `negative[i]` names a row of a different class. Rows
/// with no such candidate are marked invalid and leave every triplet term.
struct TripletBatch {
  std::vector<Index> negative;
  std::vector<bool> valid;
  double margin = 1.0;

  Index size() const { return static_cast<Index>(negative.size()); }
  Index valid_count() const {
    Index n = 0;
    for (bool v : valid) n += v ? 1 : 0;
    return n;
  }
  template <typename Scalar>
  std::vector<Scalar> weights() const {
    std::vector<Scalar> w(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) w[i] = valid[i] ? Scalar(1) : Scalar(0);
    return w;
  }
};

/// Draws, for every row, a uniformly random row carrying a different label.
TripletBatch sample_negatives(const std::vector<ClassId>& labels, std::mt19937_64& gen, double margin = 1.0);

/// Scalar values of each objective term; disabled terms read 0.
struct LossBreakdown {
  double l_t = 0.0;
  double l_rec = 0.0;
  double l_ct = 0.0;
  double l_w = 0.0;
  double l_r = 0.0;
  double total = 0.0;
};

/// Mean over weighted rows of max(0, ||a - p|| - ||a - n|| + margin).
template <typename Scalar>
Var<Scalar> triplet(Var<Scalar> anchor, Var<Scalar> positive, Var<Scalar> negative, Scalar margin,
                    std::span<const Scalar> weights) {
  detail::require_same_shape("triplet", anchor, positive);
  detail::require_same_shape("triplet", anchor, negative);
  Var<Scalar> hinge = relu(add_scalar(sub(l2_distance(anchor, positive), l2_distance(anchor, negative)), margin));
  return weighted_mean(hinge, weights);
}

template <typename Scalar>
Var<Scalar> triplet(Var<Scalar> anchor, Var<Scalar> positive, Var<Scalar> negative, Scalar margin) {
  std::vector<Scalar> ones(static_cast<std::size_t>(anchor.rows()), Scalar(1));
  return triplet(anchor, positive, negative, margin, std::span<const Scalar>(ones));
}

namespace detail {

template <typename Scalar>
struct TripletHelper {
  const TripletBatch& batch;
  std::vector<Scalar> weights;

  explicit TripletHelper(const TripletBatch& b) : batch(b), weights(b.weights<Scalar>()) {}

  Var<Scalar> neg(Var<Scalar> x) const {
    if (x.rows() != batch.size()) {
      throw DimensionError("triplet batch has " + std::to_string(batch.size()) + " rows, embeddings have " +
                           std::to_string(x.rows()));
    }
    return gather_rows(x, batch.negative);
  }
  // t(anchor+, positive+, negative_source-)
  Var<Scalar> t(Var<Scalar> anchor, Var<Scalar> positive, Var<Scalar> negative_source) const {
    return triplet(anchor, positive, neg(negative_source), static_cast<Scalar>(batch.margin),
                   std::span<const Scalar>(weights));
  }
};

template <typename Scalar>
Var<Scalar> accumulate_terms(const std::vector<Var<Scalar>>& terms) {
  if (terms.empty()) throw ContractError("loss has no active term for this branch configuration");
  Var<Scalar> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

}  // namespace detail

/// l_t: audio/visual embeddings against the projected label embedding.
template <typename Scalar>
Var<Scalar> loss_base_triplet(const ForwardOutputs<Scalar>& out, const TripletBatch& batch) {
  detail::TripletHelper<Scalar> h(batch);
  std::vector<Var<Scalar>> terms;
  if (out.theta_a.valid()) {
    terms.push_back(h.t(out.theta_a, out.theta_w, out.theta_a));
  }
  if (out.theta_v.valid()) {
    terms.push_back(h.t(out.theta_v, out.theta_w, out.theta_v));
  }
  if (out.theta_a.valid()) terms.push_back(h.t(out.theta_w, out.theta_a, out.theta_w));
  if (out.theta_v.valid()) terms.push_back(h.t(out.theta_w, out.theta_v, out.theta_w));
  return detail::accumulate_terms(terms);
}

/// l_rec: decoded embeddings against the raw label embedding w.
template <typename Scalar>
Var<Scalar> loss_reconstruction(const ForwardOutputs<Scalar>& out, Var<Scalar> w) {
  std::vector<Var<Scalar>> terms;
  if (out.rho_a.valid()) terms.push_back(mse(out.rho_a, w));
  if (out.rho_v.valid()) terms.push_back(mse(out.rho_v, w));
  terms.push_back(mse(out.rho_w, w));
  return detail::accumulate_terms(terms);
}

/// l_ct: decoded label embedding anchors the decoded audio/visual ones.
template <typename Scalar>
Var<Scalar> loss_composite_triplet(const ForwardOutputs<Scalar>& out, const TripletBatch& batch) {
  detail::TripletHelper<Scalar> h(batch);
  std::vector<Var<Scalar>> terms;
  if (out.rho_a.valid()) terms.push_back(h.t(out.rho_w, out.rho_a, out.rho_a));
  if (out.rho_v.valid()) terms.push_back(h.t(out.rho_w, out.rho_v, out.rho_v));
  return detail::accumulate_terms(terms);
}

/// l_w: both lines of the word-anchored triplet family, summed.
template <typename Scalar>
Var<Scalar> loss_w(const ForwardOutputs<Scalar>& out, const TripletBatch& batch) {
  detail::TripletHelper<Scalar> h(batch);
  std::vector<Var<Scalar>> terms;
  if (out.theta_a.valid()) terms.push_back(h.t(out.theta_w, out.theta_a, out.theta_a));
  if (out.theta_v.valid()) terms.push_back(h.t(out.theta_w, out.theta_v, out.theta_v));
  if (out.theta_a.valid()) terms.push_back(h.t(out.theta_a, out.theta_w, out.theta_w));
  if (out.theta_v.valid()) terms.push_back(h.t(out.theta_v, out.theta_w, out.theta_w));
  return detail::accumulate_terms(terms);
}

/// l_r: modality reconstructions plus direct alignment with theta_w.
template <typename Scalar>
Var<Scalar> loss_regularisation(const ForwardOutputs<Scalar>& out) {
  std::vector<Var<Scalar>> terms;
  if (out.phi_rec_v.valid()) terms.push_back(mse(out.phi_rec_v, out.phi_v));
  if (out.phi_rec_a.valid()) terms.push_back(mse(out.phi_rec_a, out.phi_a));
  if (out.theta_v.valid()) terms.push_back(mse(out.theta_v, out.theta_w));
  if (out.theta_a.valid()) terms.push_back(mse(out.theta_a, out.theta_w));
  return detail::accumulate_terms(terms);
}

template <typename Scalar>
struct LossTerms {
  Var<Scalar> total;
  LossBreakdown values;
};

/// l = l_t + (l_rec + l_ct + l_w) + l_r restricted to the enabled terms.
template <typename Scalar>
LossTerms<Scalar> loss_total(const ForwardOutputs<Scalar>& out, Var<Scalar> w, const TripletBatch& batch,
                             const LossMask& mask) {
  if (!mask.any()) throw ConfigError("loss mask enables no term");
  LossTerms<Scalar> result;
  std::vector<Var<Scalar>> terms;
  auto take = [&](bool on, auto&& compute, double& slot) {
    if (!on) return;
    Var<Scalar> term = compute();
    slot = static_cast<double>(scalar_value(term));
    terms.push_back(term);
  };
  take(mask.triplet, [&] { return loss_base_triplet(out, batch); }, result.values.l_t);
  take(mask.reconstruction, [&] { return loss_reconstruction(out, w); }, result.values.l_rec);
  take(mask.composite, [&] { return loss_composite_triplet(out, batch); }, result.values.l_ct);
  take(mask.word, [&] { return loss_w(out, batch); }, result.values.l_w);
  take(mask.regularisation, [&] { return loss_regularisation(out); }, result.values.l_r);
  result.total = detail::accumulate_terms(terms);
  result.values.total = static_cast<double>(scalar_value(result.total));
  return result;
}

}  // namespace avca
