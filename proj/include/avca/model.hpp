#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avca/config.hpp"
#include "avca/ops.hpp"

namespace avca {

using ClassId = std::uint32_t;

// Dropout sites; each keys its own random stream.
enum class DropoutSite : std::uint64_t {
  AudioEnc1 = 1,
  AudioEnc2,
  VisualEnc1,
  VisualEnc2,
  AttnHidden,
  AttnOut,
  AudioProj1,
  AudioProj2,
  VisualProj1,
  VisualProj2,
  WordProj,
  DecoderA,
  DecoderV,
  DecoderW,
  AudioRec,
  VisualRec,
};

enum class Modality { Audio, Visual };

template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;  // [in x out]
  Tensor<Scalar> bias;    // [out]

  Linear() = default;
  Linear(Index in, Index out) : weight(Shape{in, out}, true), bias(Shape{out}, true) {}

  Index fan_in() const { return weight.shape()[0]; }

  Var<Scalar> operator()(Var<Scalar> x) {
    Tape<Scalar>* t = x.tape;
    return linear(x, t->parameter(weight), t->parameter(bias));
  }
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> scale;
  Tensor<Scalar> shift;

  LayerNorm() = default;
  explicit LayerNorm(Index features) : scale(Shape{features}, true), shift(Shape{features}, true) {
    scale.data().setOnes();
  }

  Var<Scalar> operator()(Var<Scalar> x) {
    Tape<Scalar>* t = x.tape;
    return layernorm(x, t->parameter(scale), t->parameter(shift));
  }
};

/// Linear layer followed by batch normalisation, ReLU and dropout.
template <typename Scalar>
struct LinearBn {
  Linear<Scalar> fc;
  BatchNormState<Scalar> bn;

  LinearBn() = default;
  LinearBn(Index in, Index out) : fc(in, out), bn(out) {}

  Var<Scalar> forward(Var<Scalar> x, double rate, Mode mode, const StreamKey& key) {
    return dropout(relu(batchnorm(fc(x), bn, mode)), rate, mode, key);
  }
};

template <typename Scalar>
struct TwoLayerBlock {
  LinearBn<Scalar> first;
  LinearBn<Scalar> second;

  TwoLayerBlock() = default;
  TwoLayerBlock(Index in, Index hidden, Index out) : first(in, hidden), second(hidden, out) {}
};

/// Transformer layer over the two-token (audio, visual) sequence.
///
/// Query/key/value/output projections, the feed-forward block and both
/// layer norms are shared by the two tokens.
template <typename Scalar>
struct CrossAttentionParams {
  Linear<Scalar> query, key, value, out;
  LayerNorm<Scalar> attn_norm;
  Linear<Scalar> ff_in, ff_out;
  LayerNorm<Scalar> ff_norm;

  CrossAttentionParams() = default;
  CrossAttentionParams(Index k_f, Index k_hidden)
      : query(k_f, k_f),
        key(k_f, k_f),
        value(k_f, k_f),
        out(k_f, k_f),
        attn_norm(k_f),
        ff_in(k_f, k_hidden),
        ff_out(k_hidden, k_f),
        ff_norm(k_f) {}
};

/// Every learnable tensor and batch-norm buffer of the model.
template <typename Scalar>
struct AvcaParams {
  AvcaConfig config;
  TwoLayerBlock<Scalar> audio_enc, visual_enc;
  CrossAttentionParams<Scalar> attention;
  TwoLayerBlock<Scalar> audio_proj, visual_proj;
  LinearBn<Scalar> word_proj;
  LinearBn<Scalar> decoder;
  LinearBn<Scalar> audio_rec, visual_rec;

  AvcaParams() = default;
  explicit AvcaParams(const AvcaConfig& cfg)
      : config(cfg),
        audio_enc(cfg.k_input, cfg.k_fhidd, cfg.k_f),
        visual_enc(cfg.k_input, cfg.k_fhidd, cfg.k_f),
        attention(cfg.k_f, cfg.k_attnhidd),
        audio_proj(cfg.k_f, cfg.k_fhidd, cfg.k_proj),
        visual_proj(cfg.k_f, cfg.k_fhidd, cfg.k_proj),
        word_proj(cfg.k_w2v, cfg.k_proj),
        decoder(cfg.k_proj, cfg.k_w2v),
        audio_rec(cfg.k_proj, cfg.k_f),
        visual_rec(cfg.k_proj, cfg.k_f) {}

  /// Visits (name, tensor) for every learnable tensor in a fixed order.
  template <typename F>
  void for_each_parameter(F&& f) {
    auto lin = [&](const std::string& n, Linear<Scalar>& l) {
      f(n + ".weight", l.weight);
      f(n + ".bias", l.bias);
    };
    auto lbn = [&](const std::string& n, LinearBn<Scalar>& l) {
      lin(n, l.fc);
      f(n + ".bn.scale", l.bn.scale);
      f(n + ".bn.shift", l.bn.shift);
    };
    auto ln = [&](const std::string& n, LayerNorm<Scalar>& l) {
      f(n + ".scale", l.scale);
      f(n + ".shift", l.shift);
    };
    lbn("audio_enc.fc1", audio_enc.first);
    lbn("audio_enc.fc2", audio_enc.second);
    lbn("visual_enc.fc1", visual_enc.first);
    lbn("visual_enc.fc2", visual_enc.second);
    lin("attention.query", attention.query);
    lin("attention.key", attention.key);
    lin("attention.value", attention.value);
    lin("attention.out", attention.out);
    ln("attention.attn_norm", attention.attn_norm);
    lin("attention.ff_in", attention.ff_in);
    lin("attention.ff_out", attention.ff_out);
    ln("attention.ff_norm", attention.ff_norm);
    lbn("audio_proj.fc1", audio_proj.first);
    lbn("audio_proj.fc2", audio_proj.second);
    lbn("visual_proj.fc1", visual_proj.first);
    lbn("visual_proj.fc2", visual_proj.second);
    lbn("word_proj", word_proj);
    lbn("decoder", decoder);
    lbn("audio_rec", audio_rec);
    lbn("visual_rec", visual_rec);
  }

  /// Visits (name, batch-norm state) for every batch-norm layer.
  template <typename F>
  void for_each_batchnorm(F&& f) {
    f("audio_enc.fc1.bn", audio_enc.first.bn);
    f("audio_enc.fc2.bn", audio_enc.second.bn);
    f("visual_enc.fc1.bn", visual_enc.first.bn);
    f("visual_enc.fc2.bn", visual_enc.second.bn);
    f("audio_proj.fc1.bn", audio_proj.first.bn);
    f("audio_proj.fc2.bn", audio_proj.second.bn);
    f("visual_proj.fc1.bn", visual_proj.first.bn);
    f("visual_proj.fc2.bn", visual_proj.second.bn);
    f("word_proj.bn", word_proj.bn);
    f("decoder.bn", decoder.bn);
    f("audio_rec.bn", audio_rec.bn);
    f("visual_rec.bn", visual_rec.bn);
  }

  std::vector<Tensor<Scalar>*> parameter_list() {
    std::vector<Tensor<Scalar>*> out;
    for_each_parameter([&](const std::string&, Tensor<Scalar>& t) { out.push_back(&t); });
    return out;
  }

  // Allocates zero gradients where missing, zeroes the rest.
  void zero_grad() {
    for_each_parameter([](const std::string&, Tensor<Scalar>& t) { t.zero_grad(); });
  }

  template <typename Other>
  AvcaParams<Other> cast() {
    AvcaParams<Other> out(config);
    std::vector<Tensor<Other>*> dst = out.parameter_list();
    std::size_t i = 0;
    for_each_parameter([&](const std::string&, Tensor<Scalar>& t) { *dst[i++] = t.template cast<Other>(); });
    std::vector<BatchNormState<Other>*> dst_bn;
    out.for_each_batchnorm([&](const std::string&, BatchNormState<Other>& b) { dst_bn.push_back(&b); });
    i = 0;
    for_each_batchnorm([&](const std::string&, BatchNormState<Scalar>& b) {
      dst_bn[i]->running_mean = b.running_mean.template cast<Other>();
      dst_bn[i]->running_var = b.running_var.template cast<Other>();
      ++i;
    });
    return out;
  }
};

/// Name and shape of every learnable tensor for `config`, in visiting order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const AvcaConfig& config);

/// Exact number of learnable scalars (batch-norm running buffers excluded).
long long param_count(const AvcaConfig& config);

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases and shifts 0; scales 1.
template <typename Scalar>
AvcaParams<Scalar> init_params(const AvcaConfig& config, std::uint64_t seed) {
  config.validate();
  AvcaParams<Scalar> params(config);
  std::uint64_t tensor_index = 0;
  params.for_each_parameter([&](const std::string& name, Tensor<Scalar>& t) {
    ++tensor_index;
    const bool is_weight = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (!is_weight) return;
    auto gen = StreamKey{seed, tensor_index, 0, stream::kInit}.engine();
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.shape()[0]));
    for (Index i = 0; i < t.size(); ++i) {
      t.data().data()[i] = static_cast<Scalar>((2.0 * uniform01(gen) - 1.0) * bound);
    }
  });
  return params;
}

/// Side information of a forward pass: mode and the base random stream.
struct ForwardContext {
  Mode mode = Mode::Eval;
  StreamKey key;

  StreamKey site(DropoutSite s) const { return key.with_layer(static_cast<std::uint64_t>(s)); }
};

/// Every intermediate touched by the objective. Inactive branches hold invalid Vars.
template <typename Scalar>
struct ForwardOutputs {
  Var<Scalar> phi_a, phi_v;
  Var<Scalar> phi_att_a, phi_att_v;
  Var<Scalar> theta_a, theta_v, theta_w;
  Var<Scalar> rho_a, rho_v, rho_w;
  Var<Scalar> phi_rec_a, phi_rec_v;
  // Softmax over the two source tokens, one row per (token, sample, head).
  Var<Scalar> attention_weights;
};

template <typename Scalar>
Var<Scalar> encoder_forward(Var<Scalar> x, AvcaParams<Scalar>& params, Modality branch, const ForwardContext& ctx) {
  const AvcaConfig& cfg = params.config;
  if (x.cols() != cfg.k_input) {
    throw DimensionError("encoder: input width " + std::to_string(x.cols()) + " != k_input " +
                         std::to_string(cfg.k_input));
  }
  const bool audio = branch == Modality::Audio;
  auto& enc = audio ? params.audio_enc : params.visual_enc;
  Var<Scalar> h = enc.first.forward(x, cfg.r_enc, ctx.mode,
                                    ctx.site(audio ? DropoutSite::AudioEnc1 : DropoutSite::VisualEnc1));
  return enc.second.forward(h, cfg.r_enc, ctx.mode,
                            ctx.site(audio ? DropoutSite::AudioEnc2 : DropoutSite::VisualEnc2));
}

template <typename Scalar>
struct CrossAttentionOutputs {
  Var<Scalar> audio;
  Var<Scalar> visual;
  Var<Scalar> weights;
};

template <typename Scalar>
CrossAttentionOutputs<Scalar> cross_attention_forward(Var<Scalar> phi_a, Var<Scalar> phi_v, AvcaParams<Scalar>& params,
                                                      const ForwardContext& ctx) {
  detail::require_same_shape("cross_attention", phi_a, phi_v);
  const AvcaConfig& cfg = params.config;
  if (phi_a.cols() != cfg.k_f) {
    throw DimensionError("cross_attention: width " + std::to_string(phi_a.cols()) + " != k_f " +
                         std::to_string(cfg.k_f));
  }
  auto& p = params.attention;
  const Index batch = phi_a.rows();
  const Index heads = cfg.heads;
  const Index head_dim = cfg.head_dim();

  // Rows [0, B) are the audio token, [B, 2B) the visual token.
  Var<Scalar> tokens = concat_rows(phi_a, phi_v);
  Var<Scalar> q = p.query(tokens);
  Var<Scalar> k = p.key(tokens);
  Var<Scalar> v = p.value(tokens);
  auto source = [&](Var<Scalar> m, Index start) {
    Var<Scalar> part = slice_rows(m, start, batch);
    return concat_rows(part, part);
  };
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  Var<Scalar> score_a = scale(group_sum_cols(mul(q, source(k, 0)), head_dim), inv_sqrt);
  Var<Scalar> score_v = scale(group_sum_cols(mul(q, source(k, batch)), head_dim), inv_sqrt);

  // Interleave to [a0, v0, a1, v1, ...] so each (row, head) owns two adjacent columns.
  std::vector<Index> interleave;
  for (Index h = 0; h < heads; ++h) {
    interleave.push_back(h);
    interleave.push_back(heads + h);
  }
  Var<Scalar> scores = gather_cols(concat_cols(score_a, score_v), interleave);
  Var<Scalar> weights = softmax_rows(reshape(scores, 2 * batch * heads, 2));
  Var<Scalar> weights_wide = reshape(weights, 2 * batch, 2 * heads);

  std::vector<Index> pick_a(static_cast<std::size_t>(cfg.k_f));
  std::vector<Index> pick_v(static_cast<std::size_t>(cfg.k_f));
  for (Index d = 0; d < cfg.k_f; ++d) {
    pick_a[static_cast<std::size_t>(d)] = 2 * (d / head_dim);
    pick_v[static_cast<std::size_t>(d)] = 2 * (d / head_dim) + 1;
  }
  Var<Scalar> mixed = add(mul(gather_cols(weights_wide, pick_a), source(v, 0)),
                          mul(gather_cols(weights_wide, pick_v), source(v, batch)));
  Var<Scalar> attended = p.attn_norm(add(tokens, p.out(mixed)));

  Var<Scalar> hidden = dropout(gelu(p.ff_in(attended)), cfg.r_enc, ctx.mode, ctx.site(DropoutSite::AttnHidden));
  Var<Scalar> ff = dropout(p.ff_out(hidden), cfg.r_enc, ctx.mode, ctx.site(DropoutSite::AttnOut));
  Var<Scalar> out = p.ff_norm(add(attended, ff));
  return {slice_rows(out, 0, batch), slice_rows(out, batch, batch), weights};
}

template <typename Scalar>
Var<Scalar> project_forward(Var<Scalar> x, TwoLayerBlock<Scalar>& block, double rate, const ForwardContext& ctx,
                            DropoutSite s1, DropoutSite s2) {
  return block.second.forward(block.first.forward(x, rate, ctx.mode, ctx.site(s1)), rate, ctx.mode, ctx.site(s2));
}

/// theta_w for a batch of class-label embeddings [N x k_w2v].
template <typename Scalar>
Var<Scalar> word_projection_forward(Var<Scalar> w, AvcaParams<Scalar>& params, const ForwardContext& ctx) {
  const AvcaConfig& cfg = params.config;
  if (w.cols() != cfg.k_w2v) {
    throw DimensionError("word projection: width " + std::to_string(w.cols()) + " != k_w2v " +
                         std::to_string(cfg.k_w2v));
  }
  return params.word_proj.forward(w, cfg.r_dec, ctx.mode, ctx.site(DropoutSite::WordProj));
}

template <typename Scalar>
ForwardOutputs<Scalar> avca_forward(Var<Scalar> a, Var<Scalar> v, Var<Scalar> w, AvcaParams<Scalar>& params,
                                    const ForwardContext& ctx) {
  const AvcaConfig& cfg = params.config;
  ForwardOutputs<Scalar> out;
  if (cfg.uses_audio()) out.phi_a = encoder_forward(a, params, Modality::Audio, ctx);
  if (cfg.uses_visual()) out.phi_v = encoder_forward(v, params, Modality::Visual, ctx);

  Var<Scalar> pre_a = out.phi_a;
  Var<Scalar> pre_v = out.phi_v;
  if (cfg.uses_attention()) {
    auto att = cross_attention_forward(out.phi_a, out.phi_v, params, ctx);
    out.phi_att_a = att.audio;
    out.phi_att_v = att.visual;
    out.attention_weights = att.weights;
    pre_a = add(att.audio, out.phi_a);
    pre_v = add(att.visual, out.phi_v);
  }

  if (cfg.uses_audio()) {
    out.theta_a = project_forward(pre_a, params.audio_proj, cfg.r_proj, ctx, DropoutSite::AudioProj1,
                                  DropoutSite::AudioProj2);
  }
  if (cfg.uses_visual()) {
    out.theta_v = project_forward(pre_v, params.visual_proj, cfg.r_proj, ctx, DropoutSite::VisualProj1,
                                  DropoutSite::VisualProj2);
  }
  out.theta_w = word_projection_forward(w, params, ctx);

  auto decode = [&](Var<Scalar> theta, DropoutSite s) {
    return params.decoder.forward(theta, cfg.r_dec, ctx.mode, ctx.site(s));
  };
  if (cfg.uses_audio()) {
    out.rho_a = decode(out.theta_a, DropoutSite::DecoderA);
    out.phi_rec_a = params.audio_rec.forward(out.theta_a, cfg.r_dec, ctx.mode, ctx.site(DropoutSite::AudioRec));
  }
  if (cfg.uses_visual()) {
    out.rho_v = decode(out.theta_v, DropoutSite::DecoderV);
    out.phi_rec_v = params.visual_rec.forward(out.theta_v, cfg.r_dec, ctx.mode, ctx.site(DropoutSite::VisualRec));
  }
  out.rho_w = decode(out.theta_w, DropoutSite::DecoderW);
  return out;
}

// ---------------------------------------------------------------------------
// Inference

/// Eval-mode projected embeddings of a sample set.
template <typename Scalar>
struct SampleEmbeddings {
  Matrix<Scalar> theta_a;  // empty when the audio branch is inactive
  Matrix<Scalar> theta_v;  // empty when the visual branch is inactive
};

template <typename Scalar>
SampleEmbeddings<Scalar> embed_samples(AvcaParams<Scalar>& params, const Matrix<Scalar>& audio,
                                       const Matrix<Scalar>& visual) {
  Tape<Scalar> tape;
  ForwardContext ctx{Mode::Eval, {}};
  const AvcaConfig& cfg = params.config;
  Var<Scalar> a = tape.constant(audio);
  Var<Scalar> v = tape.constant(visual);
  Var<Scalar> phi_a, phi_v;
  if (cfg.uses_audio()) phi_a = encoder_forward(a, params, Modality::Audio, ctx);
  if (cfg.uses_visual()) phi_v = encoder_forward(v, params, Modality::Visual, ctx);
  Var<Scalar> pre_a = phi_a;
  Var<Scalar> pre_v = phi_v;
  if (cfg.uses_attention()) {
    auto att = cross_attention_forward(phi_a, phi_v, params, ctx);
    pre_a = add(att.audio, phi_a);
    pre_v = add(att.visual, phi_v);
  }
  SampleEmbeddings<Scalar> out;
  if (cfg.uses_audio()) {
    out.theta_a = project_forward(pre_a, params.audio_proj, cfg.r_proj, ctx, DropoutSite::AudioProj1,
                                  DropoutSite::AudioProj2).value();
  }
  if (cfg.uses_visual()) {
    out.theta_v = project_forward(pre_v, params.visual_proj, cfg.r_proj, ctx, DropoutSite::VisualProj1,
                                  DropoutSite::VisualProj2).value();
  }
  return out;
}

/// Eval-mode theta_w for each row of a class-embedding matrix.
template <typename Scalar>
Matrix<Scalar> embed_classes(AvcaParams<Scalar>& params, const Matrix<Scalar>& class_embeddings) {
  Tape<Scalar> tape;
  ForwardContext ctx{Mode::Eval, {}};
  return word_projection_forward(tape.constant(class_embeddings), params, ctx).value();
}

/// dist(i, j) = ||samples_i - classes_j||_2, computed directly for exactness.
template <typename Scalar>
Matrix<Scalar> pairwise_l2(const Matrix<Scalar>& samples, const Matrix<Scalar>& classes) {
  if (samples.cols() != classes.cols()) {
    throw DimensionError("pairwise_l2: " + shape_string(samples) + " vs " + shape_string(classes));
  }
  Matrix<Scalar> d(samples.rows(), classes.rows());
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < classes.rows(); ++j) d(i, j) = (samples.row(i) - classes.row(j)).norm();
  }
  return d;
}

/// Per-sample, per-class distance used by the chosen classifier variant.
template <typename Scalar>
Matrix<Scalar> class_distances(const SampleEmbeddings<Scalar>& emb, const Matrix<Scalar>& class_table,
                               EvalOutput variant) {
  auto need = [](const Matrix<Scalar>& m, const char* what) -> const Matrix<Scalar>& {
    if (m.size() == 0) throw ConfigError(std::string("eval_output needs ") + what + ", whose branch is inactive");
    return m;
  };
  switch (variant) {
    case EvalOutput::ThetaV: return pairwise_l2(need(emb.theta_v, "theta_v"), class_table);
    case EvalOutput::ThetaA: return pairwise_l2(need(emb.theta_a, "theta_a"), class_table);
    case EvalOutput::Sum:
      return pairwise_l2(need(emb.theta_a, "theta_a"), class_table) +
             pairwise_l2(need(emb.theta_v, "theta_v"), class_table);
    case EvalOutput::Min:
      return pairwise_l2(need(emb.theta_a, "theta_a"), class_table)
          .cwiseMin(pairwise_l2(need(emb.theta_v, "theta_v"), class_table));
  }
  throw ConfigError("unknown eval_output");
}

/// Row-wise argmin returning class ids; equal distances go to the lowest id.
template <typename Scalar>
std::vector<ClassId> predict_from_distances(const Matrix<Scalar>& distances, const std::vector<ClassId>& class_ids) {
  if (class_ids.empty() || distances.cols() != static_cast<Index>(class_ids.size())) {
    throw ContractError("predict: class table is empty or does not match the distance matrix");
  }
  std::vector<ClassId> out(static_cast<std::size_t>(distances.rows()));
  for (Index i = 0; i < distances.rows(); ++i) {
    Index best = 0;
    for (Index j = 1; j < distances.cols(); ++j) {
      const Scalar dj = distances(i, j);
      const Scalar db = distances(i, best);
      if (dj < db || (dj == db && class_ids[static_cast<std::size_t>(j)] < class_ids[static_cast<std::size_t>(best)])) {
        best = j;
      }
    }
    out[static_cast<std::size_t>(i)] = class_ids[static_cast<std::size_t>(best)];
  }
  return out;
}

template <typename Scalar>
std::vector<ClassId> predict(const SampleEmbeddings<Scalar>& emb, const Matrix<Scalar>& class_table,
                             const std::vector<ClassId>& class_ids, EvalOutput variant) {
  if (class_ids.empty() || class_table.rows() == 0) throw ContractError("predict: empty class table");
  return predict_from_distances(class_distances(emb, class_table, variant), class_ids);
}

}  // namespace avca
