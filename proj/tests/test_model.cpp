#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "avca/model.hpp"
#include "oracles.hpp"

using namespace avca;
using oracle::random_matrix;

namespace {

constexpr long long kPaperParamCount = 1693408;

Matrix<float> rand_f(Index r, Index c, std::uint64_t seed) { return random_matrix(r, c, seed).cast<float>(); }

bool same_params(AvcaParams<float>& a, AvcaParams<float>& b) {
  auto pa = a.parameter_list();
  auto pb = b.parameter_list();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i]->data() != pb[i]->data()) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration and parameter count

TEST(ParamCount, PaperConfigMatchesClosedFormTally) {
  const AvcaConfig cfg;
  const long long tally = oracle::closed_form_param_count(512, 300, 300, 512, 64, 64);
  EXPECT_EQ(tally, kPaperParamCount);
  EXPECT_EQ(param_count(cfg), kPaperParamCount);
  EXPECT_GE(kPaperParamCount, 1656000);
  EXPECT_LE(kPaperParamCount, 1724000);
}

TEST(ParamCount, TiedToAllocatedTensors) {
  const AvcaConfig cfg = oracle::tiny_config();
  AvcaParams<float> p(cfg);
  long long n = 0;
  p.for_each_parameter([&](const std::string&, Tensor<float>& t) { n += t.size(); });
  EXPECT_EQ(n, param_count(cfg));
  EXPECT_EQ(param_count(cfg), oracle::closed_form_param_count(8, 5, 6, 7, 4, 4));
}

TEST(ParamCount, MonotoneInWidthAndIndependentOfHeads) {
  AvcaConfig cfg;
  AvcaConfig half = cfg;
  half.k_fhidd = 256;
  EXPECT_LT(param_count(half), param_count(cfg));
  AvcaConfig proj = cfg;
  proj.k_proj = 128;
  EXPECT_GT(param_count(proj), param_count(cfg));
  for (Index h : {1, 2, 5, 6}) {
    AvcaConfig c = cfg;
    c.heads = h;
    EXPECT_EQ(param_count(c), param_count(cfg));
  }
}

TEST(Config, ValidationErrors) {
  AvcaConfig c;
  c.heads = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(init_params<float>(c, 1), ConfigError);
  c = AvcaConfig{};
  c.active_branches = Branches::AudioOnly;
  EXPECT_THROW(c.validate(), ConfigError);  // eval_output defaults to theta_v
  c.eval_output = EvalOutput::ThetaA;
  EXPECT_NO_THROW(c.validate());
  c = AvcaConfig{};
  c.r_enc = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AvcaConfig{};
  c.loss_mask = LossMask{false, false, false, false, false};
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  AvcaConfig c = oracle::tiny_config();
  c.use_cross_attention = false;
  c.eval_output = EvalOutput::Min;
  c.loss_mask = LossMask::composite_only();
  nlohmann::json j = c;
  AvcaConfig back;
  j.get_to(back);
  EXPECT_EQ(nlohmann::json(back), j);
  AvcaConfig partial;
  nlohmann::json{{"k_proj", 32}}.get_to(partial);
  EXPECT_EQ(partial.k_proj, 32);
  EXPECT_EQ(partial.k_f, 300);
}

// ---------------------------------------------------------------------------
// Initialisation

TEST(Init, DeterministicAndSeedSensitive) {
  const AvcaConfig cfg = oracle::tiny_config();
  auto a = init_params<float>(cfg, 5);
  auto b = init_params<float>(cfg, 5);
  auto c = init_params<float>(cfg, 6);
  EXPECT_TRUE(same_params(a, b));
  EXPECT_FALSE(same_params(a, c));
}

TEST(Init, RangesAndConstants) {
  auto p = init_params<float>(AvcaConfig{}, 3);
  p.for_each_parameter([](const std::string& name, Tensor<float>& t) {
    const auto& d = t.data();
    auto ends_with = [&](const char* s) {
      const std::string suf(s);
      return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends_with(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(d.rows()));
      EXPECT_LT(d.cwiseAbs().maxCoeff(), bound) << name;
      EXPECT_GT(d.cwiseAbs().maxCoeff(), 0.5 * bound) << name;
    } else if (ends_with(".bias") || ends_with(".shift")) {
      EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0f) << name;
    } else if (ends_with(".scale")) {
      EXPECT_EQ(d, Matrix<float>::Ones(d.rows(), d.cols())) << name;
    } else {
      ADD_FAILURE() << "unexpected parameter name " << name;
    }
  });
}

TEST(Init, ParameterNamesAreUnique) {
  AvcaParams<float> p(AvcaConfig{});
  std::set<std::string> names;
  p.for_each_parameter([&](const std::string& n, Tensor<float>&) { EXPECT_TRUE(names.insert(n).second) << n; });
  p.for_each_batchnorm([&](const std::string& n, BatchNormState<float>&) { EXPECT_TRUE(names.insert(n).second) << n; });
}

// ---------------------------------------------------------------------------
// Forward pass

TEST(Encoder, ShapeNonNegativityAndBranchIndependence) {
  auto p = init_params<float>(AvcaConfig{}, 1);
  Tape<float> t;
  auto x = t.constant(rand_f(4, 512, 2));
  const ForwardContext ctx{Mode::Eval, {}};
  auto a = encoder_forward(x, p, Modality::Audio, ctx);
  auto v = encoder_forward(x, p, Modality::Visual, ctx);
  EXPECT_EQ(a.rows(), 4);
  EXPECT_EQ(a.cols(), 300);
  EXPECT_GE(a.value().minCoeff(), 0.0f);
  EXPECT_GE(v.value().minCoeff(), 0.0f);
  EXPECT_GT((a.value() - v.value()).cwiseAbs().maxCoeff(), 0.0f);
  EXPECT_THROW(encoder_forward(t.constant(rand_f(4, 511, 2)), p, Modality::Audio, ctx), DimensionError);
}

TEST(CrossAttention, ShapesAndWeightNormalisation) {
  const AvcaConfig cfg = oracle::tiny_config();
  auto p = init_params<float>(cfg, 1);
  Tape<float> t;
  auto out = cross_attention_forward(t.constant(rand_f(5, 6, 1)), t.constant(rand_f(5, 6, 2)), p,
                                     ForwardContext{Mode::Eval, {}});
  EXPECT_EQ(out.audio.rows(), 5);
  EXPECT_EQ(out.audio.cols(), 6);
  EXPECT_EQ(out.visual.rows(), 5);
  EXPECT_EQ(out.visual.cols(), 6);
  const auto& w = out.weights.value();
  EXPECT_EQ(w.rows(), 2 * 5 * cfg.heads);
  EXPECT_EQ(w.cols(), 2);
  for (Index r = 0; r < w.rows(); ++r) EXPECT_NEAR(w.row(r).sum(), 1.0f, 1e-5f);
}

TEST(CrossAttention, BatchPermutationEquivariance) {
  const AvcaConfig cfg = oracle::tiny_config();
  auto p = init_params<float>(cfg, 4);
  const Matrix<float> a = rand_f(4, 6, 1), v = rand_f(4, 6, 2);
  const std::vector<Index> perm{2, 0, 3, 1};
  Matrix<float> ap(4, 6), vp(4, 6);
  for (Index i = 0; i < 4; ++i) {
    ap.row(i) = a.row(perm[static_cast<std::size_t>(i)]);
    vp.row(i) = v.row(perm[static_cast<std::size_t>(i)]);
  }
  Tape<float> t;
  const ForwardContext ctx{Mode::Eval, {}};
  auto base = cross_attention_forward(t.constant(a), t.constant(v), p, ctx);
  auto moved = cross_attention_forward(t.constant(ap), t.constant(vp), p, ctx);
  for (Index i = 0; i < 4; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    EXPECT_LE((moved.audio.value().row(i) - base.audio.value().row(src)).cwiseAbs().maxCoeff(), 1e-6f);
    EXPECT_LE((moved.visual.value().row(i) - base.visual.value().row(src)).cwiseAbs().maxCoeff(), 1e-6f);
  }
}

TEST(Forward, OutputShapes) {
  const AvcaConfig cfg;
  auto p = init_params<float>(cfg, 1);
  Tape<float> t;
  auto out = avca_forward(t.constant(rand_f(3, 512, 1)), t.constant(rand_f(3, 512, 2)), t.constant(rand_f(3, 300, 3)),
                          p, ForwardContext{Mode::Train, StreamKey{1, 1, 0, 0}});
  auto shape = [](Var<float> v) { return std::make_pair(v.rows(), v.cols()); };
  using P = std::pair<Index, Index>;
  for (auto v : {out.phi_a, out.phi_v, out.phi_att_a, out.phi_att_v, out.phi_rec_a, out.phi_rec_v}) {
    EXPECT_EQ(shape(v), (P{3, 300}));
  }
  for (auto v : {out.theta_a, out.theta_v, out.theta_w}) EXPECT_EQ(shape(v), (P{3, 64}));
  for (auto v : {out.rho_a, out.rho_v, out.rho_w}) EXPECT_EQ(shape(v), (P{3, 300}));
  for (auto v : {out.theta_a, out.theta_v, out.theta_w, out.rho_a, out.phi_rec_v}) {
    EXPECT_TRUE(v.value().allFinite());
  }
}

TEST(Forward, SingleBranchSkipsOtherModality) {
  AvcaConfig cfg = oracle::tiny_config();
  cfg.active_branches = Branches::AudioOnly;
  cfg.eval_output = EvalOutput::ThetaA;
  auto p = init_params<float>(cfg, 1);
  Tape<float> t;
  auto out = avca_forward(t.constant(rand_f(3, 8, 1)), t.constant(rand_f(3, 8, 2)), t.constant(rand_f(3, 5, 3)), p,
                          ForwardContext{Mode::Eval, {}});
  EXPECT_TRUE(out.theta_a.valid());
  EXPECT_FALSE(out.theta_v.valid());
  EXPECT_FALSE(out.rho_v.valid());
  EXPECT_FALSE(out.phi_rec_v.valid());
  EXPECT_FALSE(out.attention_weights.valid());
}

TEST(Forward, CrossModalSensitivity) {
  for (bool attention : {true, false}) {
    AvcaConfig cfg = oracle::tiny_config();
    cfg.use_cross_attention = attention;
    auto p = init_params<double>(cfg, 2);
    const Matrix<double> a = random_matrix(4, 8, 1);
    Matrix<double> v = random_matrix(4, 8, 2);
    const auto base = embed_samples(p, a, v).theta_a;
    v(0, 0) += 1e-3;
    v(2, 5) -= 1e-3;
    const double change = (embed_samples(p, a, v).theta_a - base).norm();
    if (attention) {
      EXPECT_GE(change, 1e-8);
    } else {
      EXPECT_EQ(change, 0.0);
    }
  }
}

TEST(Forward, EvalIsDeterministic) {
  auto p = init_params<float>(AvcaConfig{}, 9);
  const Matrix<float> a = rand_f(6, 512, 1), v = rand_f(6, 512, 2);
  const auto e1 = embed_samples(p, a, v);
  const auto e2 = embed_samples(p, a, v);
  EXPECT_EQ(e1.theta_a, e2.theta_a);
  EXPECT_EQ(e1.theta_v, e2.theta_v);
}

TEST(Forward, TrainModeUpdatesRunningStatistics) {
  const AvcaConfig cfg = oracle::tiny_config();
  auto p = init_params<float>(cfg, 1);
  const RowVector<float> before = p.audio_enc.first.bn.running_mean;
  Tape<float> t;
  avca_forward(t.constant(rand_f(4, 8, 1)), t.constant(rand_f(4, 8, 2)), t.constant(rand_f(4, 5, 3)), p,
               ForwardContext{Mode::Train, StreamKey{1, 1, 1, 0}});
  EXPECT_NE(before, p.audio_enc.first.bn.running_mean);
}

// ---------------------------------------------------------------------------
// Gradients of the full objective

// f32 entries are judged against a floor of 1% of the largest gradient; f32 round-off
// dominates entries whose exact value is zero (biases feeding a train-mode batch norm).
TEST(FullModelGradient, Float32MatchesFiniteDifferences) {
  const auto r = oracle::check_full_model<float>(oracle::tiny_config(), 11, 4, 1e-6, 1e-3, 1e-2);
  EXPECT_EQ(r.checked, param_count(oracle::tiny_config()));
  EXPECT_LE(r.max_rel, 1e-3);
}

TEST(FullModelGradient, Float64MatchesFiniteDifferences) {
  const auto r = oracle::check_full_model<double>(oracle::tiny_config(), 11);
  EXPECT_LE(r.max_rel, 1e-4);
}

TEST(FullModelGradient, AblationConfigs) {
  AvcaConfig no_att = oracle::tiny_config();
  no_att.use_cross_attention = false;
  AvcaConfig visual = oracle::tiny_config();
  visual.active_branches = Branches::VisualOnly;
  AvcaConfig composite = oracle::tiny_config();
  composite.loss_mask = LossMask::composite_only();
  for (const auto& cfg : {no_att, visual, composite}) {
    EXPECT_LE(oracle::check_full_model<float>(cfg, 12, 4, 1e-6, 1e-3, 1e-2).max_rel, 1e-3);
    EXPECT_LE(oracle::check_full_model<double>(cfg, 12).max_rel, 1e-4);
  }
}

// ---------------------------------------------------------------------------
// Prediction

TEST(Predict, ExactMatchAndTieRule) {
  SampleEmbeddings<double> e;
  e.theta_v = Matrix<double>(1, 2);
  e.theta_v << 1, 2;
  Matrix<double> table(3, 2);
  table << 0, 0, 1, 2, 5, 5;
  EXPECT_EQ(predict(e, table, {10, 20, 30}, EvalOutput::ThetaV), std::vector<ClassId>{20});

  e.theta_v << 0, 0;
  Matrix<double> eq(2, 2);
  eq << 1, 0, 0, 1;
  EXPECT_EQ(predict(e, eq, {7, 3}, EvalOutput::ThetaV), std::vector<ClassId>{3});
  EXPECT_EQ(predict(e, eq, {3, 7}, EvalOutput::ThetaV), std::vector<ClassId>{3});
  EXPECT_THROW(predict(e, Matrix<double>(0, 2), {}, EvalOutput::ThetaV), ContractError);
}

TEST(Predict, VariantsOnDisagreeingModalities) {
  // theta_a = (0,0), theta_v = (4,0); c0 = (0.2,0), c1 = (4,0.5)
  // distances a: 0.2, sqrt(16.25); v: 3.8, 0.5
  SampleEmbeddings<double> e;
  e.theta_a = Matrix<double>::Zero(1, 2);
  e.theta_v = Matrix<double>(1, 2);
  e.theta_v << 4, 0;
  Matrix<double> table(2, 2);
  table << 0.2, 0, 4, 0.5;
  const std::vector<ClassId> ids{0, 1};
  EXPECT_EQ(predict(e, table, ids, EvalOutput::ThetaA)[0], 0u);
  EXPECT_EQ(predict(e, table, ids, EvalOutput::ThetaV)[0], 1u);
  EXPECT_EQ(predict(e, table, ids, EvalOutput::Sum)[0], 0u);  // 4.0 vs 4.53
  EXPECT_EQ(predict(e, table, ids, EvalOutput::Min)[0], 0u);  // 0.2 vs 0.5
  const auto d = class_distances(e, table, EvalOutput::Sum);
  EXPECT_NEAR(d(0, 0), 4.0, 1e-12);
  EXPECT_NEAR(d(0, 1), std::sqrt(16.25) + 0.5, 1e-12);
}

TEST(Predict, InvariantToShiftAndTableOrder) {
  const Matrix<double> d = random_matrix(20, 6, 3, 0, 5);
  const std::vector<ClassId> ids{4, 9, 1, 7, 2, 5};
  const auto base = predict_from_distances(d, ids);
  EXPECT_EQ(predict_from_distances(Matrix<double>(d.array() + 3.25), ids), base);
  const std::vector<Index> perm{5, 3, 0, 1, 4, 2};
  Matrix<double> dp(d.rows(), d.cols());
  std::vector<ClassId> idp;
  for (std::size_t j = 0; j < perm.size(); ++j) {
    dp.col(static_cast<Index>(j)) = d.col(perm[j]);
    idp.push_back(ids[static_cast<std::size_t>(perm[j])]);
  }
  EXPECT_EQ(predict_from_distances(dp, idp), base);
}

TEST(Predict, MissingBranchForVariantIsConfigError) {
  SampleEmbeddings<double> e;
  e.theta_a = Matrix<double>::Zero(1, 2);
  const Matrix<double> table = Matrix<double>::Zero(2, 2);
  EXPECT_THROW(class_distances(e, table, EvalOutput::ThetaV), ConfigError);
}
