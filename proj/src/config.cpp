#include "avca/config.hpp"

#include "avca/errors.hpp"

namespace avca {

void AvcaConfig::validate() const {
  const Index dims[] = {k_input, k_w2v, k_f, k_fhidd, k_attnhidd, k_proj, heads};
  for (Index d : dims) {
    if (d <= 0) throw ConfigError("all model dimensions and the head count must be positive");
  }
  if (k_f % heads != 0) {
    throw ConfigError("k_f (" + std::to_string(k_f) + ") must be divisible by heads (" + std::to_string(heads) + ")");
  }
  for (double r : {r_enc, r_proj, r_dec}) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (!(margin >= 0.0)) throw ConfigError("margin must be non-negative");
  if (!loss_mask.any()) throw ConfigError("loss mask enables no term");
  if (active_branches == Branches::AudioOnly && eval_output != EvalOutput::ThetaA) {
    throw ConfigError("audio_only training can only be evaluated with eval_output=theta_a");
  }
  if (active_branches == Branches::VisualOnly && eval_output != EvalOutput::ThetaV) {
    throw ConfigError("visual_only training can only be evaluated with eval_output=theta_v");
  }
}

std::string to_string(Branches b) {
  switch (b) {
    case Branches::Both: return "both";
    case Branches::AudioOnly: return "audio_only";
    case Branches::VisualOnly: return "visual_only";
  }
  return "both";
}

std::string to_string(EvalOutput e) {
  switch (e) {
    case EvalOutput::ThetaV: return "theta_v";
    case EvalOutput::ThetaA: return "theta_a";
    case EvalOutput::Sum: return "sum";
    case EvalOutput::Min: return "min";
  }
  return "theta_v";
}

Branches branches_from_string(const std::string& s) {
  if (s == "both") return Branches::Both;
  if (s == "audio_only") return Branches::AudioOnly;
  if (s == "visual_only") return Branches::VisualOnly;
  throw ConfigError("unknown active_branches value '" + s + "'");
}

EvalOutput eval_output_from_string(const std::string& s) {
  if (s == "theta_v") return EvalOutput::ThetaV;
  if (s == "theta_a") return EvalOutput::ThetaA;
  if (s == "sum") return EvalOutput::Sum;
  if (s == "min") return EvalOutput::Min;
  throw ConfigError("unknown eval_output value '" + s + "'");
}

void to_json(nlohmann::json& j, const LossMask& m) {
  j = {{"l_t", m.triplet}, {"l_rec", m.reconstruction}, {"l_ct", m.composite}, {"l_w", m.word}, {"l_r", m.regularisation}};
}

void from_json(const nlohmann::json& j, LossMask& m) {
  m.triplet = j.value("l_t", m.triplet);
  m.reconstruction = j.value("l_rec", m.reconstruction);
  m.composite = j.value("l_ct", m.composite);
  m.word = j.value("l_w", m.word);
  m.regularisation = j.value("l_r", m.regularisation);
}

void to_json(nlohmann::json& j, const AvcaConfig& c) {
  j = {{"k_input", c.k_input},
       {"k_w2v", c.k_w2v},
       {"k_f", c.k_f},
       {"k_fhidd", c.k_fhidd},
       {"k_attnhidd", c.k_attnhidd},
       {"k_proj", c.k_proj},
       {"heads", c.heads},
       {"margin", c.margin},
       {"r_enc", c.r_enc},
       {"r_proj", c.r_proj},
       {"r_dec", c.r_dec},
       {"use_cross_attention", c.use_cross_attention},
       {"active_branches", to_string(c.active_branches)},
       {"eval_output", to_string(c.eval_output)},
       {"loss_mask", c.loss_mask}};
}

void from_json(const nlohmann::json& j, AvcaConfig& c) {
  try {
    c.k_input = j.value("k_input", c.k_input);
    c.k_w2v = j.value("k_w2v", c.k_w2v);
    c.k_f = j.value("k_f", c.k_f);
    c.k_fhidd = j.value("k_fhidd", c.k_fhidd);
    c.k_attnhidd = j.value("k_attnhidd", c.k_attnhidd);
    c.k_proj = j.value("k_proj", c.k_proj);
    c.heads = j.value("heads", c.heads);
    c.margin = j.value("margin", c.margin);
    c.r_enc = j.value("r_enc", c.r_enc);
    c.r_proj = j.value("r_proj", c.r_proj);
    c.r_dec = j.value("r_dec", c.r_dec);
    c.use_cross_attention = j.value("use_cross_attention", c.use_cross_attention);
    if (j.contains("active_branches")) c.active_branches = branches_from_string(j.at("active_branches").get<std::string>());
    if (j.contains("eval_output")) c.eval_output = eval_output_from_string(j.at("eval_output").get<std::string>());
    if (j.contains("loss_mask")) j.at("loss_mask").get_to(c.loss_mask);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

}  // namespace avca
