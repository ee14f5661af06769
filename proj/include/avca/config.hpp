#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "avca/tensor.hpp"

namespace avca {

enum class Branches { Both, AudioOnly, VisualOnly };

// Which projected embedding(s) are compared against the class table at test time.
enum class EvalOutput { ThetaV, ThetaA, Sum, Min };

/// Enables individual terms of the training objective.
struct LossMask {
  bool triplet = true;         // l_t
  bool reconstruction = true;  // l_rec
  bool composite = true;       // l_ct
  bool word = true;            // l_w
  bool regularisation = true;  // l_r

  bool any() const { return triplet || reconstruction || composite || word || regularisation; }
  static LossMask composite_only() { return {false, true, true, true, false}; }
  bool operator==(const LossMask&) const = default;
};

struct AvcaConfig {
  Index k_input = 512;
  Index k_w2v = 300;
  Index k_f = 300;
  Index k_fhidd = 512;
  Index k_attnhidd = 64;
  Index k_proj = 64;
  Index heads = 3;
  double margin = 1.0;
  double r_enc = 0.2;
  double r_proj = 0.3;
  double r_dec = 0.5;
  bool use_cross_attention = true;
  Branches active_branches = Branches::Both;
  EvalOutput eval_output = EvalOutput::ThetaV;
  LossMask loss_mask;

  Index head_dim() const { return k_f / heads; }
  bool uses_audio() const { return active_branches != Branches::VisualOnly; }
  bool uses_visual() const { return active_branches != Branches::AudioOnly; }
  bool uses_attention() const { return use_cross_attention && active_branches == Branches::Both; }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
};

std::string to_string(Branches b);
std::string to_string(EvalOutput e);
Branches branches_from_string(const std::string& s);
EvalOutput eval_output_from_string(const std::string& s);

void to_json(nlohmann::json& j, const LossMask& m);
void from_json(const nlohmann::json& j, LossMask& m);
void to_json(nlohmann::json& j, const AvcaConfig& c);
// Missing keys keep their current values, so a partial object overrides defaults.
void from_json(const nlohmann::json& j, AvcaConfig& c);

}  // namespace avca
