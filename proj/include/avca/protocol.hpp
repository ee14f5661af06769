#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "avca/dataio.hpp"
#include "avca/objectives.hpp"
#include "avca/optim.hpp"

namespace avca {

/// Inclusive grid start, start + step, ..., end.
struct CalibrationGrid {
  double start = 0.0;
  double end = 3.0;
  double step = 0.2;

  std::vector<double> values() const;
};

struct TrainConfig {
  int epochs = 50;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  int patience = 3;
  double factor = 0.1;
  std::uint64_t seed = 42;
  CalibrationGrid grid;
  AvcaConfig model;

  void validate() const;
};

// The model config is not written; it lives in its own section.
void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their current values; `model` is read from the "model" key when present.
void from_json(const nlohmann::json& j, TrainConfig& c);

double harmonic_mean(double seen, double unseen);

/// Classes on each side of a GZSL evaluation.
struct ClassSides {
  std::vector<ClassId> seen;
  std::vector<ClassId> unseen;

  std::vector<ClassId> all() const;  // seen then unseen, sorted ascending
};

/// Sides used while validating in stage 1: seen vs. validation-unseen.
ClassSides validation_sides(const data::Manifest& m);
/// Sides used at test time after stage 2: seen plus validation-unseen vs. test-unseen.
ClassSides test_sides(const data::Manifest& m);

/// Adds gamma to every column whose class is on the seen side.
Matrix<float> apply_calibrated_stacking(const Matrix<float>& distances, const std::vector<ClassId>& class_ids,
                                        const std::vector<ClassId>& seen, double gamma);

/// Mean class accuracy split by side, all values in percent.
struct GzslScores {
  std::map<ClassId, double> per_class;
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  std::vector<ClassId> empty_classes;  // listed on a side but without samples
};

GzslScores score_predictions(const std::vector<ClassId>& predictions, const std::vector<ClassId>& labels,
                             const ClassSides& sides);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double learning_rate = 0.0;
  double val_S = 0.0;
  double val_U = 0.0;
  double val_HM = 0.0;
  double gamma = 0.0;
};

struct CalibrationResult {
  double gamma = 0.0;
  double hm = 0.0;
  double S = 0.0;
  double U = 0.0;
  std::vector<EpochRecord> trace;  // per-epoch best (HM, gamma), filled by the stage-1 driver
  int selected_epochs = 1;
};

void to_json(nlohmann::json& j, const CalibrationResult& c);
void from_json(const nlohmann::json& j, CalibrationResult& c);

/// Grid search over precomputed distances; ties keep the smallest gamma.
CalibrationResult search_calibration(const Matrix<float>& distances, const std::vector<ClassId>& labels,
                                     const std::vector<ClassId>& class_ids, const ClassSides& sides,
                                     const std::vector<double>& grid);

/// Validation search on v(S) and v(U) with candidates seen and validation-unseen.
CalibrationResult search_calibration(AvcaParams<float>& params, const data::DatasetBundle& bundle,
                                     const std::vector<double>& grid, EvalOutput variant);

struct EvalReport {
  std::map<ClassId, double> per_class;
  double S = 0.0;
  double U = 0.0;
  double HM = 0.0;
  double ZSL = 0.0;
  double gamma = 0.0;
  EvalOutput variant = EvalOutput::ThetaV;
  bool zsl_only = false;
  std::vector<ClassId> excluded_classes;

  nlohmann::json to_json() const;
  std::string summary() const;
};

/// GZSL on ts(S) u ts(U) with calibration plus ZSL on ts(U) among test-unseen classes.
EvalReport evaluate(AvcaParams<float>& params, const data::DatasetBundle& bundle, double gamma, EvalOutput variant,
                    bool zsl_only = false);

struct TrainResult {
  std::vector<EpochRecord> trace;
};

/// Per-epoch hook; returns the metric the plateau scheduler monitors (higher is better).
using EpochHook = std::function<double(int epoch, double mean_loss, AvcaParams<float>& params, EpochRecord& record)>;

/// Trains `params` on `train` for config.epochs epochs with Adam and the plateau scheduler.
TrainResult train_stage(const data::FeatureSet& train, const data::ClassEmbeddingTable& embeddings,
                        const TrainConfig& config, AvcaParams<float>& params, const EpochHook& hook);

struct TwoStageResult {
  EvalReport report;
  CalibrationResult calibration;
  AvcaParams<float> stage1;
  AvcaParams<float> stage2;
  std::vector<EpochRecord> stage2_trace;
};

/// Stage 1 on tr with validation-driven selection; stage 2 from scratch on tr u v(S) u v(U).
TwoStageResult run_two_stage(const data::DatasetBundle& bundle, const TrainConfig& config);

/// Stage alone: returns trained parameters and the calibration trace.
std::pair<AvcaParams<float>, CalibrationResult> run_stage1(const data::DatasetBundle& bundle, const TrainConfig& config);
std::pair<AvcaParams<float>, std::vector<EpochRecord>> run_stage2(const data::DatasetBundle& bundle,
                                                                  const TrainConfig& config, int epochs);

// ---------------------------------------------------------------------------
// Checkpoints and exports

struct Checkpoint {
  AvcaParams<float> params;
  nlohmann::json meta;  // carries "model" plus whatever the writer added
};

void write_checkpoint(const std::filesystem::path& path, AvcaParams<float>& params, nlohmann::json meta);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// CSV of theta_a/theta_v per sample and theta_w per class present in `subset`.
void export_embeddings(AvcaParams<float>& params, const data::FeatureSet& subset,
                       const data::ClassEmbeddingTable& embeddings, const std::filesystem::path& path);

/// Writes the stage-1 trace as CSV (epoch, loss, val_S, val_U, val_HM, gamma).
void write_trace_csv(const std::vector<EpochRecord>& trace, const std::filesystem::path& path);

}  // namespace avca
