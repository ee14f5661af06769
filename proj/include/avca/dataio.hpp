#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "avca/model.hpp"

namespace avca::data {

using SampleId = std::uint64_t;

struct FeatureRecord {
  SampleId sample_id = 0;
  ClassId class_id = 0;
  std::vector<float> audio;
  std::vector<float> visual;
};

/// Column-major view of an .avzf file: row i of each matrix is record i.
struct FeatureSet {
  std::vector<SampleId> sample_ids;
  std::vector<ClassId> labels;
  Matrix<float> audio;
  Matrix<float> visual;

  FeatureSet() = default;
  FeatureSet(Index audio_dim, Index visual_dim) : audio(0, audio_dim), visual(0, visual_dim) {}

  Index size() const { return static_cast<Index>(sample_ids.size()); }
  Index audio_dim() const { return audio.cols(); }
  Index visual_dim() const { return visual.cols(); }
  bool empty() const { return sample_ids.empty(); }

  FeatureRecord record(Index i) const;
  void append(const FeatureRecord& r);
  // Rows listed in `rows`, in that order.
  FeatureSet select(const std::vector<Index>& rows) const;
  static FeatureSet concat(const std::vector<const FeatureSet*>& parts);
};

/// Class id -> 300-d (k_w2v) text embedding, plus display names.
struct ClassEmbeddingTable {
  std::vector<ClassId> ids;  // row order of `vectors`
  Matrix<float> vectors;
  std::map<ClassId, std::string> names;

  Index dim() const { return vectors.cols(); }
  bool contains(ClassId id) const;
  Index row_of(ClassId id) const;
  // Stacked embeddings for `classes`, in the given order.
  Matrix<float> rows_for(const std::vector<ClassId>& classes) const;

 private:
  mutable std::unordered_map<ClassId, Index> index_;
  mutable std::vector<ClassId> indexed_ids_;  // ids the index was built from
  void build_index() const;
};

void write_features(const FeatureSet& set, const std::filesystem::path& path);
/// Reads an .avzf file. When dims are given, a mismatch raises DimMismatchError.
FeatureSet read_features(const std::filesystem::path& path, std::optional<Index> audio_dim = std::nullopt,
                         std::optional<Index> visual_dim = std::nullopt);

void write_embeddings(const ClassEmbeddingTable& table, const std::filesystem::path& path);
ClassEmbeddingTable read_embeddings(const std::filesystem::path& path, std::optional<Index> dim = std::nullopt);

// ---------------------------------------------------------------------------
// Splits

struct ClassPartition {
  std::vector<ClassId> seen;
  std::vector<ClassId> val_unseen;
  std::vector<ClassId> test_unseen;
};

/// Class partition and per-subset sample lists of one GZSL benchmark.
struct SplitSpec {
  ClassPartition partition;
  std::vector<ClassId> forced_seen;
  std::vector<SampleId> tr, val_seen, val_unseen, test_seen, test_unseen;

  /// Throws ConfigError naming the first violated invariant.
  void validate(const std::map<SampleId, ClassId>& labels) const;
};

struct ClassSamples {
  ClassId id = 0;
  std::vector<SampleId> samples;
};

struct PartitionCounts {
  Index seen = 0;
  Index val_unseen = 0;
  Index test_unseen = 0;
};

/// Number of samples kept on the larger side of a `ratio` split; the
/// held-out side gets floor(n * (1 - ratio)).
Index larger_side(Index n, double ratio);

/// Partitions classes (forced-seen classes always seen) and splits samples.
///
/// Seen classes: ratio split into {tr u v(S)} / ts(S), then ratio split into
/// tr / v(S). Validation-unseen classes: ratio split into v(U) / ts(S).
/// Test-unseen classes go entirely to ts(U).
SplitSpec build_splits(const std::vector<ClassSamples>& classes, const std::vector<ClassId>& forced_seen,
                       PartitionCounts counts, double ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Manifest and bundles

struct Manifest {
  std::string dataset;
  std::vector<std::pair<ClassId, std::string>> classes;
  ClassPartition partitions;
  std::vector<ClassId> forced_seen;
  // Keys: tr, val_seen, val_unseen, test_seen, test_unseen, embeddings.
  std::map<std::string, std::string> files;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& m, const std::filesystem::path& path);

enum class Subset { Train, ValSeen, ValUnseen, TestSeen, TestUnseen };
std::string subset_key(Subset s);
Subset subset_from_string(const std::string& s);

/// The five feature subsets, the class-embedding table and the partition.
struct DatasetBundle {
  Manifest manifest;
  FeatureSet tr, val_seen, val_unseen, test_seen, test_unseen;
  ClassEmbeddingTable embeddings;

  const FeatureSet& subset(Subset s) const;
  FeatureSet& subset(Subset s);
  /// Every class id referenced by a subset has an embedding row.
  void check_embeddings() const;
};

DatasetBundle load_bundle(const std::filesystem::path& manifest_path, std::optional<Index> feature_dim = std::nullopt,
                          std::optional<Index> embed_dim = std::nullopt);
/// Writes the five .avzf files, the .avzw table and manifest.json into `dir`.
void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  Index seen = 20;
  Index val_unseen = 10;
  Index test_unseen = 10;
  Index forced_seen = 2;  // first ids that may never become unseen
  Index samples_per_class = 50;
  double sigma = 3.0;
  Index embed_dim = 300;
  // Prototypes lie in a random subspace of this dimension inside R^embed_dim.
  Index latent_dim = 12;
  Index feature_dim = 512;
  std::uint64_t projection_seed = 7;
  std::uint64_t seed = 42;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SyntheticDataset {
  DatasetBundle bundle;
  SplitSpec split;
  Matrix<double> audio_projection;   // [feature_dim x embed_dim]
  Matrix<double> visual_projection;  // [feature_dim x embed_dim]
};

/// Unit prototypes e_c; audio = P_a e_c + sigma n, visual = P_v e_c + sigma n'.
SyntheticDataset generate_synthetic(const SynthConfig& cfg);

/// Nearest-prototype oracle accuracies, as fractions in [0, 1].
struct OracleReport {
  // Mean class accuracy per subset key, each among that subset's candidate classes.
  std::map<std::string, double> per_subset;
  // Over ts(U) with the test-unseen classes as candidates.
  double unseen = 0.0;
};

/// argmax_c cos(P_v^+ v, e_c) with the generator's known visual projection.
OracleReport oracle_accuracy(const DatasetBundle& bundle, const Matrix<double>& visual_projection);

nlohmann::json to_json(const OracleReport& r);

}  // namespace avca::data
