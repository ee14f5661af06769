#include "avca/dataio.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "binary_io.hpp"

namespace avca::data {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

std::string class_name(ClassId id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%03u", static_cast<unsigned>(id));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature sets

FeatureRecord FeatureSet::record(Index i) const {
  FeatureRecord r;
  r.sample_id = sample_ids.at(static_cast<std::size_t>(i));
  r.class_id = labels.at(static_cast<std::size_t>(i));
  r.audio.assign(audio.row(i).data(), audio.row(i).data() + audio.cols());
  r.visual.assign(visual.row(i).data(), visual.row(i).data() + visual.cols());
  return r;
}

void FeatureSet::append(const FeatureRecord& r) {
  if (static_cast<Index>(r.audio.size()) != audio.cols() || static_cast<Index>(r.visual.size()) != visual.cols()) {
    throw DimMismatchError("record " + std::to_string(r.sample_id) + " has widths " + std::to_string(r.audio.size()) +
                           "/" + std::to_string(r.visual.size()) + ", set expects " + std::to_string(audio.cols()) +
                           "/" + std::to_string(visual.cols()));
  }
  const Index n = size();
  audio.conservativeResize(n + 1, Eigen::NoChange);
  visual.conservativeResize(n + 1, Eigen::NoChange);
  audio.row(n) = Eigen::Map<const RowVector<float>>(r.audio.data(), audio.cols());
  visual.row(n) = Eigen::Map<const RowVector<float>>(r.visual.data(), visual.cols());
  sample_ids.push_back(r.sample_id);
  labels.push_back(r.class_id);
}

FeatureSet FeatureSet::select(const std::vector<Index>& rows) const {
  FeatureSet out(audio_dim(), visual_dim());
  out.audio.resize(static_cast<Index>(rows.size()), audio_dim());
  out.visual.resize(static_cast<Index>(rows.size()), visual_dim());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index i = rows[k];
    out.audio.row(static_cast<Index>(k)) = audio.row(i);
    out.visual.row(static_cast<Index>(k)) = visual.row(i);
    out.sample_ids.push_back(sample_ids.at(static_cast<std::size_t>(i)));
    out.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  }
  return out;
}

FeatureSet FeatureSet::concat(const std::vector<const FeatureSet*>& parts) {
  if (parts.empty()) return {};
  FeatureSet out(parts.front()->audio_dim(), parts.front()->visual_dim());
  Index total = 0;
  for (const auto* p : parts) {
    if (p->audio_dim() != out.audio_dim() || p->visual_dim() != out.visual_dim()) {
      throw DimMismatchError("cannot concatenate feature sets of different widths");
    }
    total += p->size();
  }
  out.audio.resize(total, out.audio_dim());
  out.visual.resize(total, out.visual_dim());
  Index row = 0;
  for (const auto* p : parts) {
    out.audio.middleRows(row, p->size()) = p->audio;
    out.visual.middleRows(row, p->size()) = p->visual;
    out.sample_ids.insert(out.sample_ids.end(), p->sample_ids.begin(), p->sample_ids.end());
    out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    row += p->size();
  }
  return out;
}

void write_features(const FeatureSet& set, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("AVZF");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(set.size()));
  w.u32(static_cast<std::uint32_t>(set.audio_dim()));
  w.u32(static_cast<std::uint32_t>(set.visual_dim()));
  for (Index i = 0; i < set.size(); ++i) {
    w.u64(set.sample_ids[static_cast<std::size_t>(i)]);
    w.u32(set.labels[static_cast<std::size_t>(i)]);
    for (Index k = 0; k < set.audio_dim(); ++k) w.f32(set.audio(i, k));
    for (Index k = 0; k < set.visual_dim(); ++k) w.f32(set.visual(i, k));
  }
  w.save(path);
}

FeatureSet read_features(const std::filesystem::path& path, std::optional<Index> audio_dim,
                         std::optional<Index> visual_dim) {
  io::ByteReader r(path);
  r.expect_magic("AVZF");
  r.expect_version(kFormatVersion);
  const std::uint32_t count = r.u32();
  const auto adim = static_cast<Index>(r.u32());
  const auto vdim = static_cast<Index>(r.u32());
  if ((audio_dim && *audio_dim != adim) || (visual_dim && *visual_dim != vdim)) {
    throw DimMismatchError(r.where() + ": feature widths " + std::to_string(adim) + "/" + std::to_string(vdim) +
                           " do not match expected " + std::to_string(audio_dim.value_or(adim)) + "/" +
                           std::to_string(visual_dim.value_or(vdim)));
  }
  if (adim <= 0 || vdim <= 0) throw DimMismatchError(r.where() + ": feature widths must be positive");
  FeatureSet set(adim, vdim);
  set.audio.resize(count, adim);
  set.visual.resize(count, vdim);
  set.sample_ids.reserve(count);
  set.labels.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    set.sample_ids.push_back(r.u64());
    set.labels.push_back(r.u32());
    r.f32_block(set.audio.row(i).data(), static_cast<std::size_t>(adim));
    r.f32_block(set.visual.row(i).data(), static_cast<std::size_t>(vdim));
  }
  r.expect_end();
  return set;
}

// ---------------------------------------------------------------------------
// Class embeddings

void ClassEmbeddingTable::build_index() const {
  if (indexed_ids_ == ids) return;
  index_.clear();
  indexed_ids_ = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) index_[ids[i]] = static_cast<Index>(i);
}

bool ClassEmbeddingTable::contains(ClassId id) const {
  build_index();
  return index_.count(id) != 0;
}

Index ClassEmbeddingTable::row_of(ClassId id) const {
  build_index();
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("class " + std::to_string(id) + " has no embedding");
  return it->second;
}

Matrix<float> ClassEmbeddingTable::rows_for(const std::vector<ClassId>& classes) const {
  Matrix<float> out(static_cast<Index>(classes.size()), dim());
  for (std::size_t i = 0; i < classes.size(); ++i) out.row(static_cast<Index>(i)) = vectors.row(row_of(classes[i]));
  return out;
}

void write_embeddings(const ClassEmbeddingTable& table, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("AVZW");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(table.ids.size()));
  w.u32(static_cast<std::uint32_t>(table.dim()));
  for (std::size_t i = 0; i < table.ids.size(); ++i) {
    w.u32(table.ids[i]);
    for (Index k = 0; k < table.dim(); ++k) w.f32(table.vectors(static_cast<Index>(i), k));
  }
  w.save(path);
}

ClassEmbeddingTable read_embeddings(const std::filesystem::path& path, std::optional<Index> dim) {
  io::ByteReader r(path);
  r.expect_magic("AVZW");
  r.expect_version(kFormatVersion);
  const std::uint32_t count = r.u32();
  const auto edim = static_cast<Index>(r.u32());
  if ((dim && *dim != edim) || edim <= 0) {
    throw DimMismatchError(r.where() + ": embedding width " + std::to_string(edim) + " does not match expected " +
                           std::to_string(dim.value_or(edim)));
  }
  ClassEmbeddingTable table;
  table.vectors.resize(count, edim);
  for (std::uint32_t i = 0; i < count; ++i) {
    table.ids.push_back(r.u32());
    r.f32_block(table.vectors.row(i).data(), static_cast<std::size_t>(edim));
  }
  r.expect_end();
  return table;
}

// ---------------------------------------------------------------------------
// Splits

Index larger_side(Index n, double ratio) {
  // The epsilon keeps e.g. 100 * (1 - 0.9) from flooring to 9.
  const auto held = static_cast<Index>(std::floor(static_cast<double>(n) * (1.0 - ratio) + 1e-9));
  return n - held;
}

void SplitSpec::validate(const std::map<SampleId, ClassId>& labels) const {
  auto as_set = [](const std::vector<ClassId>& v) { return std::set<ClassId>(v.begin(), v.end()); };
  const auto seen = as_set(partition.seen);
  const auto val_u = as_set(partition.val_unseen);
  const auto test_u = as_set(partition.test_unseen);
  for (ClassId c : val_u) {
    if (test_u.count(c)) throw ConfigError("class " + std::to_string(c) + " is both val-unseen and test-unseen");
    if (seen.count(c)) throw ConfigError("class " + std::to_string(c) + " is both seen and val-unseen");
  }
  for (ClassId c : test_u) {
    if (seen.count(c)) throw ConfigError("class " + std::to_string(c) + " is both seen and test-unseen");
  }
  for (ClassId c : forced_seen) {
    if (!seen.count(c)) throw ConfigError("forced-seen class " + std::to_string(c) + " is not seen");
  }
  std::set<SampleId> used;
  auto classes_of = [&](const std::vector<SampleId>& ids, const char* name) {
    std::set<ClassId> out;
    for (SampleId s : ids) {
      if (!used.insert(s).second) {
        throw ConfigError("sample " + std::to_string(s) + " appears in two subsets (again in " + name + ")");
      }
      auto it = labels.find(s);
      if (it == labels.end()) throw ConfigError("sample " + std::to_string(s) + " has no label");
      out.insert(it->second);
    }
    return out;
  };
  const auto tr_c = classes_of(tr, "tr");
  const auto vs_c = classes_of(val_seen, "val_seen");
  const auto vu_c = classes_of(val_unseen, "val_unseen");
  const auto ts_c = classes_of(test_seen, "test_seen");
  const auto tu_c = classes_of(test_unseen, "test_unseen");
  if (tr_c != vs_c) throw ConfigError("tr and v(S) do not share the same class set");
  for (ClassId c : tr_c) {
    if (!seen.count(c)) throw ConfigError("tr contains non-seen class " + std::to_string(c));
  }
  for (ClassId c : vu_c) {
    if (!val_u.count(c)) throw ConfigError("v(U) contains class " + std::to_string(c) + " outside val-unseen");
  }
  for (ClassId c : ts_c) {
    if (!seen.count(c) && !val_u.count(c)) {
      throw ConfigError("ts(S) contains class " + std::to_string(c) + " outside seen and val-unseen");
    }
  }
  for (ClassId c : tu_c) {
    if (!test_u.count(c)) throw ConfigError("ts(U) contains class " + std::to_string(c) + " outside test-unseen");
  }
}

SplitSpec build_splits(const std::vector<ClassSamples>& classes, const std::vector<ClassId>& forced_seen,
                       PartitionCounts counts, double ratio, std::uint64_t seed) {
  if (counts.seen < 1 || counts.val_unseen < 1 || counts.test_unseen < 1) {
    throw ConfigError("every class partition needs at least one class");
  }
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("split ratio must lie in (0, 1]");
  if (counts.seen + counts.val_unseen + counts.test_unseen > static_cast<Index>(classes.size())) {
    throw ConfigError("requested " + std::to_string(counts.seen + counts.val_unseen + counts.test_unseen) +
                      " classes but only " + std::to_string(classes.size()) + " are available");
  }
  std::set<ClassId> forced(forced_seen.begin(), forced_seen.end());
  if (static_cast<Index>(forced.size()) > counts.seen) {
    throw ConfigError(std::to_string(forced.size()) + " forced-seen classes exceed the requested seen count " +
                      std::to_string(counts.seen));
  }
  std::map<ClassId, const ClassSamples*> by_id;
  for (const auto& c : classes) by_id[c.id] = &c;
  for (ClassId c : forced) {
    if (!by_id.count(c)) throw ConfigError("forced-seen class " + std::to_string(c) + " is not in the class list");
  }

  std::vector<ClassId> free_ids;
  for (const auto& [id, _] : by_id) {
    if (!forced.count(id)) free_ids.push_back(id);
  }
  auto gen = StreamKey{seed, 0, 0, stream::kShuffle}.engine();
  std::shuffle(free_ids.begin(), free_ids.end(), gen);

  SplitSpec spec;
  spec.forced_seen.assign(forced.begin(), forced.end());
  spec.partition.seen = spec.forced_seen;
  std::size_t next = 0;
  while (static_cast<Index>(spec.partition.seen.size()) < counts.seen) spec.partition.seen.push_back(free_ids[next++]);
  for (Index i = 0; i < counts.val_unseen; ++i) spec.partition.val_unseen.push_back(free_ids[next++]);
  for (Index i = 0; i < counts.test_unseen; ++i) spec.partition.test_unseen.push_back(free_ids[next++]);
  std::sort(spec.partition.seen.begin(), spec.partition.seen.end());
  std::sort(spec.partition.val_unseen.begin(), spec.partition.val_unseen.end());
  std::sort(spec.partition.test_unseen.begin(), spec.partition.test_unseen.end());

  auto shuffled = [&](ClassId c) {
    std::vector<SampleId> s = by_id.at(c)->samples;
    auto g = StreamKey{seed, 1, c, stream::kShuffle}.engine();
    std::shuffle(s.begin(), s.end(), g);
    return s;
  };
  auto split = [&](const std::vector<SampleId>& s, std::vector<SampleId>& big, std::vector<SampleId>& small) {
    const auto keep = static_cast<std::size_t>(larger_side(static_cast<Index>(s.size()), ratio));
    big.insert(big.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(keep));
    small.insert(small.end(), s.begin() + static_cast<std::ptrdiff_t>(keep), s.end());
  };
  for (ClassId c : spec.partition.seen) {
    std::vector<SampleId> trainval;
    split(shuffled(c), trainval, spec.test_seen);
    split(trainval, spec.tr, spec.val_seen);
  }
  for (ClassId c : spec.partition.val_unseen) split(shuffled(c), spec.val_unseen, spec.test_seen);
  for (ClassId c : spec.partition.test_unseen) {
    auto s = shuffled(c);
    spec.test_unseen.insert(spec.test_unseen.end(), s.begin(), s.end());
  }
  for (auto* v : {&spec.tr, &spec.val_seen, &spec.val_unseen, &spec.test_seen, &spec.test_unseen}) {
    std::sort(v->begin(), v->end());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Manifest

void to_json(nlohmann::json& j, const Manifest& m) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& [id, name] : m.classes) classes.push_back({{"id", id}, {"name", name}});
  j = {{"dataset", m.dataset},
       {"classes", classes},
       {"partitions",
        {{"seen", m.partitions.seen}, {"val_unseen", m.partitions.val_unseen}, {"test_unseen", m.partitions.test_unseen}}},
       {"forced_seen", m.forced_seen},
       {"files", m.files}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.dataset = j.at("dataset").get<std::string>();
  m.classes.clear();
  for (const auto& c : j.at("classes")) m.classes.emplace_back(c.at("id").get<ClassId>(), c.at("name").get<std::string>());
  const auto& p = j.at("partitions");
  m.partitions.seen = p.at("seen").get<std::vector<ClassId>>();
  m.partitions.val_unseen = p.at("val_unseen").get<std::vector<ClassId>>();
  m.partitions.test_unseen = p.at("test_unseen").get<std::vector<ClassId>>();
  m.forced_seen = j.at("forced_seen").get<std::vector<ClassId>>();
  m.files = j.at("files").get<std::map<std::string, std::string>>();
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in).get<Manifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + path.string() + ": " + e.what());
  }
}

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << nlohmann::json(m).dump(2) << '\n';
}

std::string subset_key(Subset s) {
  switch (s) {
    case Subset::Train: return "tr";
    case Subset::ValSeen: return "val_seen";
    case Subset::ValUnseen: return "val_unseen";
    case Subset::TestSeen: return "test_seen";
    case Subset::TestUnseen: return "test_unseen";
  }
  return "tr";
}

Subset subset_from_string(const std::string& s) {
  for (Subset k : {Subset::Train, Subset::ValSeen, Subset::ValUnseen, Subset::TestSeen, Subset::TestUnseen}) {
    if (subset_key(k) == s) return k;
  }
  throw ConfigError("unknown subset '" + s + "'");
}

// ---------------------------------------------------------------------------
// Bundles

const FeatureSet& DatasetBundle::subset(Subset s) const {
  switch (s) {
    case Subset::Train: return tr;
    case Subset::ValSeen: return val_seen;
    case Subset::ValUnseen: return val_unseen;
    case Subset::TestSeen: return test_seen;
    case Subset::TestUnseen: return test_unseen;
  }
  return tr;
}

FeatureSet& DatasetBundle::subset(Subset s) { return const_cast<FeatureSet&>(std::as_const(*this).subset(s)); }

void DatasetBundle::check_embeddings() const {
  for (Subset s : {Subset::Train, Subset::ValSeen, Subset::ValUnseen, Subset::TestSeen, Subset::TestUnseen}) {
    for (ClassId c : subset(s).labels) {
      if (!embeddings.contains(c)) {
        throw ConfigError("class " + std::to_string(c) + " in subset " + subset_key(s) + " has no embedding");
      }
    }
  }
  if (!embeddings.vectors.allFinite()) throw ConfigError("class embeddings contain non-finite values");
}

DatasetBundle load_bundle(const std::filesystem::path& manifest_path, std::optional<Index> feature_dim,
                          std::optional<Index> embed_dim) {
  DatasetBundle b;
  b.manifest = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  auto file = [&](const std::string& key) {
    auto it = b.manifest.files.find(key);
    if (it == b.manifest.files.end()) throw FormatError("manifest " + manifest_path.string() + " lacks files." + key);
    return root / it->second;
  };
  for (Subset s : {Subset::Train, Subset::ValSeen, Subset::ValUnseen, Subset::TestSeen, Subset::TestUnseen}) {
    b.subset(s) = read_features(file(subset_key(s)), feature_dim, feature_dim);
  }
  b.embeddings = read_embeddings(file("embeddings"), embed_dim);
  for (const auto& [id, name] : b.manifest.classes) b.embeddings.names[id] = name;
  b.check_embeddings();
  return b;
}

void write_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  Manifest m = bundle.manifest;
  for (Subset s : {Subset::Train, Subset::ValSeen, Subset::ValUnseen, Subset::TestSeen, Subset::TestUnseen}) {
    const std::string key = subset_key(s);
    if (!m.files.count(key)) m.files[key] = key + ".avzf";
    write_features(bundle.subset(s), dir / m.files[key]);
  }
  if (!m.files.count("embeddings")) m.files["embeddings"] = "embeddings.avzw";
  write_embeddings(bundle.embeddings, dir / m.files["embeddings"]);
  write_manifest(m, dir / "manifest.json");
}

// ---------------------------------------------------------------------------
// Synthetic data

void SynthConfig::validate() const {
  if (seen < 1 || val_unseen < 1 || test_unseen < 1) throw ConfigError("class counts must be at least 1");
  if (samples_per_class < 1) throw ConfigError("samples_per_class must be at least 1");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
  if (embed_dim < 1 || feature_dim < 1) throw ConfigError("dimensions must be positive");
  if (latent_dim < 1 || latent_dim > embed_dim) throw ConfigError("latent_dim must lie in [1, embed_dim]");
  if (forced_seen < 0 || forced_seen > seen) throw ConfigError("forced_seen must lie in [0, seen]");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"seen", c.seen},
       {"val_unseen", c.val_unseen},
       {"test_unseen", c.test_unseen},
       {"forced_seen", c.forced_seen},
       {"samples_per_class", c.samples_per_class},
       {"sigma", c.sigma},
       {"embed_dim", c.embed_dim},
       {"latent_dim", c.latent_dim},
       {"feature_dim", c.feature_dim},
       {"projection_seed", c.projection_seed},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  try {
    c.seen = j.value("seen", c.seen);
    c.val_unseen = j.value("val_unseen", c.val_unseen);
    c.test_unseen = j.value("test_unseen", c.test_unseen);
    c.forced_seen = j.value("forced_seen", c.forced_seen);
    c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
    c.sigma = j.value("sigma", c.sigma);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.projection_seed = j.value("projection_seed", c.projection_seed);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
}

namespace {

Matrix<double> gaussian(Index rows, Index cols, std::mt19937_64& gen) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<double> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  constexpr std::uint64_t kBasis = 2001, kPrototype = 2002, kNoise = 2003, kProjA = 2004, kProjV = 2005;
  const Index num_classes = cfg.seen + cfg.val_unseen + cfg.test_unseen;

  // Orthonormal basis of the prototype subspace.
  auto basis_gen = StreamKey{cfg.seed, 0, 0, kBasis}.engine();
  Matrix<double> raw = gaussian(cfg.embed_dim, cfg.latent_dim, basis_gen);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  Eigen::MatrixXd basis = qr.householderQ() * Eigen::MatrixXd::Identity(cfg.embed_dim, cfg.latent_dim);

  SyntheticDataset out;
  auto proj_a = StreamKey{cfg.projection_seed, 0, 0, kProjA}.engine();
  auto proj_v = StreamKey{cfg.projection_seed, 0, 0, kProjV}.engine();
  out.audio_projection = gaussian(cfg.feature_dim, cfg.embed_dim, proj_a);
  out.visual_projection = gaussian(cfg.feature_dim, cfg.embed_dim, proj_v);

  ClassEmbeddingTable& table = out.bundle.embeddings;
  table.vectors.resize(num_classes, cfg.embed_dim);
  Matrix<double> prototypes(num_classes, cfg.embed_dim);
  auto proto_gen = StreamKey{cfg.seed, 0, 0, kPrototype}.engine();
  for (Index c = 0; c < num_classes; ++c) {
    Eigen::VectorXd z = gaussian(cfg.latent_dim, 1, proto_gen);
    Eigen::VectorXd e = basis * z;
    e.normalize();
    prototypes.row(c) = e.transpose();
    table.ids.push_back(static_cast<ClassId>(c));
    table.names[static_cast<ClassId>(c)] = class_name(static_cast<ClassId>(c));
  }
  table.vectors = prototypes.cast<float>();

  // Every sample of every class, before splitting.
  FeatureSet all(cfg.feature_dim, cfg.feature_dim);
  const Index total = num_classes * cfg.samples_per_class;
  all.audio.resize(total, cfg.feature_dim);
  all.visual.resize(total, cfg.feature_dim);
  std::vector<ClassSamples> class_samples;
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Index c = 0; c < num_classes; ++c) {
    auto gen = StreamKey{cfg.seed, 1, static_cast<std::uint64_t>(c), kNoise}.engine();
    Eigen::VectorXd ma = out.audio_projection * prototypes.row(c).transpose();
    Eigen::VectorXd mv = out.visual_projection * prototypes.row(c).transpose();
    ClassSamples cs{static_cast<ClassId>(c), {}};
    for (Index k = 0; k < cfg.samples_per_class; ++k) {
      const Index row = c * cfg.samples_per_class + k;
      for (Index d = 0; d < cfg.feature_dim; ++d) all.audio(row, d) = static_cast<float>(ma(d) + cfg.sigma * noise(gen));
      for (Index d = 0; d < cfg.feature_dim; ++d) all.visual(row, d) = static_cast<float>(mv(d) + cfg.sigma * noise(gen));
      all.sample_ids.push_back(static_cast<SampleId>(row));
      all.labels.push_back(static_cast<ClassId>(c));
      cs.samples.push_back(static_cast<SampleId>(row));
    }
    class_samples.push_back(std::move(cs));
  }

  std::vector<ClassId> forced;
  for (Index c = 0; c < cfg.forced_seen; ++c) forced.push_back(static_cast<ClassId>(c));
  out.split = build_splits(class_samples, forced, {cfg.seen, cfg.val_unseen, cfg.test_unseen}, 0.9, cfg.seed);

  auto pick = [&](const std::vector<SampleId>& ids) {
    std::vector<Index> rows(ids.begin(), ids.end());  // sample id == row
    return all.select(rows);
  };
  DatasetBundle& b = out.bundle;
  b.tr = pick(out.split.tr);
  b.val_seen = pick(out.split.val_seen);
  b.val_unseen = pick(out.split.val_unseen);
  b.test_seen = pick(out.split.test_seen);
  b.test_unseen = pick(out.split.test_unseen);

  b.manifest.dataset = "synthetic";
  for (ClassId id : table.ids) b.manifest.classes.emplace_back(id, table.names[id]);
  b.manifest.partitions = out.split.partition;
  b.manifest.forced_seen = out.split.forced_seen;
  for (Subset s : {Subset::Train, Subset::ValSeen, Subset::ValUnseen, Subset::TestSeen, Subset::TestUnseen}) {
    b.manifest.files[subset_key(s)] = subset_key(s) + ".avzf";
  }
  b.manifest.files["embeddings"] = "embeddings.avzw";
  return out;
}

OracleReport oracle_accuracy(const DatasetBundle& bundle, const Matrix<double>& visual_projection) {
  const Eigen::MatrixXd pinv = Eigen::MatrixXd(visual_projection).completeOrthogonalDecomposition().pseudoInverse();
  const auto& part = bundle.manifest.partitions;
  std::vector<ClassId> seen_and_val = part.seen;
  seen_and_val.insert(seen_and_val.end(), part.val_unseen.begin(), part.val_unseen.end());

  auto score = [&](const FeatureSet& set, const std::vector<ClassId>& candidates) {
    if (set.empty() || candidates.empty()) return 0.0;
    const Eigen::MatrixXd protos = bundle.embeddings.rows_for(candidates).cast<double>();
    const Eigen::MatrixXd recovered = set.visual.cast<double>() * pinv.transpose();  // [N x embed_dim]
    const Eigen::MatrixXd sims = recovered * protos.transpose();
    std::map<ClassId, std::pair<long, long>> tally;  // class -> (correct, total)
    for (Index i = 0; i < set.size(); ++i) {
      Index best = 0;
      sims.row(i).maxCoeff(&best);
      auto& t = tally[set.labels[static_cast<std::size_t>(i)]];
      t.first += candidates[static_cast<std::size_t>(best)] == set.labels[static_cast<std::size_t>(i)] ? 1 : 0;
      t.second += 1;
    }
    double acc = 0.0;
    for (const auto& [_, t] : tally) acc += static_cast<double>(t.first) / static_cast<double>(t.second);
    return acc / static_cast<double>(tally.size());
  };

  OracleReport r;
  r.per_subset["tr"] = score(bundle.tr, part.seen);
  r.per_subset["val_seen"] = score(bundle.val_seen, part.seen);
  r.per_subset["val_unseen"] = score(bundle.val_unseen, part.val_unseen);
  r.per_subset["test_seen"] = score(bundle.test_seen, seen_and_val);
  r.per_subset["test_unseen"] = score(bundle.test_unseen, part.test_unseen);
  r.unseen = r.per_subset["test_unseen"];
  return r;
}

nlohmann::json to_json(const OracleReport& r) {
  return {{"unseen", r.unseen}, {"per_subset", r.per_subset}};
}

}  // namespace avca::data
