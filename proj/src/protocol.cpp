#include "avca/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace avca {

// ---------------------------------------------------------------------------
// Configuration

std::vector<double> CalibrationGrid::values() const {
  if (!(step > 0.0) || end < start) throw ConfigError("calibration grid needs step > 0 and end >= start");
  const auto n = static_cast<long>(std::floor((end - start) / step + 1e-9));
  std::vector<double> out;
  for (long i = 0; i <= n; ++i) out.push_back(std::round((start + static_cast<double>(i) * step) * 1e9) / 1e9);
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (!(factor > 0.0 && factor <= 1.0)) throw ConfigError("factor must lie in (0, 1]");
  if (grid.values().empty()) throw ConfigError("calibration grid is empty");
  model.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"patience", c.patience},
       {"factor", c.factor},
       {"seed", c.seed},
       {"gamma_grid", {{"start", c.grid.start}, {"end", c.grid.end}, {"step", c.grid.step}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.patience = j.value("patience", c.patience);
    c.factor = j.value("factor", c.factor);
    c.seed = j.value("seed", c.seed);
    if (j.contains("gamma_grid")) {
      const auto& g = j.at("gamma_grid");
      c.grid.start = g.value("start", c.grid.start);
      c.grid.end = g.value("end", c.grid.end);
      c.grid.step = g.value("step", c.grid.step);
    }
    if (j.contains("model")) j.at("model").get_to(c.model);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics

double harmonic_mean(double seen, double unseen) {
  if (seen <= 0.0 || unseen <= 0.0) return 0.0;
  return 2.0 * unseen * seen / (unseen + seen);
}

std::vector<ClassId> ClassSides::all() const {
  std::vector<ClassId> out = seen;
  out.insert(out.end(), unseen.begin(), unseen.end());
  std::sort(out.begin(), out.end());
  return out;
}

ClassSides validation_sides(const data::Manifest& m) { return {m.partitions.seen, m.partitions.val_unseen}; }

ClassSides test_sides(const data::Manifest& m) {
  ClassSides s;
  s.seen = m.partitions.seen;
  s.seen.insert(s.seen.end(), m.partitions.val_unseen.begin(), m.partitions.val_unseen.end());
  std::sort(s.seen.begin(), s.seen.end());
  s.unseen = m.partitions.test_unseen;
  return s;
}

Matrix<float> apply_calibrated_stacking(const Matrix<float>& distances, const std::vector<ClassId>& class_ids,
                                        const std::vector<ClassId>& seen, double gamma) {
  if (gamma < 0.0) throw ParameterError("calibration constant must be non-negative");
  if (distances.cols() != static_cast<Index>(class_ids.size())) {
    throw DimensionError("calibrated stacking: " + std::to_string(class_ids.size()) + " class ids for " +
                         shape_string(distances));
  }
  const std::set<ClassId> seen_set(seen.begin(), seen.end());
  Matrix<float> out = distances;
  const auto g = static_cast<float>(gamma);
  for (std::size_t j = 0; j < class_ids.size(); ++j) {
    if (seen_set.count(class_ids[j])) out.col(static_cast<Index>(j)).array() += g;
  }
  return out;
}

GzslScores score_predictions(const std::vector<ClassId>& predictions, const std::vector<ClassId>& labels,
                             const ClassSides& sides) {
  if (predictions.size() != labels.size()) throw DimensionError("predictions and labels differ in length");
  std::map<ClassId, std::pair<long, long>> tally;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& t = tally[labels[i]];
    t.first += predictions[i] == labels[i] ? 1 : 0;
    t.second += 1;
  }
  GzslScores s;
  auto side_mean = [&](const std::vector<ClassId>& side) {
    double acc = 0.0;
    long n = 0;
    for (ClassId c : side) {
      auto it = tally.find(c);
      if (it == tally.end()) {
        s.empty_classes.push_back(c);
        continue;
      }
      const double a = 100.0 * static_cast<double>(it->second.first) / static_cast<double>(it->second.second);
      s.per_class[c] = a;
      acc += a;
      ++n;
    }
    return n ? acc / static_cast<double>(n) : 0.0;
  };
  s.S = side_mean(sides.seen);
  s.U = side_mean(sides.unseen);
  s.HM = harmonic_mean(s.S, s.U);
  return s;
}

// ---------------------------------------------------------------------------
// Calibration

void to_json(nlohmann::json& j, const CalibrationResult& c) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : c.trace) {
    trace.push_back({{"epoch", r.epoch}, {"loss", r.loss}, {"val_S", r.val_S}, {"val_U", r.val_U},
                     {"val_HM", r.val_HM}, {"gamma", r.gamma}});
  }
  j = {{"gamma", c.gamma}, {"hm", c.hm}, {"S", c.S}, {"U", c.U}, {"selected_epochs", c.selected_epochs},
       {"trace", trace}};
}

void from_json(const nlohmann::json& j, CalibrationResult& c) {
  c.gamma = j.at("gamma").get<double>();
  c.hm = j.value("hm", 0.0);
  c.S = j.value("S", 0.0);
  c.U = j.value("U", 0.0);
  c.selected_epochs = j.value("selected_epochs", 1);
  c.trace.clear();
  if (j.contains("trace")) {
    for (const auto& r : j.at("trace")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<int>();
      e.loss = r.at("loss").get<double>();
      e.val_S = r.at("val_S").get<double>();
      e.val_U = r.at("val_U").get<double>();
      e.val_HM = r.at("val_HM").get<double>();
      e.gamma = r.at("gamma").get<double>();
      c.trace.push_back(e);
    }
  }
}

CalibrationResult search_calibration(const Matrix<float>& distances, const std::vector<ClassId>& labels,
                                     const std::vector<ClassId>& class_ids, const ClassSides& sides,
                                     const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("calibration grid is empty");
  CalibrationResult best;
  bool first = true;
  for (double gamma : grid) {
    const auto preds = predict_from_distances(apply_calibrated_stacking(distances, class_ids, sides.seen, gamma), class_ids);
    const GzslScores s = score_predictions(preds, labels, sides);
    if (first || s.HM > best.hm) {
      best.gamma = gamma;
      best.hm = s.HM;
      best.S = s.S;
      best.U = s.U;
      first = false;
    }
  }
  return best;
}

namespace {

Matrix<float> distances_for(AvcaParams<float>& params, const data::FeatureSet& samples,
                            const data::ClassEmbeddingTable& embeddings, const std::vector<ClassId>& candidates,
                            EvalOutput variant) {
  const Matrix<float> table = embed_classes(params, embeddings.rows_for(candidates));
  const auto emb = embed_samples(params, samples.audio, samples.visual);
  return class_distances(emb, table, variant);
}

}  // namespace

CalibrationResult search_calibration(AvcaParams<float>& params, const data::DatasetBundle& bundle,
                                     const std::vector<double>& grid, EvalOutput variant) {
  if (bundle.val_seen.empty() || bundle.val_unseen.empty()) {
    throw ConfigError("calibration search needs non-empty v(S) and v(U)");
  }
  const ClassSides sides = validation_sides(bundle.manifest);
  const auto candidates = sides.all();
  const auto samples = data::FeatureSet::concat({&bundle.val_seen, &bundle.val_unseen});
  const Matrix<float> d = distances_for(params, samples, bundle.embeddings, candidates, variant);
  return search_calibration(d, samples.labels, candidates, sides, grid);
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [c, a] : per_class) per[std::to_string(c)] = a;
  nlohmann::json j = {{"ZSL", ZSL}, {"gamma", gamma}, {"per_class", per}, {"eval_output", avca::to_string(variant)}};
  if (!zsl_only) {
    j["S"] = S;
    j["U"] = U;
    j["HM"] = HM;
  }
  return j;
}

std::string EvalReport::summary() const {
  char buf[256];
  if (zsl_only) {
    std::snprintf(buf, sizeof buf, "ZSL=%.2f output=%s", ZSL, avca::to_string(variant).c_str());
  } else {
    std::snprintf(buf, sizeof buf, "S=%.2f U=%.2f HM=%.2f ZSL=%.2f gamma=%.1f output=%s", S, U, HM, ZSL, gamma,
                  avca::to_string(variant).c_str());
  }
  return buf;
}

EvalReport evaluate(AvcaParams<float>& params, const data::DatasetBundle& bundle, double gamma, EvalOutput variant,
                    bool zsl_only) {
  const ClassSides sides = test_sides(bundle.manifest);
  EvalReport report;
  report.gamma = gamma;
  report.variant = variant;
  report.zsl_only = zsl_only;

  if (!zsl_only) {
    const auto candidates = sides.all();
    const auto samples = data::FeatureSet::concat({&bundle.test_seen, &bundle.test_unseen});
    const Matrix<float> d = distances_for(params, samples, bundle.embeddings, candidates, variant);
    const auto preds = predict_from_distances(apply_calibrated_stacking(d, candidates, sides.seen, gamma), candidates);
    const GzslScores s = score_predictions(preds, samples.labels, sides);
    report.S = s.S;
    report.U = s.U;
    report.HM = s.HM;
    report.per_class = s.per_class;
    report.excluded_classes = s.empty_classes;
  }

  std::vector<ClassId> unseen = sides.unseen;
  std::sort(unseen.begin(), unseen.end());
  const Matrix<float> d = distances_for(params, bundle.test_unseen, bundle.embeddings, unseen, variant);
  const GzslScores z = score_predictions(predict_from_distances(d, unseen), bundle.test_unseen.labels, {{}, unseen});
  report.ZSL = z.U;
  if (zsl_only) {
    report.per_class = z.per_class;
    report.excluded_classes = z.empty_classes;
  }
  for (ClassId c : report.excluded_classes) {
    std::cerr << "warning: class " << c << " has no test samples and is excluded from the mean\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_stage(const data::FeatureSet& train, const data::ClassEmbeddingTable& embeddings,
                        const TrainConfig& config, AvcaParams<float>& params, const EpochHook& hook) {
  config.validate();
  if (train.empty()) throw ConfigError("training set is empty");
  for (ClassId c : train.labels) {
    if (!embeddings.contains(c)) throw ConfigError("training class " + std::to_string(c) + " has no embedding");
  }
  const AvcaConfig& cfg = params.config;
  if (train.audio_dim() != cfg.k_input || train.visual_dim() != cfg.k_input || embeddings.dim() != cfg.k_w2v) {
    throw DimensionError("training data widths do not match the model configuration");
  }

  AdamState<float> adam;
  adam.learning_rate = config.learning_rate;
  PlateauScheduler scheduler(config.learning_rate, config.patience, config.factor);
  const auto plist = params.parameter_list();
  const Matrix<float> w_all = embeddings.rows_for(train.labels);

  const Index n = train.size();
  std::vector<std::pair<Index, Index>> batches;  // [begin, end) into the permutation
  for (Index b = 0; b < n; b += config.batch_size) batches.emplace_back(b, std::min(n, b + config.batch_size));
  if (batches.size() > 1 && batches.back().second - batches.back().first == 1) {
    // A single trailing row cannot be batch-normalised; fold it into the previous batch.
    batches[batches.size() - 2].second = n;
    batches.pop_back();
  }
  if (batches.size() == 1 && n < 2) throw DegenerateBatchError("training needs at least 2 samples");

  TrainResult result;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), Index{0});
    auto shuffle_gen = StreamKey{config.seed, static_cast<std::uint64_t>(epoch), 0, stream::kShuffle}.engine();
    std::shuffle(perm.begin(), perm.end(), shuffle_gen);

    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto [begin, end] = batches[bi];
      const Index rows = end - begin;
      Matrix<float> a(rows, cfg.k_input), v(rows, cfg.k_input), w(rows, cfg.k_w2v);
      std::vector<ClassId> labels(static_cast<std::size_t>(rows));
      for (Index r = 0; r < rows; ++r) {
        const Index src = perm[static_cast<std::size_t>(begin + r)];
        a.row(r) = train.audio.row(src);
        v.row(r) = train.visual.row(src);
        w.row(r) = w_all.row(src);
        labels[static_cast<std::size_t>(r)] = train.labels[static_cast<std::size_t>(src)];
      }
      const StreamKey key{config.seed, static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(bi), 0};
      Tape<float> tape;
      Var<float> wa = tape.constant(std::move(a));
      Var<float> wv = tape.constant(std::move(v));
      Var<float> ww = tape.constant(std::move(w));
      const ForwardOutputs<float> out = avca_forward(wa, wv, ww, params, ForwardContext{Mode::Train, key});
      auto neg_gen = key.with_layer(stream::kNegatives).engine();
      const TripletBatch triplets = sample_negatives(labels, neg_gen, cfg.margin);
      const LossTerms<float> loss = loss_total(out, ww, triplets, cfg.loss_mask);
      if (!std::isfinite(loss.values.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi));
      }
      params.zero_grad();
      tape.backward(loss.total);
      adam.learning_rate = scheduler.learning_rate;
      adam_step<float>(plist, adam);
      loss_sum += loss.values.total * static_cast<double>(rows);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(n);
    record.learning_rate = scheduler.learning_rate;
    const double metric = hook ? hook(epoch, record.loss, params, record) : -record.loss;
    if (!std::isfinite(metric)) throw NumericError("non-finite scheduler metric at epoch " + std::to_string(epoch));
    scheduler.step(metric);
    result.trace.push_back(record);
  }
  return result;
}

std::pair<AvcaParams<float>, CalibrationResult> run_stage1(const data::DatasetBundle& bundle, const TrainConfig& config) {
  config.validate();
  AvcaParams<float> params = init_params<float>(config.model, config.seed);
  const auto grid = config.grid.values();
  EpochHook hook = [&](int, double, AvcaParams<float>& p, EpochRecord& rec) {
    const CalibrationResult c = search_calibration(p, bundle, grid, config.model.eval_output);
    rec.val_S = c.S;
    rec.val_U = c.U;
    rec.val_HM = c.hm;
    rec.gamma = c.gamma;
    return c.hm;
  };
  TrainResult tr = train_stage(bundle.tr, bundle.embeddings, config, params, hook);

  CalibrationResult result;
  result.trace = tr.trace;
  std::size_t best = 0;
  for (std::size_t i = 1; i < tr.trace.size(); ++i) {
    if (tr.trace[i].val_HM > tr.trace[best].val_HM) best = i;
  }
  result.selected_epochs = tr.trace[best].epoch;
  result.gamma = tr.trace[best].gamma;
  result.hm = tr.trace[best].val_HM;
  result.S = tr.trace[best].val_S;
  result.U = tr.trace[best].val_U;
  return {std::move(params), std::move(result)};
}

std::pair<AvcaParams<float>, std::vector<EpochRecord>> run_stage2(const data::DatasetBundle& bundle,
                                                                  const TrainConfig& config, int epochs) {
  TrainConfig c = config;
  c.epochs = epochs;
  c.validate();
  AvcaParams<float> params = init_params<float>(c.model, c.seed);
  const auto train = data::FeatureSet::concat({&bundle.tr, &bundle.val_seen, &bundle.val_unseen});
  // No unseen validation data remains, so the scheduler follows the training loss.
  TrainResult tr = train_stage(train, bundle.embeddings, c, params, nullptr);
  return {std::move(params), std::move(tr.trace)};
}

TwoStageResult run_two_stage(const data::DatasetBundle& bundle, const TrainConfig& config) {
  TwoStageResult out;
  auto [stage1, calibration] = run_stage1(bundle, config);
  out.stage1 = std::move(stage1);
  out.calibration = std::move(calibration);
  auto [stage2, trace2] = run_stage2(bundle, config, out.calibration.selected_epochs);
  out.stage2 = std::move(stage2);
  out.stage2_trace = std::move(trace2);
  out.report = evaluate(out.stage2, bundle, out.calibration.gamma, config.model.eval_output);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_tensor(io::ByteWriter& w, const std::string& name, const Shape& shape, const float* data, Index size) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (Index d : shape) w.u32(static_cast<std::uint32_t>(d));
  for (Index i = 0; i < size; ++i) w.f32(data[i]);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, AvcaParams<float>& params, nlohmann::json meta) {
  meta["model"] = params.config;
  const std::string json = meta.dump();
  io::ByteWriter w;
  w.magic("AVCK");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(json.size()));
  w.raw(json);
  std::uint32_t count = 0;
  params.for_each_parameter([&](const std::string&, Tensor<float>&) { ++count; });
  params.for_each_batchnorm([&](const std::string&, BatchNormState<float>&) { count += 2; });
  w.u32(count);
  params.for_each_parameter([&](const std::string& name, Tensor<float>& t) {
    put_tensor(w, name, t.shape(), t.data().data(), t.size());
  });
  params.for_each_batchnorm([&](const std::string& name, BatchNormState<float>& b) {
    put_tensor(w, name + ".running_mean", Shape{b.features()}, b.running_mean.data(), b.features());
    put_tensor(w, name + ".running_var", Shape{b.features()}, b.running_var.data(), b.features());
  });
  w.save(path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  io::ByteReader r(path);
  r.expect_magic("AVCK");
  r.expect_version(kCheckpointVersion);
  const std::uint32_t json_len = r.u32();
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(r.str(json_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(r.where() + ": checkpoint config JSON: " + e.what());
  }
  AvcaConfig cfg;
  if (ck.meta.contains("model")) ck.meta.at("model").get_to(cfg);
  cfg.validate();
  ck.params = AvcaParams<float>(cfg);

  struct Slot {
    Shape shape;
    float* data;
    bool filled = false;
  };
  std::map<std::string, Slot> slots;
  ck.params.for_each_parameter([&](const std::string& name, Tensor<float>& t) {
    slots[name] = Slot{t.shape(), t.data().data()};
  });
  ck.params.for_each_batchnorm([&](const std::string& name, BatchNormState<float>& b) {
    slots[name + ".running_mean"] = Slot{Shape{b.features()}, b.running_mean.data()};
    slots[name + ".running_var"] = Slot{Shape{b.features()}, b.running_var.data()};
  });

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint32_t ndim = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<Index>(r.u32()));
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError(r.where() + ": unknown tensor '" + name + "'");
    if (it->second.shape != shape) {
      throw DimensionError(path.string() + ": tensor '" + name + "' has shape " + shape_string(shape) +
                           " but the stored config expects " + shape_string(it->second.shape));
    }
    Index size = 1;
    for (Index d : shape) size *= d;
    r.f32_block(it->second.data, static_cast<std::size_t>(size));
    it->second.filled = true;
  }
  r.expect_end();
  for (const auto& [name, slot] : slots) {
    if (!slot.filled) throw FormatError(path.string() + ": checkpoint lacks tensor '" + name + "'");
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Exports

namespace {

void csv_row(std::ostream& os, const std::string& sample, ClassId cls, const char* kind, const float* v, Index n) {
  os << sample << ',' << cls << ',' << kind;
  char buf[32];
  for (Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v[i]));
    os << buf;
  }
  os << '\n';
}

}  // namespace

void export_embeddings(AvcaParams<float>& params, const data::FeatureSet& subset,
                       const data::ClassEmbeddingTable& embeddings, const std::filesystem::path& path) {
  std::set<ClassId> present(subset.labels.begin(), subset.labels.end());
  const std::vector<ClassId> classes(present.begin(), present.end());
  const auto emb = embed_samples(params, subset.audio, subset.visual);
  const Matrix<float> table = embed_classes(params, embeddings.rows_for(classes));
  const Index k = params.config.k_proj;

  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "sample_id,class_id,kind";
  for (Index i = 0; i < k; ++i) os << ",d" << i;
  os << '\n';
  for (Index i = 0; i < subset.size(); ++i) {
    const std::string sid = std::to_string(subset.sample_ids[static_cast<std::size_t>(i)]);
    const ClassId c = subset.labels[static_cast<std::size_t>(i)];
    if (emb.theta_a.size()) csv_row(os, sid, c, "theta_a", emb.theta_a.row(i).data(), k);
    if (emb.theta_v.size()) csv_row(os, sid, c, "theta_v", emb.theta_v.row(i).data(), k);
  }
  for (std::size_t j = 0; j < classes.size(); ++j) {
    csv_row(os, "", classes[j], "theta_w", table.row(static_cast<Index>(j)).data(), k);
  }
}

void write_trace_csv(const std::vector<EpochRecord>& trace, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << "epoch,loss,val_S,val_U,val_HM,gamma\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f,%.6f,%.6f,%.1f\n", r.epoch, r.loss, r.val_S, r.val_U, r.val_HM,
                  r.gamma);
    os << buf;
  }
}

}  // namespace avca
