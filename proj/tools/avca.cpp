// avca: synthetic data generation, two-stage training, evaluation and exports.
#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "avca/protocol.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

// Sections "model", "train", "synth"; all optional.
struct RunConfig {
  json raw = json::object();
  avca::TrainConfig train;
  avca::data::SynthConfig synth;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("AVCA_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("AVCA_SEED is not an unsigned integer: ") + s);
  }
}

// flag > config section > AVCA_SEED > 42
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& section) {
  if (flag) return *flag;
  if (section.is_object() && section.contains("seed")) return section.at("seed").get<std::uint64_t>();
  if (auto e = env_seed()) return *e;
  return 42;
}

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (!path.empty()) rc.raw = read_json_file(path);
  if (!rc.raw.is_object()) throw UsageError("config must be a JSON object");
  for (const auto& [key, _] : rc.raw.items()) {
    if (key != "model" && key != "train" && key != "synth") throw UsageError("unknown config section '" + key + "'");
  }
  const json train = rc.raw.value("train", json::object());
  train.get_to(rc.train);
  if (rc.raw.contains("model")) rc.raw.at("model").get_to(rc.train.model);
  rc.raw.value("synth", json::object()).get_to(rc.synth);
  return rc;
}

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::is_regular_file(path)) throw DataError(std::string(what) + " not found: " + path);
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  if (fs::exists(dir) && !fs::is_directory(dir)) throw DataError(dir + " exists and is not a directory");
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
  const fs::path probe = fs::path(dir) / ".avca_write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw DataError(dir + " is not writable");
  }
  fs::remove(probe, ec);
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

int cmd_gen_synth(const std::string& config_path, const std::string& out, const std::optional<std::uint64_t>& seed) {
  RunConfig rc = load_config(config_path);
  rc.synth.seed = resolve_seed(seed, rc.raw.value("synth", json::object()));
  rc.synth.validate();
  prepare_out_dir(out);
  const auto ds = avca::data::generate_synthetic(rc.synth);
  avca::data::write_bundle(ds.bundle, out);
  const auto oracle = avca::data::oracle_accuracy(ds.bundle, ds.visual_projection);
  json oj = avca::data::to_json(oracle);
  oj["synth"] = rc.synth;
  write_json_file(fs::path(out) / "oracle.json", oj);
  std::cerr << "wrote " << out << "/manifest.json (oracle unseen accuracy " << oracle.unseen << ")\n";
  return kOk;
}

json train_meta(const avca::TrainConfig& cfg, int stage, const avca::CalibrationResult& cal) {
  json t = cfg;
  return {{"stage", stage}, {"train", t}, {"calibration", cal}};
}

int cmd_train(const std::string& manifest, const std::string& config_path, const std::string& out,
              const std::string& stage, const std::optional<std::uint64_t>& seed, std::optional<int> epochs) {
  RunConfig rc = load_config(config_path);
  rc.train.seed = resolve_seed(seed, rc.raw.value("train", json::object()));
  if (epochs) rc.train.epochs = *epochs;
  rc.train.validate();
  require_file(manifest, "manifest");
  const fs::path dir(out);
  const fs::path stage1_path = dir / "stage1.avck";
  if (stage == "2") require_file(stage1_path.string(), "stage-1 checkpoint");
  const auto bundle = avca::data::load_bundle(manifest, rc.train.model.k_input, rc.train.model.k_w2v);
  prepare_out_dir(out);

  avca::CalibrationResult cal;
  if (stage == "1" || stage == "both") {
    auto [params, c] = avca::run_stage1(bundle, rc.train);
    cal = std::move(c);
    avca::write_checkpoint(stage1_path, params, train_meta(rc.train, 1, cal));
    avca::write_trace_csv(cal.trace, dir / "stage1_trace.csv");
    std::cerr << "stage 1: selected epoch " << cal.selected_epochs << ", gamma " << cal.gamma << ", val HM " << cal.hm
              << '\n';
  } else {
    const auto ck = avca::read_checkpoint(stage1_path);
    if (!ck.meta.contains("calibration")) throw DataError(stage1_path.string() + " carries no calibration result");
    ck.meta.at("calibration").get_to(cal);
  }
  if (stage == "2" || stage == "both") {
    auto [params, trace] = avca::run_stage2(bundle, rc.train, cal.selected_epochs);
    json meta = train_meta(rc.train, 2, cal);
    meta["stage2_epochs"] = cal.selected_epochs;
    avca::write_checkpoint(dir / "stage2.avck", params, meta);
    const auto report = avca::evaluate(params, bundle, cal.gamma, rc.train.model.eval_output);
    write_json_file(dir / "report.json", report.to_json());
    std::cerr << report.summary() << '\n';
  }
  return kOk;
}

int cmd_evaluate(const std::string& manifest, const std::string& checkpoint, std::optional<double> gamma,
                 const std::string& output, bool zsl_only) {
  if (gamma && *gamma < 0.0) throw UsageError("--gamma must be non-negative");
  std::optional<avca::EvalOutput> variant;
  if (!output.empty()) {
    try {
      variant = avca::eval_output_from_string(output);
    } catch (const avca::ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  require_file(manifest, "manifest");
  require_file(checkpoint, "checkpoint");
  auto ck = avca::read_checkpoint(checkpoint);
  const auto bundle = avca::data::load_bundle(manifest);
  const auto& cfg = ck.params.config;
  if (bundle.tr.audio_dim() != cfg.k_input || bundle.embeddings.dim() != cfg.k_w2v) {
    throw avca::DimensionError("checkpoint expects " + std::to_string(cfg.k_input) + "-d features and " +
                               std::to_string(cfg.k_w2v) + "-d class embeddings, bundle has " +
                               std::to_string(bundle.tr.audio_dim()) + " and " +
                               std::to_string(bundle.embeddings.dim()));
  }
  double g = 0.0;
  if (gamma) {
    g = *gamma;
  } else if (ck.meta.contains("calibration")) {
    g = ck.meta.at("calibration").at("gamma").get<double>();
  } else {
    std::cerr << "warning: checkpoint has no calibration result, using gamma 0\n";
  }
  avca::AvcaConfig check = cfg;
  check.eval_output = variant.value_or(cfg.eval_output);
  try {
    check.validate();
  } catch (const avca::ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto report = avca::evaluate(ck.params, bundle, g, check.eval_output, zsl_only);
  std::cout << report.to_json().dump(2) << '\n';
  std::cerr << report.summary() << '\n';
  return kOk;
}

int cmd_param_count(const std::string& config_path) {
  RunConfig rc = load_config(config_path);
  rc.train.model.validate();
  std::cout << avca::param_count(rc.train.model) << '\n';
  return kOk;
}

int cmd_export(const std::string& manifest, const std::string& checkpoint, const std::string& subset,
               const std::string& out) {
  avca::data::Subset s;
  try {
    s = avca::data::subset_from_string(subset);
  } catch (const avca::ConfigError& e) {
    throw UsageError(e.what());
  }
  require_file(manifest, "manifest");
  require_file(checkpoint, "checkpoint");
  auto ck = avca::read_checkpoint(checkpoint);
  const auto bundle = avca::data::load_bundle(manifest, ck.params.config.k_input, ck.params.config.k_w2v);
  avca::export_embeddings(ck.params, bundle.subset(s), bundle.embeddings, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio-visual generalised zero-shot learning (AVCA)"};
  app.require_subcommand(1);

  std::string config, out, manifest, checkpoint, stage = "both", output, subset;
  std::optional<std::uint64_t> seed;
  std::optional<double> gamma;
  std::optional<int> epochs;
  bool zsl_only = false;

  auto* gen = app.add_subcommand("gen-synth", "Generate the synthetic benchmark bundle");
  gen->add_option("--config", config, "JSON config; the \"synth\" section is used");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed (overrides config and AVCA_SEED)");

  auto* train = app.add_subcommand("train", "Run the two-stage training protocol");
  train->add_option("--manifest", manifest, "Bundle manifest.json")->required();
  train->add_option("--config", config, "JSON config with \"model\" and \"train\" sections");
  train->add_option("--out", out, "Output directory for checkpoints and traces")->required();
  train->add_option("--stage", stage, "1, 2 or both (2 reads <out>/stage1.avck)")
      ->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--seed", seed, "Training seed (overrides config and AVCA_SEED)");
  train->add_option("--epochs", epochs, "Stage-1 epochs (overrides config)")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on ts(S) and ts(U); JSON to stdout");
  eval->add_option("--manifest", manifest, "Bundle manifest.json")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint .avck")->required();
  eval->add_option("--gamma", gamma, "Calibration constant (default: from checkpoint)");
  eval->add_option("--output", output, "theta_v, theta_a, sum or min (default: checkpoint config)");
  eval->add_flag("--zsl-only", zsl_only, "Report ZSL only");

  auto* pc = app.add_subcommand("param-count", "Print the trainable parameter count");
  pc->add_option("--config", config, "JSON config; the \"model\" section is used");

  auto* ex = app.add_subcommand("export-embeddings", "Write theta_a/theta_v/theta_w as CSV");
  ex->add_option("--manifest", manifest, "Bundle manifest.json")->required();
  ex->add_option("--checkpoint", checkpoint, "Checkpoint .avck")->required();
  ex->add_option("--subset", subset, "tr, val_seen, val_unseen, test_seen or test_unseen")->required();
  ex->add_option("--out", out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen_synth(config, out, seed);
    if (*train) return cmd_train(manifest, config, out, stage, seed, epochs);
    if (*eval) return cmd_evaluate(manifest, checkpoint, gamma, output, zsl_only);
    if (*pc) return cmd_param_count(config);
    if (*ex) return cmd_export(manifest, checkpoint, subset, out);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const avca::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const avca::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const avca::FormatError& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kData;
  } catch (const avca::DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << '\n';
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
