#include "commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "tracetrust/actv.hpp"
#include "tracetrust/datasets.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/infotheory.hpp"
#include "tracetrust/probes.hpp"
#include "tracetrust/proxytune.hpp"
#include "tracetrust/steering.hpp"
#include "tracetrust/steering_sweep.hpp"
#include "tracetrust/toylm.hpp"

namespace tracetrust::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFooter = R"(Environment:
  TRACE_TRUST_THREADS  Upper bound on worker threads used inside a command
                       (default: hardware concurrency). Results do not depend
                       on the thread count.

Exit codes: 0 success, 1 partial failure, 2 usage/config/input error.
Every command writes config.json (the fully resolved options) into --out.)";

/// Usage-level failure detected after flag parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_config(const fs::path& out_dir, const json& config) {
  write_text(out_dir / "config.json", config.dump(2) + "\n");
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::is_regular_file(path)) throw UsageError(std::string(what) + " not found: " + path.string());
}

void require_dir(const fs::path& path, const char* what) {
  if (!fs::is_directory(path)) throw UsageError(std::string(what) + " not found: " + path.string());
}

std::vector<toylm::Sequence> encode_lines(const std::vector<std::string>& lines) {
  std::vector<toylm::Sequence> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(toylm::encode_text(l));
  return out;
}

json sequences_json(const std::vector<std::string>& prompts, const std::vector<toylm::Sequence>& outputs) {
  json rows = json::array();
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    rows.push_back({{"prompt", prompts[i]}, {"output", toylm::decode_text(outputs[i])}});
  }
  return rows;
}

std::string generations_tsv(const std::vector<std::string>& prompts, const std::vector<toylm::Sequence>& a,
                            const std::vector<toylm::Sequence>* b, const char* header) {
  std::ostringstream s;
  s << header << '\n';
  auto clean = [](std::string text) {
    std::replace_if(text.begin(), text.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; }, ' ');
    return text;
  };
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    s << clean(prompts[i]) << '\t' << clean(toylm::decode_text(a[i]));
    if (b != nullptr) s << '\t' << clean(toylm::decode_text((*b)[i]));
    s << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------------------
// Options shared by several commands

struct ProbeOpts {
  std::string manifest;
  std::uint64_t seed = 0;
  std::string split = "dev_test";
  double l2 = 1e-3;
  int max_iter = 2000;
  double tol = 1e-6;
  std::string out;
};

struct MiOpts {
  std::string manifest;
  std::uint64_t layer = 0;
  std::uint64_t first_layer = 0;
  std::string sigma_grid = "50:400:50";
  std::size_t window = 3;
  std::string out;
};

struct SteerExtractOpts {
  std::string actv;
  std::string out;
};

struct SteerApplyOpts {
  std::string checkpoint;
  std::string vector;
  std::optional<std::uint64_t> layer;
  double alpha = 1.0;
  std::vector<std::string> prompts;
  std::string prompts_file;
  std::size_t steps = 8;
  std::string out;
};

struct SteerSweepOpts {
  std::string checkpoint;
  std::string vector;
  std::string probe_actv;
  std::optional<std::uint64_t> layer;
  std::vector<double> alphas{0.0, 1.0, 2.0};
  std::string prompts_file;
  std::string ppl_corpus;
  std::size_t steps = 8;
  double ceiling = 1.5;
  std::string out;
};

struct PerturbOpts {
  std::string input;
  double rate = 0.05;
  std::uint64_t seed = 0;
  std::string out;
};

struct ProxyOpts {
  std::string base;
  std::string tuned;
  std::string untuned;
  std::vector<std::string> prompts;
  std::string prompts_file;
  std::size_t steps = 8;
  std::string out;
};

struct TrainOpts {
  std::string corpus;
  std::string init_from;
  std::uint32_t d_model = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t d_ff = 256;
  std::uint32_t max_seq_len = 128;
  std::uint64_t seed = 0;
  std::size_t steps = 500;
  std::size_t every = 50;
  std::string optimizer = "adam";
  double lr = 3e-3;
  double momentum = 0.0;
  std::size_t batch = 16;
  double clip = 1.0;
  std::string out;
};

struct ExtractOpts {
  std::vector<std::string> checkpoints;
  std::vector<std::uint64_t> layers;
  std::string corpus;
  std::string dimension = "other";
  std::string name;
  std::string semantics;
  std::string out;
};

struct PplOpts {
  std::string checkpoint;
  std::string corpus;
  std::string vector;
  std::optional<std::uint64_t> layer;
  double alpha = 0.0;
  std::string out;
};

std::vector<std::string> collect_prompts(const std::vector<std::string>& inline_prompts, const std::string& file) {
  std::vector<std::string> prompts = inline_prompts;
  if (!file.empty()) {
    require_file(file, "prompt file");
    const auto more = read_lines(file);
    prompts.insert(prompts.end(), more.begin(), more.end());
  }
  if (prompts.empty()) throw UsageError("no prompts given (use --prompt or --prompts)");
  return prompts;
}

InterventionSpec load_spec(const std::string& vector_path, std::optional<std::uint64_t> layer, double alpha) {
  InterventionSpec spec;
  spec.vector = load_steering_vector(vector_path);
  spec.layer = layer.value_or(spec.vector.layer);
  spec.alpha = alpha;
  return spec;
}

// ---------------------------------------------------------------------------
// Commands. Each validates its inputs and computes every result before it
// creates the output directory.

int cmd_probe(const ProbeOpts& o, std::ostream& out, std::ostream& err) {
  require_file(o.manifest, "manifest");
  SplitScheme scheme;
  if (o.split == "dev_test") {
    scheme = SplitScheme::dev_test;
  } else if (o.split == "simple") {
    scheme = SplitScheme::simple;
  } else {
    throw UsageError("--split must be dev_test or simple");
  }
  const auto entries = validate_manifest_file(o.manifest);
  ProbeConfig config;
  config.l2_penalty = o.l2;
  config.max_iterations = o.max_iter;
  config.gradient_tolerance = o.tol;
  const auto outcomes = probe_sweep(entries, scheme, config, o.seed);

  std::ostringstream csv;
  write_sweep_csv(outcomes, csv);
  json errors = json::array();
  for (const auto& oc : outcomes) {
    if (oc.ok()) continue;
    errors.push_back({{"checkpoint_id", oc.key.checkpoint_id}, {"layer", oc.key.layer}, {"error", oc.error}});
    err << "probe failed for (" << oc.key.checkpoint_id << ", layer " << oc.key.layer << "): " << oc.error << '\n';
  }

  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "probe_sweep.csv", csv.str());
  if (!errors.empty()) write_text(dir / "probe_errors.json", errors.dump(2) + "\n");
  write_config(dir, {{"command", "probe"},
                     {"manifest", fs::absolute(o.manifest).lexically_normal().string()},
                     {"seed", o.seed},
                     {"split", o.split},
                     {"l2_penalty", o.l2},
                     {"max_iterations", o.max_iter},
                     {"gradient_tolerance", o.tol},
                     {"out", o.out}});
  out << "probed " << (outcomes.size() - errors.size()) << "/" << outcomes.size() << " keys -> "
      << (dir / "probe_sweep.csv").string() << '\n';
  return errors.empty() ? kExitOk : kExitPartial;
}

int cmd_mi(const MiOpts& o, std::ostream& out) {
  require_file(o.manifest, "manifest");
  const auto grid = parse_sigma_grid(o.sigma_grid);
  const auto entries = validate_manifest_file(o.manifest);
  const MiTrace trace = mi_sweep_manifest(entries, o.layer, o.first_layer, grid);
  const PhaseReport report = detect_phases(trace, o.window);

  std::ostringstream csv;
  write_mi_csv(trace, csv);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "mi_trace.csv", csv.str());
  write_text(dir / "phase_report.json", phase_report_json(report, o.layer) + "\n");
  write_config(dir, {{"command", "mi"},
                     {"manifest", fs::absolute(o.manifest).lexically_normal().string()},
                     {"layer", o.layer},
                     {"first_layer", o.first_layer},
                     {"sigma_grid", grid},
                     {"smoothing_window", o.window},
                     {"out", o.out}});
  out << "mi trace over " << trace.points.size() << " checkpoints, peak at step " << report.peak_step << '\n';
  return kExitOk;
}

int cmd_steer_extract(const SteerExtractOpts& o, std::ostream& out) {
  require_file(o.actv, "activation dataset");
  const ActivationDataset data = read_actv_file(o.actv);
  const SteeringVector v = mass_mean_vector(data);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  save_steering_vector(v, dir / "steering_vector");
  write_config(dir, {{"command", "steer extract"},
                     {"actv", fs::absolute(o.actv).lexically_normal().string()},
                     {"layer", v.layer},
                     {"source_checkpoint", v.source_checkpoint},
                     {"out", o.out}});
  out << "steering vector (d=" << v.dimension() << ", +" << v.n_positive << "/-" << v.n_negative << ") -> "
      << (dir / "steering_vector.actv").string() << '\n';
  return kExitOk;
}

int cmd_steer_apply(const SteerApplyOpts& o, std::ostream& out) {
  require_dir(o.checkpoint, "checkpoint directory");
  const auto prompts = collect_prompts(o.prompts, o.prompts_file);
  const auto ckpt = toylm::load_checkpoint(o.checkpoint);
  const InterventionSpec spec = load_spec(o.vector, o.layer, o.alpha);
  const auto encoded = encode_lines(prompts);
  std::vector<toylm::Sequence> baseline;
  std::vector<toylm::Sequence> steered;
  for (const auto& p : encoded) {
    baseline.push_back(toylm::generate(ckpt, p, o.steps));
    steered.push_back(toylm::generate(ckpt, p, o.steps, &spec));
  }
  std::size_t identical = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) identical += baseline[i] == steered[i];

  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "generations.tsv", generations_tsv(prompts, baseline, &steered, "prompt\tbaseline\tsteered"));
  write_config(dir, {{"command", "steer apply"},
                     {"checkpoint", fs::absolute(o.checkpoint).lexically_normal().string()},
                     {"vector", fs::absolute(o.vector).lexically_normal().string()},
                     {"layer", spec.layer},
                     {"alpha", o.alpha},
                     {"prompts", prompts},
                     {"steps", o.steps},
                     {"out", o.out}});
  out << identical << "/" << prompts.size() << " steered generations equal the unsteered baseline\n";
  return kExitOk;
}

int cmd_steer_sweep(const SteerSweepOpts& o, std::ostream& out) {
  require_dir(o.checkpoint, "checkpoint directory");
  require_file(o.probe_actv, "probe dataset");
  require_file(o.ppl_corpus, "perplexity corpus");
  if (o.alphas.empty()) throw UsageError("--alpha-list is empty");
  const auto prompts = collect_prompts({}, o.prompts_file);
  const auto ckpt = toylm::load_checkpoint(o.checkpoint);
  const InterventionSpec spec = load_spec(o.vector, o.layer, 0.0);
  const ProbeModel probe = fit_probe(read_actv_file(o.probe_actv));
  const auto eval = encode_lines(prompts);
  const auto ppl = encode_lines(read_lines(o.ppl_corpus));
  StrengthSweepConfig config;
  config.generation_steps = o.steps;
  config.ppl_ceiling_factor = o.ceiling;
  const StrengthSweep sweep = strength_sweep(ckpt, spec, o.alphas, eval, probe, ppl, config);

  std::ostringstream csv;
  csv << "alpha,mean_probe_score,perplexity,exceeds_ceiling\n";
  for (const auto& r : sweep.rows) {
    csv << fmt6(r.alpha) << ',' << fmt6(r.mean_probe_score) << ',' << fmt6(r.perplexity) << ','
        << (r.exceeds_ceiling ? 1 : 0) << '\n';
  }
  const json summary = {{"baseline_probe_score", sweep.baseline_probe_score},
                        {"baseline_perplexity", sweep.baseline_perplexity},
                        {"ppl_ceiling", sweep.ppl_ceiling},
                        {"rows", sweep.rows.size()}};
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "strength_sweep.csv", csv.str());
  write_text(dir / "strength_summary.json", summary.dump(2) + "\n");
  write_config(dir, {{"command", "steer sweep"},
                     {"checkpoint", fs::absolute(o.checkpoint).lexically_normal().string()},
                     {"vector", fs::absolute(o.vector).lexically_normal().string()},
                     {"probe_actv", fs::absolute(o.probe_actv).lexically_normal().string()},
                     {"layer", spec.layer},
                     {"alphas", o.alphas},
                     {"prompts", prompts.size()},
                     {"ppl_corpus", fs::absolute(o.ppl_corpus).lexically_normal().string()},
                     {"steps", o.steps},
                     {"ppl_ceiling_factor", o.ceiling},
                     {"out", o.out}});
  out << "strength sweep: " << sweep.rows.size() << " rows, baseline perplexity " << fmt6(sweep.baseline_perplexity)
      << '\n';
  return kExitOk;
}

int cmd_perturb(const PerturbOpts& o, std::ostream& out) {
  require_file(o.input, "input TSV");
  const LabeledCorpus in = read_tsv_file(o.input);
  const LabeledCorpus combined = make_case_flip_corpus(in.sentences, o.rate, o.seed);
  std::ostringstream tsv;
  write_tsv(combined, tsv);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "perturbed.tsv", tsv.str());
  write_config(dir, {{"command", "perturb"},
                     {"input", fs::absolute(o.input).lexically_normal().string()},
                     {"rate", o.rate},
                     {"seed", o.seed},
                     {"out", o.out}});
  out << combined.size() << " rows -> " << (dir / "perturbed.tsv").string() << '\n';
  return kExitOk;
}

int cmd_proxy(const ProxyOpts& o, std::ostream& out) {
  require_dir(o.base, "base checkpoint");
  require_dir(o.tuned, "tuned checkpoint");
  require_dir(o.untuned, "untuned checkpoint");
  const auto prompts = collect_prompts(o.prompts, o.prompts_file);
  const auto base = toylm::load_checkpoint(o.base);
  const auto tuned = toylm::load_checkpoint(o.tuned);
  const auto untuned = toylm::load_checkpoint(o.untuned);
  std::vector<toylm::Sequence> outputs;
  for (const auto& p : encode_lines(prompts)) outputs.push_back(proxy_generate(base, tuned, untuned, p, o.steps));

  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "generations.tsv", generations_tsv(prompts, outputs, nullptr, "prompt\toutput"));
  write_config(dir, {{"command", "proxy-generate"},
                     {"base", fs::absolute(o.base).lexically_normal().string()},
                     {"tuned", fs::absolute(o.tuned).lexically_normal().string()},
                     {"untuned", fs::absolute(o.untuned).lexically_normal().string()},
                     {"prompts", prompts},
                     {"steps", o.steps},
                     {"out", o.out}});
  out << prompts.size() << " proxy-tuned generations -> " << (dir / "generations.tsv").string() << '\n';
  return kExitOk;
}

int cmd_train(const TrainOpts& o, std::ostream& out) {
  require_file(o.corpus, "training corpus");
  toylm::ToyLmCheckpoint start;
  if (!o.init_from.empty()) {
    require_dir(o.init_from, "starting checkpoint");
    start = toylm::load_checkpoint(o.init_from);
  } else {
    toylm::ToyLmConfig config;
    config.d_model = o.d_model;
    config.n_layers = o.n_layers;
    config.n_heads = o.n_heads;
    config.d_ff = o.d_ff;
    config.max_seq_len = o.max_seq_len;
    config.seed = o.seed;
    start = toylm::init(config);
  }
  const auto lines = read_lines(o.corpus);
  std::vector<toylm::Sequence> corpus;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto seq = toylm::encode_text(lines[i]);
    if (seq.size() < 2 || seq.size() > start.config.max_seq_len + 1) {
      throw UsageError("corpus line " + std::to_string(i + 1) + " must hold 2.." +
                       std::to_string(start.config.max_seq_len + 1) + " bytes");
    }
    corpus.push_back(std::move(seq));
  }
  toylm::OptimizerConfig opt;
  if (o.optimizer == "adam") {
    opt.kind = toylm::OptimizerConfig::Kind::adam;
  } else if (o.optimizer == "sgd") {
    opt.kind = toylm::OptimizerConfig::Kind::sgd;
  } else {
    throw UsageError("--optimizer must be sgd or adam");
  }
  opt.learning_rate = o.lr;
  opt.momentum = o.momentum;
  opt.batch_size = o.batch;
  opt.clip_norm = o.clip;
  const auto result = toylm::train(start, corpus, o.steps, o.every, opt, o.seed);

  const fs::path dir = o.out;
  fs::create_directories(dir);
  json ids = json::array();
  for (const auto& c : result.checkpoints) {
    toylm::save_checkpoint(c, dir / c.id());
    ids.push_back(c.id());
  }
  std::ostringstream losses;
  losses << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    losses << (start.step + i) << ',' << fmt6(result.losses[i]) << '\n';
  }
  write_text(dir / "losses.csv", losses.str());
  const auto& c = start.config;
  write_config(dir, {{"command", "train"},
                     {"corpus", fs::absolute(o.corpus).lexically_normal().string()},
                     {"init_from", o.init_from},
                     {"model",
                      {{"vocab_size", c.vocab_size},
                       {"d_model", c.d_model},
                       {"n_layers", c.n_layers},
                       {"n_heads", c.n_heads},
                       {"d_ff", c.d_ff},
                       {"max_seq_len", c.max_seq_len},
                       {"seed", c.seed}}},
                     {"steps", o.steps},
                     {"checkpoint_every", o.every},
                     {"optimizer", o.optimizer},
                     {"learning_rate", o.lr},
                     {"momentum", o.momentum},
                     {"batch_size", o.batch},
                     {"clip_norm", o.clip},
                     {"seed", o.seed},
                     {"checkpoints", ids},
                     {"out", o.out}});
  out << result.checkpoints.size() << " checkpoints -> " << dir.string() << '\n';
  return kExitOk;
}

int cmd_extract(const ExtractOpts& o, std::ostream& out, std::ostream& err) {
  require_file(o.corpus, "corpus TSV");
  if (o.checkpoints.empty()) throw UsageError("--checkpoints is empty");
  if (o.layers.empty()) throw UsageError("--layers is empty");
  for (const auto& c : o.checkpoints) require_dir(c, "checkpoint directory");
  const Dimension dimension = parse_dimension(o.dimension);
  const LabeledCorpus corpus = read_tsv_file(o.corpus, dimension);
  std::vector<toylm::ToyLmCheckpoint> ckpts;
  for (const auto& c : o.checkpoints) ckpts.push_back(toylm::load_checkpoint(c));
  const std::string name = o.name.empty() ? fs::path(o.corpus).stem().string() : o.name;

  const auto result = toylm::extract_activations(ckpts, corpus, o.layers, o.out, name, o.semantics);
  for (const auto& s : result.skipped) err << "skipped row " << s.index << ": " << s.reason << '\n';
  json abs_ckpts = json::array();
  for (const auto& c : o.checkpoints) abs_ckpts.push_back(fs::absolute(c).lexically_normal().string());
  write_config(o.out, {{"command", "extract"},
                       {"checkpoints", abs_ckpts},
                       {"layers", o.layers},
                       {"corpus", fs::absolute(o.corpus).lexically_normal().string()},
                       {"dimension", o.dimension},
                       {"dataset_name", name},
                       {"label_semantics", o.semantics},
                       {"skipped_rows", result.skipped.size()},
                       {"out", o.out}});
  out << result.entries.size() << " datasets -> " << result.manifest_path.string() << '\n';
  return kExitOk;
}

int cmd_ppl(const PplOpts& o, std::ostream& out) {
  require_dir(o.checkpoint, "checkpoint directory");
  require_file(o.corpus, "corpus");
  const auto ckpt = toylm::load_checkpoint(o.checkpoint);
  const auto corpus = encode_lines(read_lines(o.corpus));
  std::optional<InterventionSpec> spec;
  if (!o.vector.empty()) spec = load_spec(o.vector, o.layer, o.alpha);
  const double ppl = toylm::perplexity(ckpt, corpus, spec ? &*spec : nullptr);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  write_text(dir / "perplexity.json", json{{"perplexity", ppl}, {"sequences", corpus.size()}}.dump(2) + "\n");
  write_config(dir, {{"command", "ppl"},
                     {"checkpoint", fs::absolute(o.checkpoint).lexically_normal().string()},
                     {"corpus", fs::absolute(o.corpus).lexically_normal().string()},
                     {"vector", o.vector},
                     {"alpha", o.alpha},
                     {"out", o.out}});
  out << "perplexity " << fmt6(ppl) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// JSON config files: {"flag": value} entries become "--flag value" unless the
// flag is already on the command line.

std::vector<std::string> merge_config_file(const std::vector<std::string>& args) {
  std::vector<std::string> merged;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      merged.push_back(args[i]);
    }
  }
  if (config_path.empty()) return merged;

  std::ifstream in(config_path);
  if (!in) throw UsageError("cannot open config file " + config_path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw UsageError("config file must hold a JSON object");
  auto given = [&](const std::string& flag) {
    return std::any_of(merged.begin(), merged.end(),
                       [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
  };
  auto scalar = [](const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  };
  for (const auto& [key, value] : doc.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) merged.push_back(flag);
    } else if (value.is_array()) {
      for (const auto& item : value) {
        merged.push_back(flag);
        merged.push_back(scalar(item));
      }
    } else {
      merged.push_back(flag);
      merged.push_back(scalar(value));
    }
  }
  return merged;
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Trace how trustworthiness concepts become linearly decodable across training checkpoints.",
               "tracetrust"};
  app.footer(kFooter);
  app.require_subcommand(1);
  app.set_config();  // CLI11's INI/TOML loader is replaced by the JSON merge below
  app.allow_windows_style_options(false);

  ProbeOpts probe;
  auto* c_probe = app.add_subcommand("probe", "Linear-probe every (checkpoint, layer) cell of a manifest");
  c_probe->add_option("--manifest", probe.manifest, "Sweep manifest JSON")->required();
  c_probe->add_option("--seed", probe.seed, "Split seed")->capture_default_str();
  c_probe->add_option("--split", probe.split, "dev_test (1:1 then 4:1) or simple (4:1)")->capture_default_str();
  c_probe->add_option("--l2", probe.l2, "L2 penalty")->capture_default_str();
  c_probe->add_option("--max-iter", probe.max_iter, "Gradient-descent iteration cap")->capture_default_str();
  c_probe->add_option("--tol", probe.tol, "Gradient-norm tolerance")->capture_default_str();
  c_probe->add_option("--out", probe.out, "Output directory")->required();

  MiOpts mi;
  auto* c_mi = app.add_subcommand("mi", "HSIC I(T,X) / I(T,Y) trace and fitting/compression phases");
  c_mi->add_option("--manifest", mi.manifest, "Sweep manifest JSON")->required();
  c_mi->add_option("--layer", mi.layer, "Target layer T")->required();
  c_mi->add_option("--first-layer", mi.first_layer, "Layer used as X")->capture_default_str();
  c_mi->add_option("--sigma-grid", mi.sigma_grid, "Kernel width grid lo:hi:step")->capture_default_str();
  c_mi->add_option("--window", mi.window, "Odd smoothing window")->capture_default_str();
  c_mi->add_option("--out", mi.out, "Output directory")->required();

  auto* c_steer = app.add_subcommand("steer", "Steering vectors: extract, apply, sweep");
  c_steer->require_subcommand(1);
  SteerExtractOpts sx;
  auto* c_sx = c_steer->add_subcommand("extract", "Mass-mean vector from a labelled ACTV1 dataset");
  c_sx->add_option("--actv", sx.actv, "Labelled activation dataset (dev split)")->required();
  c_sx->add_option("--out", sx.out, "Output directory")->required();
  SteerApplyOpts sa;
  auto* c_sa = c_steer->add_subcommand("apply", "Greedy generation with and without the intervention");
  c_sa->add_option("--checkpoint", sa.checkpoint, "Toy LM checkpoint directory")->required();
  c_sa->add_option("--vector", sa.vector, "Steering vector (stem, .actv or .json)")->required();
  c_sa->add_option("--layer", sa.layer, "Intervention layer (default: the vector's layer)");
  c_sa->add_option("--alpha", sa.alpha, "Intervention strength")->capture_default_str();
  c_sa->add_option("--prompt", sa.prompts, "Prompt text (repeatable)");
  c_sa->add_option("--prompts", sa.prompts_file, "File with one prompt per line");
  c_sa->add_option("--steps", sa.steps, "Tokens to generate")->capture_default_str();
  c_sa->add_option("--out", sa.out, "Output directory")->required();
  SteerSweepOpts ss;
  auto* c_ss = c_steer->add_subcommand("sweep", "Probe score and perplexity for each alpha");
  c_ss->add_option("--checkpoint", ss.checkpoint, "Toy LM checkpoint directory")->required();
  c_ss->add_option("--vector", ss.vector, "Steering vector (stem, .actv or .json)")->required();
  c_ss->add_option("--probe-actv", ss.probe_actv, "Labelled dataset the scoring probe is fitted on")->required();
  c_ss->add_option("--layer", ss.layer, "Intervention layer (default: the vector's layer)");
  c_ss->add_option("--alpha-list", ss.alphas, "Comma-separated alphas")->delimiter(',')->capture_default_str();
  c_ss->add_option("--prompts", ss.prompts_file, "File with one prompt per line")->required();
  c_ss->add_option("--ppl-corpus", ss.ppl_corpus, "Held-out text, one sequence per line")->required();
  c_ss->add_option("--steps", ss.steps, "Tokens to generate per prompt")->capture_default_str();
  c_ss->add_option("--ceiling", ss.ceiling, "Perplexity ceiling as a multiple of baseline")->capture_default_str();
  c_ss->add_option("--out", ss.out, "Output directory")->required();

  PerturbOpts pt;
  auto* c_pt = app.add_subcommand("perturb", "Original (label 0) + case-flipped copy (label 1) of each sentence");
  c_pt->add_option("--input", pt.input, "Input TSV (sentence<TAB>label)")->required();
  c_pt->add_option("--rate", pt.rate, "Fraction of letters whose case is flipped")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  c_pt->add_option("--seed", pt.seed, "Perturbation seed")->capture_default_str();
  c_pt->add_option("--out", pt.out, "Output directory")->required();

  ProxyOpts px;
  auto* c_px = app.add_subcommand("proxy-generate", "Greedy decoding on base + (tuned - untuned) logits");
  c_px->add_option("--base", px.base, "Base checkpoint directory")->required();
  c_px->add_option("--tuned", px.tuned, "Tuned checkpoint directory")->required();
  c_px->add_option("--untuned", px.untuned, "Untuned checkpoint directory")->required();
  c_px->add_option("--prompt", px.prompts, "Prompt text (repeatable)");
  c_px->add_option("--prompts", px.prompts_file, "File with one prompt per line");
  c_px->add_option("--steps", px.steps, "Tokens to generate")->capture_default_str();
  c_px->add_option("--out", px.out, "Output directory")->required();

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "Train the toy LM and save a checkpoint series");
  c_tr->add_option("--corpus", tr.corpus, "Training text, one sequence per line")->required();
  c_tr->add_option("--init-from", tr.init_from, "Continue from this checkpoint instead of a fresh init");
  c_tr->add_option("--d-model", tr.d_model)->capture_default_str();
  c_tr->add_option("--n-layers", tr.n_layers)->capture_default_str();
  c_tr->add_option("--n-heads", tr.n_heads)->capture_default_str();
  c_tr->add_option("--d-ff", tr.d_ff)->capture_default_str();
  c_tr->add_option("--max-seq-len", tr.max_seq_len)->capture_default_str();
  c_tr->add_option("--seed", tr.seed, "Init and batch-sampling seed")->capture_default_str();
  c_tr->add_option("--steps", tr.steps)->capture_default_str();
  c_tr->add_option("--checkpoint-every", tr.every)->capture_default_str();
  c_tr->add_option("--optimizer", tr.optimizer, "sgd or adam")->capture_default_str();
  c_tr->add_option("--lr", tr.lr)->capture_default_str();
  c_tr->add_option("--momentum", tr.momentum, "SGD momentum")->capture_default_str();
  c_tr->add_option("--batch", tr.batch)->capture_default_str();
  c_tr->add_option("--clip", tr.clip, "Global gradient-norm clip (0 disables)")->capture_default_str();
  c_tr->add_option("--out", tr.out, "Output directory")->required();

  ExtractOpts ex;
  auto* c_ex = app.add_subcommand("extract", "Last-token activations of toy checkpoints as ACTV1 + manifest");
  c_ex->add_option("--checkpoints", ex.checkpoints, "Checkpoint directories")->required()->delimiter(',');
  c_ex->add_option("--layers", ex.layers, "Comma-separated layers")->required()->delimiter(',');
  c_ex->add_option("--corpus", ex.corpus, "Labelled TSV")->required();
  c_ex->add_option("--dimension", ex.dimension, "Trustworthiness dimension label")->capture_default_str();
  c_ex->add_option("--name", ex.name, "Dataset name (default: corpus file stem)");
  c_ex->add_option("--label-semantics", ex.semantics, "Meaning of label 1");
  c_ex->add_option("--out", ex.out, "Output directory")->required();

  PplOpts pp;
  auto* c_pp = app.add_subcommand("ppl", "Perplexity of a checkpoint, optionally under an intervention");
  c_pp->add_option("--checkpoint", pp.checkpoint, "Checkpoint directory")->required();
  c_pp->add_option("--corpus", pp.corpus, "Text, one sequence per line")->required();
  c_pp->add_option("--vector", pp.vector, "Steering vector");
  c_pp->add_option("--layer", pp.layer, "Intervention layer (default: the vector's layer)");
  c_pp->add_option("--alpha", pp.alpha)->capture_default_str();
  c_pp->add_option("--out", pp.out, "Output directory")->required();

  for (auto* sub : {c_probe, c_mi, c_sx, c_sa, c_ss, c_pt, c_px, c_tr, c_ex, c_pp}) {
    sub->add_option("--config", "JSON file of {\"flag\": value} defaults; command-line flags win");
    sub->footer(kFooter);
  }

  std::vector<std::string> args;
  try {
    args = merge_config_file(raw_args);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help is raised from the subcommand, so print its own text.
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) {
        for (auto* inner : sub->get_subcommands()) {
          out << inner->help();
          return kExitOk;
        }
        out << sub->help();
        return kExitOk;
      }
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (c_probe->parsed()) return cmd_probe(probe, out, err);
    if (c_mi->parsed()) return cmd_mi(mi, out);
    if (c_sx->parsed()) return cmd_steer_extract(sx, out);
    if (c_sa->parsed()) return cmd_steer_apply(sa, out);
    if (c_ss->parsed()) return cmd_steer_sweep(ss, out);
    if (c_pt->parsed()) return cmd_perturb(pt, out);
    if (c_px->parsed()) return cmd_proxy(px, out);
    if (c_tr->parsed()) return cmd_train(tr, out);
    if (c_ex->parsed()) return cmd_extract(ex, out, err);
    if (c_pp->parsed()) return cmd_ppl(pp, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  err << "error: no command\n";
  return kExitUsage;
}

}  // namespace tracetrust::cli
