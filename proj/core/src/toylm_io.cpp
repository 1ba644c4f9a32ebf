#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "toylm_internal.hpp"
#include "tracetrust/errors.hpp"
#include "tracetrust/parallel.hpp"

namespace tracetrust::toylm {

namespace {

using json = nlohmann::json;

constexpr const char* kIndexFormat = "toylm-checkpoint-1";

json config_to_json(const ToyLmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},       {"max_seq_len", c.max_seq_len},
          {"seed", c.seed}};
}

ToyLmConfig config_from_json(const json& j) {
  ToyLmConfig c;
  c.vocab_size = j.at("vocab_size").get<std::uint32_t>();
  c.d_model = j.at("d_model").get<std::uint32_t>();
  c.n_layers = j.at("n_layers").get<std::uint32_t>();
  c.n_heads = j.at("n_heads").get<std::uint32_t>();
  c.d_ff = j.at("d_ff").get<std::uint32_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::uint32_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

std::string tensor_file_name(const std::string& name) { return name + ".actv"; }

}  // namespace

void save_checkpoint(const ToyLmCheckpoint& ckpt, const std::filesystem::path& dir) {
  ckpt.validate();
  std::filesystem::create_directories(dir);
  json tensors = json::object();
  for (const auto& [name, tensor] : ckpt.parameters) {
    const std::size_t rows = tensor.shape.size() == 2 ? tensor.shape[0] : 1;
    const std::size_t cols = tensor.shape.back();
    DatasetMeta meta;
    meta.dataset_name = name;
    meta.checkpoint_id = ckpt.id();
    meta.token_position = "parameter";
    meta.label_semantics = "label unused";
    const std::string file = tensor_file_name(name);
    write_actv_file(ActivationDataset(rows, cols, tensor.data, std::vector<std::uint8_t>(rows, 0), std::move(meta)),
                    dir / file);
    tensors[name] = {{"shape", tensor.shape}, {"file", file}};
  }
  const json index = {{"format", kIndexFormat},
                      {"config", config_to_json(ckpt.config)},
                      {"step", ckpt.step},
                      {"tensors", tensors}};
  std::ofstream out(dir / "index.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + (dir / "index.json").string());
}

ToyLmCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw IoError("cannot open checkpoint index " + (dir / "index.json").string());
  std::ostringstream text;
  text << in.rdbuf();

  ToyLmCheckpoint ckpt;
  try {
    const json index = json::parse(text.str());
    if (index.at("format").get<std::string>() != kIndexFormat) {
      throw FormatError("unsupported checkpoint format in " + dir.string());
    }
    ckpt.config = config_from_json(index.at("config"));
    ckpt.step = index.at("step").get<std::uint64_t>();
    for (const auto& [name, entry] : index.at("tensors").items()) {
      Tensor t;
      t.shape = entry.at("shape").get<std::vector<std::size_t>>();
      const ActivationDataset data = read_actv_file(dir / entry.at("file").get<std::string>());
      t.data.assign(data.values().begin(), data.values().end());
      ckpt.parameters.emplace(name, std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint index in " + dir.string() + ": " + e.what());
  }
  ckpt.validate();
  return ckpt;
}

namespace {

std::set<std::size_t> rows_to_skip(const ToyLmConfig& config, const LabeledCorpus& corpus,
                                   std::vector<SkippedRow>& skipped) {
  std::set<std::size_t> skip;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::size_t len = corpus.sentences[i].size();
    if (len == 0) {
      skip.insert(i);
      skipped.push_back({i, "empty sentence"});
    } else if (len > config.max_seq_len) {
      skip.insert(i);
      skipped.push_back({i, "length " + std::to_string(len) + " exceeds max_seq_len " +
                                std::to_string(config.max_seq_len)});
    }
  }
  return skip;
}

LayerCapture capture_rows(const ToyLmCheckpoint& ckpt, const LabeledCorpus& corpus,
                          std::span<const std::uint64_t> layers, const std::string& dataset_name,
                          const std::string& label_semantics, const std::vector<std::size_t>& kept) {
  if (kept.empty()) throw ArgumentError("no sentences left to extract");
  const std::size_t D = ckpt.config.d_model;
  std::vector<CaptureRequest> requests;
  for (const auto l : layers) requests.push_back({l});

  std::vector<std::vector<std::vector<float>>> rows(kept.size());
  parallel_for(kept.size(), [&](std::size_t r) {
    const Sequence tokens = encode_text(corpus.sentences[kept[r]]);
    rows[r] = forward(ckpt, tokens, requests).captures;
  });

  std::vector<std::uint8_t> labels;
  for (const auto i : kept) labels.push_back(corpus.labels[i]);

  LayerCapture out;
  out.kept_rows = kept;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    std::vector<float> values;
    values.reserve(kept.size() * D);
    for (const auto& row : rows) values.insert(values.end(), row[li].begin(), row[li].end());
    DatasetMeta meta;
    meta.dataset_name = dataset_name;
    meta.dimension = corpus.dimension;
    meta.checkpoint_id = ckpt.id();
    meta.layer = layers[li];
    meta.balanced = labels_balanced(labels);
    meta.label_semantics = label_semantics;
    out.per_layer.emplace_back(kept.size(), D, std::move(values), labels, std::move(meta));
  }
  return out;
}

}  // namespace

LayerCapture capture_activations(const ToyLmCheckpoint& ckpt, const LabeledCorpus& corpus,
                                 std::span<const std::uint64_t> layers, const std::string& dataset_name,
                                 const std::string& label_semantics) {
  corpus.validate();
  std::vector<SkippedRow> skipped;
  const auto skip = rows_to_skip(ckpt.config, corpus, skipped);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!skip.contains(i)) kept.push_back(i);
  }
  LayerCapture out = capture_rows(ckpt, corpus, layers, dataset_name, label_semantics, kept);
  out.skipped = std::move(skipped);
  return out;
}

ExtractionResult extract_activations(std::span<const ToyLmCheckpoint> ckpts, const LabeledCorpus& corpus,
                                     std::span<const std::uint64_t> layers, const std::filesystem::path& out_dir,
                                     const std::string& dataset_name, const std::string& label_semantics) {
  corpus.validate();
  if (ckpts.empty()) throw ArgumentError("no checkpoints to extract from");
  if (layers.empty()) throw ArgumentError("no layers requested");

  // The union of per-checkpoint skips keeps every file row-aligned.
  ExtractionResult result;
  std::set<std::size_t> skip;
  for (const auto& ckpt : ckpts) {
    std::vector<SkippedRow> rows;
    for (const auto i : rows_to_skip(ckpt.config, corpus, rows)) skip.insert(i);
    for (auto& r : rows) {
      bool seen = false;
      for (const auto& s : result.skipped) seen = seen || s.index == r.index;
      if (!seen) result.skipped.push_back(std::move(r));
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!skip.contains(i)) kept.push_back(i);
  }

  std::filesystem::create_directories(out_dir);
  for (const auto& ckpt : ckpts) {
    const LayerCapture cap = capture_rows(ckpt, corpus, layers, dataset_name, label_semantics, kept);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto file = out_dir / (ckpt.id() + "_L" + std::to_string(layers[li]) + ".actv");
      write_actv_file(cap.per_layer[li], file);
      ManifestEntry entry;
      entry.key = {ckpt.id(), layers[li]};
      entry.path = file;
      entry.dataset_name = dataset_name;
      entry.dimension = corpus.dimension;
      entry.step = static_cast<std::int64_t>(ckpt.step);
      result.entries.push_back(std::move(entry));
    }
  }
  std::sort(result.entries.begin(), result.entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.key < b.key; });
  result.manifest_path = out_dir / "manifest.json";
  write_manifest_file(result.entries, result.manifest_path);
  return result;
}

}  // namespace tracetrust::toylm
