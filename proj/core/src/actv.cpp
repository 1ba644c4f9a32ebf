#include "tracetrust/actv.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tracetrust/errors.hpp"

namespace tracetrust {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMagic = "ACTV";

constexpr std::string_view kDimensionNames[] = {"reliability", "toxicity",   "privacy",
                                                "fairness",    "robustness", "other"};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

struct RawHeader {
  std::uint64_t rows;
  std::uint64_t cols;
  std::uint32_t meta_length;
};

RawHeader parse_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("ACTV1: bad magic");
  }
  if (bytes.size() < kActvHeaderSize) {
    throw TruncationError("ACTV1: header truncated (" + std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kActvVersion) {
    throw FormatError("ACTV1: unsupported version " + std::to_string(version));
  }
  if (bytes[8] != kActvDtypeF32) {
    throw FormatError("ACTV1: unsupported dtype code " + std::to_string(bytes[8]));
  }
  RawHeader h{get_u64(bytes.data() + 9), get_u64(bytes.data() + 17), get_u32(bytes.data() + 25)};
  if (h.rows == 0 || h.cols == 0) {
    throw FormatError("ACTV1: empty shape " + std::to_string(h.rows) + "x" + std::to_string(h.cols));
  }
  return h;
}

// Total file length implied by the header, or nullopt on overflow.
std::optional<std::uint64_t> expected_length(const RawHeader& h) {
  std::uint64_t cells = 0;
  std::uint64_t data = 0;
  std::uint64_t total = 0;
  if (__builtin_mul_overflow(h.rows, h.cols, &cells)) return std::nullopt;
  if (__builtin_mul_overflow(cells, std::uint64_t{4}, &data)) return std::nullopt;
  if (__builtin_add_overflow(std::uint64_t{kActvHeaderSize} + h.meta_length, h.rows, &total)) {
    return std::nullopt;
  }
  if (__builtin_add_overflow(total, data, &total)) return std::nullopt;
  return total;
}

void check_length(const RawHeader& h, std::uint64_t actual) {
  const auto expected = expected_length(h);
  if (!expected) throw FormatError("ACTV1: header sizes overflow");
  if (actual < *expected) {
    throw TruncationError("ACTV1: payload has " + std::to_string(actual) + " bytes, header requires " +
                          std::to_string(*expected));
  }
  if (actual > *expected) {
    throw FormatError("ACTV1: " + std::to_string(actual - *expected) + " trailing bytes after payload");
  }
}

std::vector<std::uint8_t> read_all(std::istream& in) {
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (in.bad()) throw IoError("ACTV1: read failure");
  return bytes;
}

}  // namespace

std::string_view to_string(Dimension dimension) {
  return kDimensionNames[static_cast<std::size_t>(dimension)];
}

Dimension parse_dimension(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kDimensionNames); ++i) {
    if (kDimensionNames[i] == name) return static_cast<Dimension>(i);
  }
  throw ValidationError("unknown dimension label '" + std::string(name) + "'");
}

bool labels_balanced(std::span<const std::uint8_t> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = labels.size() - pos;
  return (pos > neg ? pos - neg : neg - pos) <= 1;
}

ActivationDataset::ActivationDataset(std::size_t rows, std::size_t cols, std::vector<float> values,
                                     std::vector<std::uint8_t> labels, DatasetMeta meta)
    : rows_(rows), cols_(cols), values_(std::move(values)), labels_(std::move(labels)), meta_(std::move(meta)) {
  if (rows_ == 0 || cols_ == 0) throw ValidationError("activation dataset needs n >= 1 and d >= 1");
  if (values_.size() != rows_ * cols_) {
    throw ValidationError("activation matrix has " + std::to_string(values_.size()) + " entries, expected " +
                          std::to_string(rows_ * cols_));
  }
  if (labels_.size() != rows_) {
    throw ValidationError("label count " + std::to_string(labels_.size()) + " != rows " + std::to_string(rows_));
  }
  for (std::size_t i = 0; i < rows_; ++i) {
    if (labels_[i] > 1) {
      throw ValidationError("label at row " + std::to_string(i) + " is " + std::to_string(labels_[i]) +
                            ", expected 0 or 1");
    }
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw ValidationError("non-finite activation at row " + std::to_string(i / cols_) + ", column " +
                            std::to_string(i % cols_));
    }
  }
  if (meta_.balanced && !labels_balanced(labels_)) {
    throw ValidationError("meta.balanced is set but label counts differ by more than one");
  }
}

std::size_t ActivationDataset::count_positive() const {
  return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), 1));
}

ActivationDataset ActivationDataset::subset(std::span<const std::size_t> indices) const {
  std::vector<float> values;
  std::vector<std::uint8_t> labels;
  values.reserve(indices.size() * cols_);
  labels.reserve(indices.size());
  for (const std::size_t i : indices) {
    if (i >= rows_) throw ArgumentError("subset index " + std::to_string(i) + " out of range");
    const auto r = row(i);
    values.insert(values.end(), r.begin(), r.end());
    labels.push_back(labels_[i]);
  }
  DatasetMeta meta = meta_;
  meta.balanced = labels_balanced(labels);
  return ActivationDataset(indices.size(), cols_, std::move(values), std::move(labels), std::move(meta));
}

ActivationDataset ActivationDataset::with_flipped_labels() const {
  std::vector<std::uint8_t> flipped(labels_.size());
  std::transform(labels_.begin(), labels_.end(), flipped.begin(),
                 [](std::uint8_t y) { return static_cast<std::uint8_t>(1 - y); });
  return ActivationDataset(rows_, cols_, values_, std::move(flipped), meta_);
}

bool operator==(const ActivationDataset& a, const ActivationDataset& b) {
  return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.labels_ == b.labels_ && a.meta_ == b.meta_ &&
         std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0;
}

std::string meta_to_json(const DatasetMeta& meta) {
  json doc = json::object();
  for (const auto& [key, text] : meta.extra) doc[key] = json::parse(text);
  doc["dataset_name"] = meta.dataset_name;
  doc["dimension_label"] = std::string(to_string(meta.dimension));
  doc["checkpoint_id"] = meta.checkpoint_id;
  doc["layer"] = meta.layer;
  doc["token_position"] = meta.token_position;
  doc["balanced"] = meta.balanced;
  doc["label_semantics"] = meta.label_semantics;
  return doc.dump();
}

DatasetMeta meta_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("ACTV1: meta is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw FormatError("ACTV1: meta must be a JSON object");
  DatasetMeta meta;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "dataset_name") {
        meta.dataset_name = value.get<std::string>();
      } else if (key == "dimension_label") {
        meta.dimension = parse_dimension(value.get<std::string>());
      } else if (key == "checkpoint_id") {
        meta.checkpoint_id = value.get<std::string>();
      } else if (key == "layer") {
        meta.layer = value.get<std::uint64_t>();
      } else if (key == "token_position") {
        meta.token_position = value.get<std::string>();
      } else if (key == "balanced") {
        meta.balanced = value.get<bool>();
      } else if (key == "label_semantics") {
        meta.label_semantics = value.get<std::string>();
      } else {
        meta.extra[key] = value.dump();
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("ACTV1: malformed meta field: ") + e.what());
  }
  return meta;
}

std::vector<std::uint8_t> encode_actv(const ActivationDataset& dataset) {
  const std::string meta = meta_to_json(dataset.meta());
  if (meta.size() > UINT32_MAX) throw ValidationError("ACTV1: meta JSON too large");

  std::vector<std::uint8_t> out;
  out.reserve(kActvHeaderSize + meta.size() + dataset.rows() + 4 * dataset.values().size());
  out.insert(out.end(), kMagic.begin(), kMagic.end());
  put_u32(out, kActvVersion);
  out.push_back(kActvDtypeF32);
  put_u64(out, dataset.rows());
  put_u64(out, dataset.cols());
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  out.insert(out.end(), dataset.labels().begin(), dataset.labels().end());
  for (const float v : dataset.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

ActivationDataset decode_actv(std::span<const std::uint8_t> bytes) {
  const RawHeader h = parse_header(bytes);
  check_length(h, bytes.size());

  const std::uint8_t* p = bytes.data() + kActvHeaderSize;
  DatasetMeta meta = meta_from_json({reinterpret_cast<const char*>(p), h.meta_length});
  p += h.meta_length;

  std::vector<std::uint8_t> labels(p, p + h.rows);
  p += h.rows;

  std::vector<float> values(h.rows * h.cols);
  for (auto& v : values) {
    v = std::bit_cast<float>(get_u32(p));
    p += 4;
  }
  return ActivationDataset(h.rows, h.cols, std::move(values), std::move(labels), std::move(meta));
}

std::uint64_t write_actv(const ActivationDataset& dataset, std::ostream& sink) {
  const auto bytes = encode_actv(dataset);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) throw IoError("ACTV1: write failure");
  return bytes.size();
}

ActivationDataset read_actv(std::istream& source) { return decode_actv(read_all(source)); }

std::uint64_t write_actv_file(const ActivationDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto n = write_actv(dataset, out);
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
  return n;
}

ActivationDataset read_actv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_actv(in);
}

ActvHeader read_actv_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> head(kActvHeaderSize);
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  const RawHeader h = parse_header(head);

  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat " + path.string());
  check_length(h, size);

  std::string meta(h.meta_length, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (static_cast<std::size_t>(in.gcount()) != meta.size()) throw TruncationError("ACTV1: meta truncated");
  return {h.rows, h.cols, meta_from_json(meta)};
}

// ---------------------------------------------------------------------------

std::vector<ManifestEntry> validate_manifest(std::string_view json_text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const json* list = nullptr;
  if (doc.is_object() && doc.contains("entries")) {
    list = &doc["entries"];
  } else if (doc.is_array()) {
    list = &doc;
  }
  if (list == nullptr || !list->is_array()) throw FormatError("manifest must hold an \"entries\" array");

  std::vector<ManifestEntry> entries;
  std::vector<std::string> problems;
  std::set<SweepKey> seen;

  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& item = (*list)[i];
    const std::string where = "entry " + std::to_string(i);
    ManifestEntry entry;
    try {
      entry.key.checkpoint_id = item.at("checkpoint_id").get<std::string>();
      entry.key.layer = item.at("layer").get<std::uint64_t>();
      entry.path = item.at("path").get<std::string>();
      entry.dataset_name = item.at("dataset_name").get<std::string>();
      entry.dimension = parse_dimension(item.at("dimension_label").get<std::string>());
      if (item.contains("step")) entry.step = item.at("step").get<std::int64_t>();
    } catch (const json::exception& e) {
      problems.push_back(where + ": " + e.what());
      continue;
    } catch (const ValidationError& e) {
      problems.push_back(where + ": " + e.what());
      continue;
    }
    if (entry.path.is_relative()) entry.path = base_dir / entry.path;

    if (!seen.insert(entry.key).second) {
      problems.push_back(where + ": duplicate key (" + entry.key.checkpoint_id + ", layer " +
                         std::to_string(entry.key.layer) + ")");
      continue;
    }
    if (!std::filesystem::exists(entry.path)) {
      problems.push_back(where + ": missing file " + entry.path.string());
      continue;
    }
    try {
      const ActvHeader header = read_actv_header(entry.path);
      const DatasetMeta& m = header.meta;
      if (m.checkpoint_id != entry.key.checkpoint_id || m.layer != entry.key.layer ||
          m.dataset_name != entry.dataset_name || m.dimension != entry.dimension) {
        problems.push_back(where + ": meta mismatch in " + entry.path.string() + " (file has checkpoint '" +
                           m.checkpoint_id + "', layer " + std::to_string(m.layer) + ", dataset '" +
                           m.dataset_name + "', dimension '" + std::string(to_string(m.dimension)) + "')");
        continue;
      }
    } catch (const Error& e) {
      problems.push_back(where + ": " + entry.path.string() + ": " + e.what());
      continue;
    }
    entries.push_back(std::move(entry));
  }

  if (!problems.empty()) {
    std::ostringstream msg;
    msg << "manifest validation failed:";
    for (const auto& p : problems) msg << "\n  " << p;
    throw ValidationError(msg.str());
  }
  std::sort(entries.begin(), entries.end(),
            [](const ManifestEntry& a, const ManifestEntry& b) { return a.key < b.key; });
  return entries;
}

std::vector<ManifestEntry> validate_manifest_file(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return validate_manifest(text.str(), manifest_path.parent_path());
}

std::vector<SweepKey> sweep_keys(std::span<const ManifestEntry> entries) {
  std::vector<SweepKey> keys;
  keys.reserve(entries.size());
  for (const auto& e : entries) keys.push_back(e.key);
  return keys;
}

void write_manifest_file(std::span<const ManifestEntry> entries, const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  json list = json::array();
  for (const auto& e : entries) {
    std::filesystem::path path = e.path;
    if (!base.empty()) {
      const auto rel = path.lexically_relative(base);
      if (!rel.empty() && *rel.begin() != "..") path = rel;
    }
    json item = {{"checkpoint_id", e.key.checkpoint_id},
                 {"layer", e.key.layer},
                 {"path", path.generic_string()},
                 {"dataset_name", e.dataset_name},
                 {"dimension_label", std::string(to_string(e.dimension))}};
    if (e.step) item["step"] = *e.step;
    list.push_back(std::move(item));
  }
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + manifest_path.string() + " for writing");
  out << json{{"entries", list}}.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + manifest_path.string());
}

}  // namespace tracetrust
