#pragma once

// ACTV1 activation-dataset container and checkpoint x layer sweep manifests.
//
// ACTV1 layout (all integers little-endian):
//
//   offset  size  field
//   0       4     magic "ACTV"
//   4       4     format version, u32 = 1
//   8       1     dtype code, u8 = 1 (f32)
//   9       8     n (rows), u64
//   17      8     d (columns), u64
//   25      4     meta length in bytes, u32
//   29      m     meta JSON (UTF-8)
//   29+m    n     labels, one byte per row, each 0 or 1
//   29+m+n  4nd   activations, row-major f32
//
// A file is valid only if its length is exactly 29 + m + n + 4nd.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tracetrust {

inline constexpr std::uint32_t kActvVersion = 1;
inline constexpr std::uint8_t kActvDtypeF32 = 1;
inline constexpr std::size_t kActvHeaderSize = 29;
inline constexpr std::string_view kLastToken = "last_token";

enum class Dimension { reliability, toxicity, privacy, fairness, robustness, other };

std::string_view to_string(Dimension dimension);
/// Throws ValidationError for names outside the fixed set.
Dimension parse_dimension(std::string_view name);

struct DatasetMeta {
  std::string dataset_name;
  Dimension dimension = Dimension::other;
  std::string checkpoint_id;
  std::uint64_t layer = 0;
  std::string token_position{kLastToken};
  bool balanced = false;
  std::string label_semantics;
  /// Unrecognised meta keys, kept as their compact JSON text so foreign
  /// producers round-trip unchanged.
  std::map<std::string, std::string> extra;

  bool operator==(const DatasetMeta&) const = default;
};

/// Immutable n x d matrix of last-token activations with binary labels.
class ActivationDataset {
 public:
  /// Validates shape, finiteness, label range and the balanced flag; throws
  /// ValidationError on any violation.
  ActivationDataset(std::size_t rows, std::size_t cols, std::vector<float> values,
                    std::vector<std::uint8_t> labels, DatasetMeta meta);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t label(std::size_t i) const { return labels_[i]; }
  const DatasetMeta& meta() const { return meta_; }

  std::size_t count_positive() const;
  std::size_t count_negative() const { return rows_ - count_positive(); }

  /// Rows at the given indices, in the given order. Meta is copied with
  /// `balanced` recomputed from the selected labels.
  ActivationDataset subset(std::span<const std::size_t> indices) const;

  /// Same activations and meta with every label flipped.
  ActivationDataset with_flipped_labels() const;

  /// Bitwise equality: raw float bytes, labels and meta.
  friend bool operator==(const ActivationDataset& a, const ActivationDataset& b);

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<float> values_;
  std::vector<std::uint8_t> labels_;
  DatasetMeta meta_;
};

/// True when the label counts differ by at most one.
bool labels_balanced(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> encode_actv(const ActivationDataset& dataset);
/// Throws FormatError, TruncationError or ValidationError.
ActivationDataset decode_actv(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written; throws IoError if the sink fails.
std::uint64_t write_actv(const ActivationDataset& dataset, std::ostream& sink);
ActivationDataset read_actv(std::istream& source);

std::uint64_t write_actv_file(const ActivationDataset& dataset, const std::filesystem::path& path);
ActivationDataset read_actv_file(const std::filesystem::path& path);

/// Header and meta only; checks magic, version and dtype, and that the file
/// length matches the header. Labels and activations are not loaded.
struct ActvHeader {
  std::uint64_t rows = 0;
  std::uint64_t cols = 0;
  DatasetMeta meta;
};
ActvHeader read_actv_header(const std::filesystem::path& path);

std::string meta_to_json(const DatasetMeta& meta);
DatasetMeta meta_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Sweep manifests

struct SweepKey {
  std::string checkpoint_id;
  std::uint64_t layer = 0;

  auto operator<=>(const SweepKey&) const = default;
  bool operator==(const SweepKey&) const = default;
};

struct ManifestEntry {
  SweepKey key;
  /// Resolved against the manifest's directory when relative.
  std::filesystem::path path;
  std::string dataset_name;
  Dimension dimension = Dimension::other;
  /// Training step of the checkpoint, when the manifest records one.
  std::optional<std::int64_t> step;
};

/// Parses a manifest document, checks that every referenced file exists and
/// that its ACTV1 meta agrees with the entry, and returns the entries sorted
/// by (checkpoint_id, layer). All problems are reported together in one
/// ValidationError.
std::vector<ManifestEntry> validate_manifest(std::string_view json_text,
                                             const std::filesystem::path& base_dir);
std::vector<ManifestEntry> validate_manifest_file(const std::filesystem::path& manifest_path);

std::vector<SweepKey> sweep_keys(std::span<const ManifestEntry> entries);

/// Writes {"entries": [...]} with paths relative to the manifest directory
/// when the files live beneath it.
void write_manifest_file(std::span<const ManifestEntry> entries,
                         const std::filesystem::path& manifest_path);

}  // namespace tracetrust
