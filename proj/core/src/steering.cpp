#include "tracetrust/steering.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tracetrust/errors.hpp"

namespace tracetrust {

namespace {

std::vector<double> centroid(const ActivationDataset& data, std::span<const std::size_t> rows) {
  std::vector<double> sum(data.cols(), 0.0);
  for (const std::size_t i : rows) {
    const auto r = data.row(i);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += r[j];
  }
  for (auto& s : sum) s /= static_cast<double>(rows.size());
  return sum;
}

std::vector<std::size_t> all_rows(const ActivationDataset& data) {
  std::vector<std::size_t> rows(data.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

SteeringVector from_centroids(const ActivationDataset& pos_data, std::span<const std::size_t> pos,
                              const ActivationDataset& neg_data, std::span<const std::size_t> neg) {
  if (pos.empty() || neg.empty()) throw ArgumentError("mass mean vector needs non-empty positive and negative sets");
  if (pos_data.cols() != neg_data.cols()) {
    throw ArgumentError("positive and negative activations differ in dimension");
  }
  const auto mp = centroid(pos_data, pos);
  const auto mn = centroid(neg_data, neg);
  SteeringVector v;
  v.direction.resize(mp.size());
  for (std::size_t j = 0; j < mp.size(); ++j) v.direction[j] = mp[j] - mn[j];
  v.layer = pos_data.meta().layer;
  v.source_checkpoint = pos_data.meta().checkpoint_id;
  v.n_positive = pos.size();
  v.n_negative = neg.size();
  return v;
}

std::filesystem::path stem_of(const std::filesystem::path& path) {
  const auto ext = path.extension();
  if (ext == ".actv" || ext == ".json") return path.parent_path() / path.stem();
  return path;
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}

}  // namespace

SteeringVector mass_mean_vector(const ActivationDataset& positives, const ActivationDataset& negatives) {
  return from_centroids(positives, all_rows(positives), negatives, all_rows(negatives));
}

SteeringVector mass_mean_vector(const ActivationDataset& labelled) {
  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t i = 0; i < labelled.rows(); ++i) (labelled.label(i) ? pos : neg).push_back(i);
  return from_centroids(labelled, pos, labelled, neg);
}

std::vector<double> apply_intervention(std::span<const double> h, const InterventionSpec& spec) {
  const auto& dir = spec.vector.direction;
  if (h.size() != dir.size()) {
    throw ArgumentError("intervention dimension " + std::to_string(dir.size()) + " != hidden size " +
                        std::to_string(h.size()));
  }
  std::vector<double> out(h.begin(), h.end());
  if (spec.alpha == 0.0) return out;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] += spec.alpha * dir[j];
  return out;
}

void apply_intervention_inplace(std::span<float> h, const InterventionSpec& spec) {
  const auto& dir = spec.vector.direction;
  if (h.size() != dir.size()) {
    throw ArgumentError("intervention dimension " + std::to_string(dir.size()) + " != hidden size " +
                        std::to_string(h.size()));
  }
  if (spec.alpha == 0.0) return;
  for (std::size_t j = 0; j < h.size(); ++j) {
    h[j] = static_cast<float>(static_cast<double>(h[j]) + spec.alpha * dir[j]);
  }
}

void save_steering_vector(const SteeringVector& vector, const std::filesystem::path& stem_path) {
  const auto stem = stem_of(stem_path);
  std::vector<float> values(vector.direction.begin(), vector.direction.end());
  DatasetMeta meta;
  meta.dataset_name = "steering_vector";
  meta.checkpoint_id = vector.source_checkpoint;
  meta.layer = vector.layer;
  meta.label_semantics = "label unused";
  const std::size_t d = values.size();
  write_actv_file(ActivationDataset(1, d, std::move(values), {0}, meta), with_suffix(stem, ".actv"));

  const nlohmann::json sidecar = {{"layer", vector.layer},
                                  {"source_checkpoint", vector.source_checkpoint},
                                  {"n_positive", vector.n_positive},
                                  {"n_negative", vector.n_negative}};
  std::ofstream out(with_suffix(stem, ".json"), std::ios::trunc);
  if (!out) throw IoError("cannot write steering sidecar for " + stem.string());
  out << sidecar.dump(2) << '\n';
  if (!out) throw IoError("failed writing steering sidecar for " + stem.string());
}

SteeringVector load_steering_vector(const std::filesystem::path& path) {
  const auto stem = stem_of(path);
  const ActivationDataset data = read_actv_file(with_suffix(stem, ".actv"));
  if (data.rows() != 1) throw FormatError("steering vector file must hold exactly one row");

  std::ifstream in(with_suffix(stem, ".json"));
  if (!in) throw IoError("cannot open steering sidecar for " + stem.string());
  std::ostringstream text;
  text << in.rdbuf();

  SteeringVector v;
  try {
    const auto doc = nlohmann::json::parse(text.str());
    v.layer = doc.at("layer").get<std::uint64_t>();
    v.source_checkpoint = doc.at("source_checkpoint").get<std::string>();
    v.n_positive = doc.at("n_positive").get<std::size_t>();
    v.n_negative = doc.at("n_negative").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed steering sidecar: ") + e.what());
  }
  const auto row = data.row(0);
  v.direction.assign(row.begin(), row.end());
  return v;
}

}  // namespace tracetrust
