#pragma once

// Binary trustworthiness corpora: case-flip perturbation, class balancing,
// seeded splits and TSV ingestion.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tracetrust/actv.hpp"

namespace tracetrust {

struct LabeledCorpus {
  std::vector<std::string> sentences;
  std::vector<std::uint8_t> labels;
  Dimension dimension = Dimension::other;

  std::size_t size() const { return sentences.size(); }
  /// Throws ValidationError unless sizes match, n >= 1 and labels are 0/1.
  void validate() const;
};

/// Result of a case perturbation together with the byte positions flipped.
struct CasePerturbation {
  std::string text;
  std::vector<std::size_t> flipped_positions;  // ascending
};

/// Number of letters to flip: round(rate * letters), ties to even.
std::size_t case_flip_count(double rate, std::size_t letters);

/// Flips the case of exactly case_flip_count(rate, L) ASCII letters chosen
/// uniformly without replacement, where L is the number of ASCII letters.
/// Every other byte is unchanged. rate must lie in [0, 1].
CasePerturbation perturb_case_detailed(std::string_view sentence, double rate, std::uint64_t seed);
std::string perturb_case(std::string_view sentence, double rate, std::uint64_t seed);

/// Flips the case of the given positions; applying the same positions twice
/// restores the input.
std::string flip_case_at(std::string_view sentence, std::span<const std::size_t> positions);

/// Downsamples the majority class to the minority count. Retained items keep
/// their relative order. Throws ArgumentError("cannot balance ...") when a
/// class is absent.
LabeledCorpus balance(const LabeledCorpus& corpus, std::uint64_t seed);

enum class SplitScheme {
  /// dev/test 1:1, then train/val 4:1 inside dev.
  dev_test,
  /// train/test 4:1, no validation split.
  simple,
};

struct SplitPlan {
  std::uint64_t seed = 0;
  SplitScheme scheme = SplitScheme::dev_test;
  std::vector<std::size_t> train;  // each list ascending
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  bool operator==(const SplitPlan&) const = default;
};

/// dev_test scheme; n must be >= 5.
SplitPlan make_splits(std::size_t n, std::uint64_t seed);
/// simple scheme; n must be >= 2.
SplitPlan make_simple_split(std::size_t n, std::uint64_t seed);
SplitPlan make_split(SplitScheme scheme, std::size_t n, std::uint64_t seed);

/// Two-column UTF-8 TSV: sentence<TAB>label, label in {0,1}. Blank lines are
/// skipped. Malformed lines raise FormatError naming the 1-based line number.
LabeledCorpus read_tsv(std::istream& in, Dimension dimension = Dimension::other);
LabeledCorpus read_tsv_file(const std::filesystem::path& path, Dimension dimension = Dimension::other);
void write_tsv(const LabeledCorpus& corpus, std::ostream& out);

/// Robustness corpus: every sentence appears as the original (label 0)
/// followed by its case-perturbed copy (label 1). Sentence i is perturbed
/// with seed derived from (seed, i).
LabeledCorpus make_case_flip_corpus(std::span<const std::string> sentences, double rate, std::uint64_t seed);

}  // namespace tracetrust
