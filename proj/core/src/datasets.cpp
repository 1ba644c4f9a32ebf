#include "tracetrust/datasets.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "tracetrust/errors.hpp"
#include "tracetrust/rng.hpp"

namespace tracetrust {

namespace {

bool is_ascii_letter(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

char flip_ascii_case(char c) { return static_cast<char>(c ^ 0x20); }

std::size_t round_half_even(double x) {
  // nearbyint honours the current rounding mode; force ties-to-even.
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(x);
  std::fesetround(saved);
  return static_cast<std::size_t>(r);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  return perm;
}

std::vector<std::size_t> sorted_slice(const std::vector<std::size_t>& perm, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                               perm.begin() + static_cast<std::ptrdiff_t>(end));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

void LabeledCorpus::validate() const {
  if (sentences.empty()) throw ValidationError("corpus is empty");
  if (sentences.size() != labels.size()) {
    throw ValidationError("corpus has " + std::to_string(sentences.size()) + " sentences but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ValidationError("label at index " + std::to_string(i) + " is not 0/1");
  }
}

std::size_t case_flip_count(double rate, std::size_t letters) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ArgumentError("perturbation rate must lie in [0, 1]");
  return std::min(letters, round_half_even(rate * static_cast<double>(letters)));
}

CasePerturbation perturb_case_detailed(std::string_view sentence, double rate, std::uint64_t seed) {
  std::vector<std::size_t> letters;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (is_ascii_letter(sentence[i])) letters.push_back(i);
  }
  const std::size_t k = case_flip_count(rate, letters.size());

  // Partial Fisher-Yates: the first k slots become a uniform k-subset.
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(letters.size() - i));
    std::swap(letters[i], letters[j]);
  }
  letters.resize(k);
  std::sort(letters.begin(), letters.end());

  return {flip_case_at(sentence, letters), std::move(letters)};
}

std::string perturb_case(std::string_view sentence, double rate, std::uint64_t seed) {
  return perturb_case_detailed(sentence, rate, seed).text;
}

std::string flip_case_at(std::string_view sentence, std::span<const std::size_t> positions) {
  std::string out(sentence);
  for (const std::size_t p : positions) {
    if (p >= out.size() || !is_ascii_letter(out[p])) {
      throw ArgumentError("position " + std::to_string(p) + " is not a letter");
    }
    out[p] = flip_ascii_case(out[p]);
  }
  return out;
}

LabeledCorpus balance(const LabeledCorpus& corpus, std::uint64_t seed) {
  corpus.validate();
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < corpus.size(); ++i) by_class[corpus.labels[i]].push_back(i);
  if (by_class[0].empty() || by_class[1].empty()) {
    throw ArgumentError("cannot balance a corpus with a single class");
  }

  const int majority = by_class[1].size() > by_class[0].size() ? 1 : 0;
  std::vector<std::size_t>& major = by_class[majority];
  const std::size_t keep = by_class[1 - majority].size();

  Rng rng(seed);
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(major.size() - i));
    std::swap(major[i], major[j]);
  }
  major.resize(keep);

  std::vector<std::size_t> retained = by_class[0];
  retained.insert(retained.end(), by_class[1].begin(), by_class[1].end());
  std::sort(retained.begin(), retained.end());

  LabeledCorpus out;
  out.dimension = corpus.dimension;
  for (const std::size_t i : retained) {
    out.sentences.push_back(corpus.sentences[i]);
    out.labels.push_back(corpus.labels[i]);
  }
  return out;
}

SplitPlan make_splits(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw ArgumentError("make_splits needs n >= 5 to honour both 1:1 and 4:1 ratios");
  const auto perm = seeded_permutation(n, seed);
  const std::size_t n_test = n / 2;
  const std::size_t n_dev = n - n_test;
  const std::size_t n_val = round_half_even(static_cast<double>(n_dev) / 5.0);
  const std::size_t n_train = n_dev - n_val;

  SplitPlan plan;
  plan.seed = seed;
  plan.scheme = SplitScheme::dev_test;
  plan.test = sorted_slice(perm, 0, n_test);
  plan.train = sorted_slice(perm, n_test, n_test + n_train);
  plan.val = sorted_slice(perm, n_test + n_train, n);
  return plan;
}

SplitPlan make_simple_split(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw ArgumentError("a 4:1 split needs n >= 2");
  const auto perm = seeded_permutation(n, seed);
  const std::size_t n_test = std::clamp<std::size_t>(round_half_even(static_cast<double>(n) / 5.0), 1, n - 1);

  SplitPlan plan;
  plan.seed = seed;
  plan.scheme = SplitScheme::simple;
  plan.test = sorted_slice(perm, 0, n_test);
  plan.train = sorted_slice(perm, n_test, n);
  return plan;
}

SplitPlan make_split(SplitScheme scheme, std::size_t n, std::uint64_t seed) {
  return scheme == SplitScheme::dev_test ? make_splits(n, seed) : make_simple_split(n, seed);
}

LabeledCorpus read_tsv(std::istream& in, Dimension dimension) {
  LabeledCorpus corpus;
  corpus.dimension = dimension;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) {
      throw FormatError("TSV line " + std::to_string(line_no) + ": expected sentence<TAB>label");
    }
    const std::string label = line.substr(tab + 1);
    if (label != "0" && label != "1") {
      throw FormatError("TSV line " + std::to_string(line_no) + ": label '" + label + "' is not 0 or 1");
    }
    const std::string sentence = line.substr(0, tab);
    if (sentence.find('\t') != std::string::npos) {
      throw FormatError("TSV line " + std::to_string(line_no) + ": more than two columns");
    }
    corpus.sentences.push_back(sentence);
    corpus.labels.push_back(static_cast<std::uint8_t>(label[0] - '0'));
  }
  if (in.bad()) throw IoError("TSV read failure");
  return corpus;
}

LabeledCorpus read_tsv_file(const std::filesystem::path& path, Dimension dimension) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tsv(in, dimension);
}

void write_tsv(const LabeledCorpus& corpus, std::ostream& out) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out << corpus.sentences[i] << '\t' << static_cast<int>(corpus.labels[i]) << '\n';
  }
  if (!out) throw IoError("TSV write failure");
}

LabeledCorpus make_case_flip_corpus(std::span<const std::string> sentences, double rate, std::uint64_t seed) {
  LabeledCorpus out;
  out.dimension = Dimension::robustness;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    out.sentences.push_back(sentences[i]);
    out.labels.push_back(0);
    out.sentences.push_back(perturb_case(sentences[i], rate, derive_seed(seed, i)));
    out.labels.push_back(1);
  }
  return out;
}

}  // namespace tracetrust
