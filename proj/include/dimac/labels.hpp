#pragma once

// Heuristic supervision for the extractors: greedy sentence alignment,
// keyword positions and the interleaved (switch, sentence, word) sequence.

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimac/corpus.hpp"

namespace dimac::labels {

using corpus::Report;
using corpus::Sentence;

inline constexpr int kNone = -1;

struct MatchOptions {
  // F-beta of ROUGE-L with beta > 1 weighting recall of the impressions
  // sentence more than precision.
  double beta = 1.2;
  bool pure_recall = false;
};

double sentence_similarity(const Sentence& findings_sentence, const Sentence& impressions_sentence,
                           const MatchOptions& options = {});

struct SentenceMatch {
  std::vector<int> indices;    // one findings index per matched impressions sentence
  std::vector<double> scores;
};

// For each impressions sentence in order, takes the unmatched findings
// sentence with the highest similarity; ties go to the smaller index.
SentenceMatch greedy_match(const std::vector<Sentence>& findings,
                           const std::vector<Sentence>& impressions, const MatchOptions& options = {});

// ---- Keywords -----------------------------------------------------------

struct Keyword {
  std::string phrase;  // space-separated lowercase tokens
  double score = 0.0;
};

struct KeywordSet {
  std::vector<Keyword> keywords;
  double threshold = 0.0;
};

struct KeywordScorerOptions {
  int max_order = 3;
  // Phrases found in more than this fraction of reports are dropped.
  double document_frequency_cap = 0.5;
};

// Frequency/association scorer: quality = (1 - 1/count) * association, where
// association is 1 for unigrams and the clipped normalized PMI of the phrase
// otherwise. Candidates are runs of alphabetic tokens inside one sentence.
// Keywords with quality >= threshold are kept, sorted by descending score
// then phrase.
KeywordSet score_keywords(const std::vector<Report>& corpus, double threshold,
                          const KeywordScorerOptions& options = {});

// One "phrase<TAB>score" per line. Entries below `threshold` are dropped.
KeywordSet read_keyword_file(std::istream& in, double threshold = 0.0);
void write_keyword_file(std::ostream& out, const KeywordSet& keywords);

// Flat findings indices covered by any keyword occurrence, increasing and
// unique. Multi-token keywords contribute every constituent index.
std::vector<int> compile_keyword_indices(const Report& report, const KeywordSet& keywords);

// ---- Interleaved labels -----------------------------------------------------------

struct LabelTuple {
  int q = 0;          // 1: word step, 0: sentence step
  int s = kNone;      // sentence index, or n for END
  int w = kNone;      // flat word index

  bool operator==(const LabelTuple&) const = default;
};

struct InterleavedLabels {
  std::string id;
  std::vector<LabelTuple> steps;  // last element is the END tuple (0, n, none)

  bool operator==(const InterleavedLabels&) const = default;
};

InterleavedLabels interleave(const SentenceMatch& match, const std::vector<int>& keyword_indices,
                             const Report& report);

// Throws dimac::Error describing the first structural violation.
void validate_labels(const InterleavedLabels& labels, const Report& report);

// Sentence stream (END excluded) and word stream of a label sequence.
std::vector<int> sentence_stream(const InterleavedLabels& labels);
std::vector<int> word_stream(const InterleavedLabels& labels);

InterleavedLabels build_labels(const Report& report, const KeywordSet& keywords,
                               const MatchOptions& options = {});

nlohmann::json labels_to_json(const InterleavedLabels& labels);
InterleavedLabels labels_from_json(const nlohmann::json& j);
std::vector<InterleavedLabels> read_labels(std::istream& in);
void write_labels(std::ostream& out, const std::vector<InterleavedLabels>& labels);

}  // namespace dimac::labels
