#pragma once

// Report ingestion, filtering, normalization, vocabulary and corpus
// statistics, plus a seeded synthetic corpus generator with planted
// saliency.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace dimac::corpus {

using Sentence = std::vector<std::string>;

struct RawReport {
  std::string id;
  std::string findings_text;
  std::string impressions_text;
};

struct FlatToken {
  std::string token;
  int sentence = 0;  // index of the findings sentence
  int position = 0;  // position within that sentence
};

struct Report {
  std::string id;
  std::vector<Sentence> findings;
  std::vector<Sentence> impressions;
  std::vector<FlatToken> flat_findings;

  // Rebuilds flat_findings from findings.
  void rebuild_flat();
  int word_count() const { return static_cast<int>(flat_findings.size()); }
  int sentence_count() const { return static_cast<int>(findings.size()); }
  // Flat index of the first token of every findings sentence.
  std::vector<int> sentence_offsets() const;
  // Regroups flat_findings by sentence index.
  std::vector<Sentence> regroup_flat() const;

  bool operator==(const Report&) const = default;
};

bool operator==(const FlatToken& a, const FlatToken& b);

// ---- Normalization ---------------------------------------------------------

struct NormalizerOptions {
  int max_words = 800;
  int max_sentences = 60;
};

// Rule-based sentence splitter and tokenizer. Sentences end at . ? ! followed
// by whitespace or end of text. Tokens are lowercased; numbers become <num>
// and dates <date>; punctuation is split off as separate tokens.
class Normalizer {
 public:
  using Lemmatizer = std::function<std::string(const std::string&)>;

  Normalizer() = default;
  explicit Normalizer(NormalizerOptions options, Lemmatizer lemmatizer = {})
      : options_(options), lemmatizer_(std::move(lemmatizer)) {}

  std::vector<std::string> split_sentences(const std::string& text) const;
  std::vector<std::string> tokenize(const std::string& sentence) const;
  std::vector<Sentence> sentences(const std::string& text) const;

  // Truncation order: sentences to max_sentences, then findings tokens to
  // max_words; the sentence crossing the word budget keeps its leading part.
  Report normalize(const RawReport& raw) const;

  const NormalizerOptions& options() const { return options_; }

 private:
  NormalizerOptions options_;
  Lemmatizer lemmatizer_;
};

bool is_punctuation_token(const std::string& token);
// Number of non-punctuation tokens.
int count_words(const std::vector<Sentence>& sentences);

// ---- Ingestion and filtering -----------------------------------------------

enum class RejectRule {
  kMissingSection,      // (a) findings or impressions missing or empty
  kFindingsTooShort,    // (b) findings has fewer than 3 words
  kImpressionsLonger,   // (c) findings has fewer words or sentences than impressions
  kMalformed,           // record could not be parsed or has no id
};

std::string to_string(RejectRule rule);

struct Rejection {
  std::string id;
  std::size_t line = 0;  // 1-based input line, 0 when not from a stream
  RejectRule rule = RejectRule::kMalformed;
  std::string detail;
};

struct FilterRules {
  int min_findings_words = 3;
};

struct IngestResult {
  std::vector<RawReport> accepted;
  std::vector<Rejection> rejections;
};

// Returns the rule that rejects `raw`, if any.
std::optional<RejectRule> check_report(const RawReport& raw, const FilterRules& rules,
                                       const Normalizer& normalizer);

IngestResult filter_reports(const std::vector<RawReport>& reports, const FilterRules& rules,
                            const Normalizer& normalizer);

// Reads JSON-lines records {"id", "findings", "impressions"}; malformed lines
// are logged and skipped.
IngestResult ingest_and_filter(std::istream& jsonl, const FilterRules& rules,
                               const Normalizer& normalizer);

// ---- Vocabulary -------------------------------------------------------------

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kStart = 2;
  static constexpr int kEnd = 3;
  static constexpr int kReserved = 4;
  static const std::vector<std::string>& reserved_tokens();

  Vocabulary();
  // Rebuilds from a full token list (reserved tokens first), as stored in
  // checkpoints.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens);

  // Most frequent tokens of findings and impressions, ties broken
  // lexicographically; at most `cap` non-reserved entries.
  static Vocabulary build(const std::vector<Report>& corpus, std::size_t cap);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---- Statistics ---------------------------------------------------------------

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

struct SectionStats {
  MeanStd words_per_sentence;
  MeanStd sentences_per_report;
  MeanStd words_per_report;
};

struct CorpusStats {
  std::size_t reports = 0;
  SectionStats findings;
  SectionStats impressions;
};

// Population mean and standard deviation; throws on an empty corpus.
CorpusStats corpus_stats(const std::vector<Report>& corpus);
nlohmann::json stats_to_json(const CorpusStats& stats);
std::string stats_table(const CorpusStats& stats);

// ---- Synthetic corpora ----------------------------------------------------------

struct SyntheticConfig {
  int reports = 250;
  int min_sentences = 5;
  int max_sentences = 9;
  int min_sentence_length = 6;
  int max_sentence_length = 12;
  int salient_sentences = 3;
  int filler_vocabulary = 150;
  int concept_vocabulary = 40;
  double keyword_density = 0.3;
  double dropout = 0.1;
  double synonym_swap = 0.2;
};

struct SaliencyAnnotation {
  std::string id;
  std::vector<int> salient_sentences;
  std::vector<int> salient_words;
};

struct SyntheticCorpus {
  std::vector<RawReport> raw;
  std::vector<Report> reports;  // equal to Normalizer{}.normalize(raw[i])
  std::vector<SaliencyAnnotation> annotations;
  std::vector<std::string> keywords;  // concept tokens in use, sorted
};

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed);

// Fixed concept -> synonym table used by the generator.
std::string concept_synonym(const std::string& concept_token);

// ---- JSON-lines I/O -----------------------------------------------------------------

nlohmann::json raw_to_json(const RawReport& r);
nlohmann::json report_to_json(const Report& r);
Report report_from_json(const nlohmann::json& j);
nlohmann::json annotation_to_json(const SaliencyAnnotation& a);
SaliencyAnnotation annotation_from_json(const nlohmann::json& j);

std::vector<Report> read_reports(std::istream& in);
void write_reports(std::ostream& out, const std::vector<Report>& reports);
std::vector<RawReport> read_raw_reports(std::istream& in);

}  // namespace dimac::corpus
