#pragma once

// Run configuration and the pipeline stages behind the command-line tool.
//
// Every stage reads its inputs from the paths in the configuration and
// writes its artifacts next to a "<artifact>.stage.json" sidecar recording
// the stage hash. Downstream stages recompute the expected upstream hash
// from the current configuration and refuse to run on a mismatch.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimac/abstractor.hpp"
#include "dimac/corpus.hpp"
#include "dimac/dimac.hpp"
#include "dimac/extractor.hpp"
#include "dimac/error.hpp"
#include "dimac/labels.hpp"
#include "dimac/rouge.hpp"

namespace dimac::pipeline {

enum class ValueType { kString, kInt, kDouble, kBool, kIntList, kSeed };

struct SchemaEntry {
  std::string key;
  std::string default_value;
  ValueType type = ValueType::kString;
  std::string doc;
};

// All recognized keys with their defaults, in serialization order.
const std::vector<SchemaEntry>& schema();

// Dotted key/value configuration. Unknown keys and values that do not parse
// as the key's type are rejected.
class RunConfig {
 public:
  RunConfig();  // every key at its default

  // Accepts "[section]" headers followed by "key = value" lines as well as
  // fully dotted "section.key = value" lines. '#' starts a comment.
  static RunConfig parse(std::istream& in);
  static RunConfig load(const std::filesystem::path& path);

  // Canonical text: one section per prefix, keys in schema order.
  std::string to_text() const;

  void set(const std::string& key, const std::string& value);
  // "key=value"
  void apply_override(const std::string& assignment);

  const std::string& get(const std::string& key) const;
  std::string str(const std::string& key) const { return get(key); }
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::uint64_t seed() const;
  std::filesystem::path path(const std::string& key) const { return std::filesystem::path(get(key)); }

  const std::map<std::string, std::string>& values() const { return values_; }
  bool operator==(const RunConfig&) const = default;

 private:
  std::map<std::string, std::string> values_;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t h);

// ---- Typed views ------------------------------------------------------------------

corpus::NormalizerOptions normalizer_options(const RunConfig& c);
corpus::SyntheticConfig synthetic_config(const RunConfig& c);
labels::MatchOptions match_options(const RunConfig& c);
extractor::ExtractorConfig extractor_config(const RunConfig& c, int vocab_size);
extractor::MleOptions mle_options(const RunConfig& c);
abstractor::AbstractorConfig abstractor_config(const RunConfig& c, int vocab_size);
abstractor::TrainOptions abstractor_train_options(const RunConfig& c);
rl::DimacConfig dimac_config(const RunConfig& c);

// ---- Stage graph -------------------------------------------------------------------

// Stage names: prep, synth, labels, pretrain-extractor, pretrain-abstractor,
// train-dimac, summarize, evaluate, stats. prep and synth both produce the
// corpus stage.
const std::vector<std::string>& commands();

// Hash of a stage's configuration keys and of its upstream stages.
std::uint64_t stage_hash(const RunConfig& c, const std::string& stage);

// ---- Splits --------------------------------------------------------------------------

struct Split {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Seeded shuffle, then train and validation take round(ratio * n) ids each
// and test the rest. Throws dimac::Error unless the ratios sum to 1.
Split split_corpus(const std::vector<std::string>& ids, double train, double validation, double test,
                   std::uint64_t seed);
nlohmann::json split_to_json(const Split& s);
Split split_from_json(const nlohmann::json& j);

// ---- Evaluation -----------------------------------------------------------------------

struct Prediction {
  struct Sentence {
    corpus::Sentence text;
    int source_sentence = 0;
    std::vector<int> keywords;  // flat findings indices selected inside the sentence
  };
  std::string id;
  std::vector<Sentence> impressions;
};

nlohmann::json prediction_to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
std::vector<Prediction> read_predictions(std::istream& in);

// Predictions that repeat the reference impressions verbatim.
std::vector<Prediction> predictions_from_references(const std::vector<corpus::Report>& reports);

struct EvaluationResult {
  rouge::RougeScore rouge1;
  rouge::RougeScore rouge2;
  rouge::RougeScore rougeL;
  int reports = 0;
};

// Per-report scores on the flattened sentences, averaged and reported in
// percent. Every prediction id must be present in `references`.
EvaluationResult evaluate_predictions(const std::vector<Prediction>& predictions,
                                      const std::vector<corpus::Report>& references,
                                      rouge::Aggregation aggregation = rouge::Aggregation::kFlattened);
nlohmann::json evaluation_to_json(const EvaluationResult& r);
std::string evaluation_table(const EvaluationResult& r, const std::string& model);

// ---- Commands --------------------------------------------------------------------------

struct CommandResult {
  int status = 0;
  std::vector<std::filesystem::path> artifacts;
};

// Runs one stage. Missing inputs and stale upstream hashes raise
// dimac::Error naming the artifact; `log` receives progress lines.
CommandResult run_command(const std::string& name, const RunConfig& config, std::ostream& log);

}  // namespace dimac::pipeline
