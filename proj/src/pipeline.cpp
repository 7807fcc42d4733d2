#include "dimac/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dimac/nn/checkpoint.hpp"

namespace dimac::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_ll(const std::string& s, long long& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_u64(const std::string& s, std::uint64_t& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

bool parse_double(const std::string& s, double& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end && std::isfinite(out);
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

bool parse_int_list(const std::string& s, std::vector<int>& out) {
  out.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    long long v = 0;
    if (!parse_ll(trim(item), v)) return false;
    out.push_back(static_cast<int>(v));
  }
  return !out.empty();
}

bool valid_value(ValueType type, const std::string& v) {
  long long i = 0;
  std::uint64_t u = 0;
  double d = 0.0;
  bool b = false;
  std::vector<int> l;
  switch (type) {
    case ValueType::kString: return true;
    case ValueType::kInt: return parse_ll(v, i);
    case ValueType::kSeed: return parse_u64(v, u);
    case ValueType::kDouble: return parse_double(v, d);
    case ValueType::kBool: return parse_bool(v, b);
    case ValueType::kIntList: return parse_int_list(v, l);
  }
  return false;
}

const SchemaEntry* find_entry(const std::string& key) {
  for (const auto& e : schema()) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

}  // namespace

const std::vector<SchemaEntry>& schema() {
  using T = ValueType;
  static const std::vector<SchemaEntry> entries{
      {"seed", "1", T::kSeed, "master seed for splits, generation, initialization and sampling"},
      {"paths.input", "data/reports.jsonl", T::kString, "raw report JSONL read by prep"},
      {"paths.corpus", "work/corpus.jsonl", T::kString, "normalized corpus"},
      {"paths.rejections", "work/rejections.jsonl", T::kString, "reports dropped by prep"},
      {"paths.annotations", "work/annotations.jsonl", T::kString, "planted saliency written by synth"},
      {"paths.splits", "work/splits.json", T::kString, "train/validation/test manifests"},
      {"paths.keywords", "work/keywords.tsv", T::kString, "keyword file (phrase<TAB>score)"},
      {"paths.labels", "work/labels.jsonl", T::kString, "interleaved labels"},
      {"paths.extractor", "work/extractor.ckpt", T::kString, "pretrained extractor checkpoint"},
      {"paths.extractor_log", "work/extractor_log.jsonl", T::kString, "extractor epoch log"},
      {"paths.abstractor", "work/abstractor.ckpt", T::kString, "pretrained abstractor checkpoint"},
      {"paths.abstractor_log", "work/abstractor_log.jsonl", T::kString, "abstractor epoch log"},
      {"paths.dimac", "work/dimac.ckpt", T::kString, "fine-tuned extractor and critic"},
      {"paths.dimac_log", "work/dimac_log.jsonl", T::kString, "per-update training log"},
      {"paths.predictions", "work/predictions.jsonl", T::kString, "predicted impressions"},
      {"paths.traces", "work/traces.jsonl", T::kString, "extraction traces"},
      {"paths.evaluation", "work/evaluation.json", T::kString, "ROUGE scores"},
      {"paths.evaluation_table", "work/evaluation.txt", T::kString, "ROUGE table"},
      {"paths.stats", "work/stats.json", T::kString, "corpus statistics"},
      {"corpus.source", "prep", T::kString, "producer of the corpus: prep or synth"},
      {"corpus.max_words", "800", T::kInt, "findings token budget"},
      {"corpus.max_sentences", "60", T::kInt, "findings sentence budget"},
      {"corpus.min_findings_words", "3", T::kInt, "reject shorter findings"},
      {"corpus.vocab_size", "50000", T::kInt, "most frequent training tokens kept"},
      {"split.train", "0.8", T::kDouble, "training fraction"},
      {"split.validation", "0.1", T::kDouble, "validation fraction"},
      {"split.test", "0.1", T::kDouble, "test fraction"},
      {"synth.reports", "250", T::kInt, "number of synthetic reports"},
      {"synth.min_sentences", "5", T::kInt, ""},
      {"synth.max_sentences", "9", T::kInt, ""},
      {"synth.min_sentence_length", "6", T::kInt, ""},
      {"synth.max_sentence_length", "12", T::kInt, ""},
      {"synth.salient_sentences", "3", T::kInt, "planted sentences per report"},
      {"synth.filler_vocabulary", "150", T::kInt, ""},
      {"synth.concept_vocabulary", "40", T::kInt, ""},
      {"synth.keyword_density", "0.3", T::kDouble, ""},
      {"synth.dropout", "0.1", T::kDouble, "impression token dropout"},
      {"synth.synonym_swap", "0.2", T::kDouble, "impression synonym swap rate"},
      {"labels.beta", "1.2", T::kDouble, "F-beta of the ROUGE-L sentence matcher"},
      {"labels.pure_recall", "false", T::kBool, "match on ROUGE-L recall only"},
      {"labels.keywords", "score", T::kString, "score: mine keywords; file: read paths.keywords"},
      {"labels.keyword_threshold", "0.5", T::kDouble, "minimum keyword quality"},
      {"labels.keyword_max_order", "3", T::kInt, ""},
      {"labels.keyword_df_cap", "0.5", T::kDouble, "drop phrases in more than this fraction of reports"},
      {"extractor.embed_dim", "128", T::kInt, ""},
      {"extractor.position_dim", "128", T::kInt, ""},
      {"extractor.max_positions", "100", T::kInt, ""},
      {"extractor.embeddings", "", T::kString, "optional word vectors, one `token v1 ... vE` line each"},
      {"extractor.hidden", "256", T::kInt, ""},
      {"extractor.conv_filters", "100", T::kInt, "filters per window"},
      {"extractor.windows", "3,4,5", T::kIntList, ""},
      {"extractor.attention_dim", "256", T::kInt, ""},
      {"extractor.switch_hidden", "256", T::kInt, ""},
      {"extractor.epochs", "30", T::kInt, ""},
      {"extractor.batch_size", "8", T::kInt, ""},
      {"extractor.lr", "0.001", T::kDouble, ""},
      {"extractor.clip_norm", "1.5", T::kDouble, ""},
      {"extractor.patience", "5", T::kInt, "early stopping patience in epochs"},
      {"abstractor.embed_dim", "128", T::kInt, ""},
      {"abstractor.hidden", "256", T::kInt, ""},
      {"abstractor.attention_dim", "256", T::kInt, ""},
      {"abstractor.coverage_weight", "1.0", T::kDouble, ""},
      {"abstractor.max_length", "30", T::kInt, "decoding step limit"},
      {"abstractor.epochs", "20", T::kInt, ""},
      {"abstractor.batch_size", "8", T::kInt, ""},
      {"abstractor.lr", "0.001", T::kDouble, ""},
      {"abstractor.clip_norm", "1.5", T::kDouble, ""},
      {"abstractor.patience", "5", T::kInt, ""},
      {"dimac.gamma", "0.95", T::kDouble, "discount"},
      {"dimac.lambda", "0.1", T::kDouble, "keyword weight in the global reward"},
      {"dimac.lr", "0.0001", T::kDouble, ""},
      {"dimac.clip_norm", "1.5", T::kDouble, ""},
      {"dimac.batch_size", "8", T::kInt, ""},
      {"dimac.updates", "500", T::kInt, ""},
      {"dimac.step_cap_factor", "2", T::kInt, "episode cap = factor * (sentences + keywords)"},
      {"dimac.communicator_pg", "true", T::kBool, "policy-gradient term for the communicator"},
      {"dimac.rewriter", "abstractor", T::kString, "abstractor or identity"},
      {"dimac.rewrite_beam", "5", T::kInt, "beam used to rewrite sentences for rewards"},
      {"summarize.model", "dimac", T::kString, "dimac or extractor"},
      {"summarize.split", "test", T::kString, "train, validation, test or all"},
      {"summarize.beam", "5", T::kInt, ""},
      {"rouge.aggregation", "flattened", T::kString, "flattened or union"},
  };
  return entries;
}

RunConfig::RunConfig() {
  for (const auto& e : schema()) values_[e.key] = e.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto* e = find_entry(key);
  if (e == nullptr) throw Error("config: unknown key '" + key + "'");
  const std::string v = trim(value);
  if (!valid_value(e->type, v)) throw Error("config: invalid value '" + v + "' for " + key);
  values_[key] = v;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("config: override must be key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::parse(std::istream& in) {
  RunConfig c;
  std::string line;
  std::string section;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error("config line " + std::to_string(number) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("config line " + std::to_string(number) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    c.set(key, line.substr(eq + 1));
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("missing config file: " + path.string());
  return parse(in);
}

std::string RunConfig::to_text() const {
  std::ostringstream out;
  std::string section;
  for (const auto& e : schema()) {
    const auto dot = e.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : e.key.substr(0, dot);
    const std::string name = dot == std::string::npos ? e.key : e.key.substr(dot + 1);
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << name << " = " << values_.at(e.key) << "\n";
  }
  return out.str();
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error("config: unknown key '" + key + "'");
  return it->second;
}

long long RunConfig::integer(const std::string& key) const {
  long long v = 0;
  if (!parse_ll(get(key), v)) throw Error("config: " + key + " is not an integer");
  return v;
}

double RunConfig::real(const std::string& key) const {
  double v = 0.0;
  if (!parse_double(get(key), v)) throw Error("config: " + key + " is not a number");
  return v;
}

bool RunConfig::flag(const std::string& key) const {
  bool v = false;
  if (!parse_bool(get(key), v)) throw Error("config: " + key + " is not a boolean");
  return v;
}

std::vector<int> RunConfig::int_list(const std::string& key) const {
  std::vector<int> v;
  if (!parse_int_list(get(key), v)) throw Error("config: " + key + " is not an integer list");
  return v;
}

std::uint64_t RunConfig::seed() const {
  std::uint64_t v = 0;
  if (!parse_u64(get("seed"), v)) throw Error("config: seed is not an unsigned integer");
  return v;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

// ---- Typed views --------------------------------------------------------------------

corpus::NormalizerOptions normalizer_options(const RunConfig& c) {
  corpus::NormalizerOptions o;
  o.max_words = static_cast<int>(c.integer("corpus.max_words"));
  o.max_sentences = static_cast<int>(c.integer("corpus.max_sentences"));
  return o;
}

corpus::SyntheticConfig synthetic_config(const RunConfig& c) {
  corpus::SyntheticConfig s;
  s.reports = static_cast<int>(c.integer("synth.reports"));
  s.min_sentences = static_cast<int>(c.integer("synth.min_sentences"));
  s.max_sentences = static_cast<int>(c.integer("synth.max_sentences"));
  s.min_sentence_length = static_cast<int>(c.integer("synth.min_sentence_length"));
  s.max_sentence_length = static_cast<int>(c.integer("synth.max_sentence_length"));
  s.salient_sentences = static_cast<int>(c.integer("synth.salient_sentences"));
  s.filler_vocabulary = static_cast<int>(c.integer("synth.filler_vocabulary"));
  s.concept_vocabulary = static_cast<int>(c.integer("synth.concept_vocabulary"));
  s.keyword_density = c.real("synth.keyword_density");
  s.dropout = c.real("synth.dropout");
  s.synonym_swap = c.real("synth.synonym_swap");
  return s;
}

labels::MatchOptions match_options(const RunConfig& c) {
  labels::MatchOptions o;
  o.beta = c.real("labels.beta");
  o.pure_recall = c.flag("labels.pure_recall");
  return o;
}

extractor::ExtractorConfig extractor_config(const RunConfig& c, int vocab_size) {
  extractor::ExtractorConfig e;
  e.vocab_size = vocab_size;
  e.embed_dim = static_cast<int>(c.integer("extractor.embed_dim"));
  e.position_dim = static_cast<int>(c.integer("extractor.position_dim"));
  e.max_positions = static_cast<int>(c.integer("extractor.max_positions"));
  e.hidden = static_cast<int>(c.integer("extractor.hidden"));
  e.conv_filters = static_cast<int>(c.integer("extractor.conv_filters"));
  e.windows = c.int_list("extractor.windows");
  e.attention_dim = static_cast<int>(c.integer("extractor.attention_dim"));
  e.switch_hidden = static_cast<int>(c.integer("extractor.switch_hidden"));
  return e;
}

extractor::MleOptions mle_options(const RunConfig& c) {
  extractor::MleOptions o;
  o.epochs = static_cast<int>(c.integer("extractor.epochs"));
  o.batch_size = static_cast<int>(c.integer("extractor.batch_size"));
  o.lr = c.real("extractor.lr");
  o.clip_norm = c.real("extractor.clip_norm");
  o.patience = static_cast<int>(c.integer("extractor.patience"));
  o.seed = c.seed();
  return o;
}

abstractor::AbstractorConfig abstractor_config(const RunConfig& c, int vocab_size) {
  abstractor::AbstractorConfig a;
  a.vocab_size = vocab_size;
  a.embed_dim = static_cast<int>(c.integer("abstractor.embed_dim"));
  a.hidden = static_cast<int>(c.integer("abstractor.hidden"));
  a.attention_dim = static_cast<int>(c.integer("abstractor.attention_dim"));
  a.coverage_weight = c.real("abstractor.coverage_weight");
  a.max_length = static_cast<int>(c.integer("abstractor.max_length"));
  return a;
}

abstractor::TrainOptions abstractor_train_options(const RunConfig& c) {
  abstractor::TrainOptions o;
  o.epochs = static_cast<int>(c.integer("abstractor.epochs"));
  o.batch_size = static_cast<int>(c.integer("abstractor.batch_size"));
  o.lr = c.real("abstractor.lr");
  o.clip_norm = c.real("abstractor.clip_norm");
  o.patience = static_cast<int>(c.integer("abstractor.patience"));
  o.seed = c.seed();
  return o;
}

rl::DimacConfig dimac_config(const RunConfig& c) {
  rl::DimacConfig d;
  d.gamma = c.real("dimac.gamma");
  d.lambda = c.real("dimac.lambda");
  d.lr = c.real("dimac.lr");
  d.clip_norm = c.real("dimac.clip_norm");
  d.batch_size = static_cast<int>(c.integer("dimac.batch_size"));
  d.updates = static_cast<int>(c.integer("dimac.updates"));
  d.step_cap_factor = static_cast<int>(c.integer("dimac.step_cap_factor"));
  d.communicator_policy_gradient = c.flag("dimac.communicator_pg");
  d.seed = c.seed();
  return d;
}

// ---- Stage graph -----------------------------------------------------------------------

const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"prep",  "synth",       "labels",   "pretrain-extractor",
                                              "pretrain-abstractor", "train-dimac", "summarize", "evaluate",
                                              "stats"};
  return names;
}

namespace {

struct StageSpec {
  std::vector<std::string> prefixes;  // configuration keys hashed by this stage
  std::vector<std::string> upstream;
};

std::string corpus_stage(const RunConfig& c) {
  const auto& s = c.get("corpus.source");
  if (s != "prep" && s != "synth") throw Error("config: corpus.source must be prep or synth, got '" + s + "'");
  return s;
}

StageSpec stage_spec(const RunConfig& c, const std::string& stage) {
  if (stage == "prep") return {{"seed", "corpus.", "split."}, {}};
  if (stage == "synth") return {{"seed", "corpus.", "split.", "synth."}, {}};
  if (stage == "labels") return {{"labels."}, {corpus_stage(c)}};
  if (stage == "pretrain-extractor") return {{"extractor."}, {"labels"}};
  if (stage == "pretrain-abstractor") return {{"abstractor."}, {"labels"}};
  if (stage == "train-dimac") return {{"dimac."}, {"pretrain-extractor", "pretrain-abstractor"}};
  if (stage == "summarize") {
    const auto& m = c.get("summarize.model");
    if (m != "dimac" && m != "extractor") throw Error("config: summarize.model must be dimac or extractor");
    return {{"summarize."}, {m == "dimac" ? "train-dimac" : "pretrain-extractor", "pretrain-abstractor"}};
  }
  if (stage == "evaluate") return {{"rouge."}, {"summarize"}};
  if (stage == "stats") return {{}, {corpus_stage(c)}};
  throw Error("unknown command '" + stage + "'");
}

bool matches_prefix(const std::string& key, const std::string& prefix) {
  if (prefix.back() == '.') return key.rfind(prefix, 0) == 0;
  return key == prefix;
}

std::string stage_text(const RunConfig& c, const std::string& stage) {
  const auto spec = stage_spec(c, stage);
  std::ostringstream out;
  out << "stage = " << stage << "\n";
  for (const auto& e : schema()) {
    for (const auto& p : spec.prefixes) {
      if (matches_prefix(e.key, p)) {
        out << e.key << " = " << c.get(e.key) << "\n";
        break;
      }
    }
  }
  for (const auto& u : spec.upstream) out << "upstream " << u << " = " << hex64(stage_hash(c, u)) << "\n";
  return out.str();
}

}  // namespace

std::uint64_t stage_hash(const RunConfig& c, const std::string& stage) { return fnv1a64(stage_text(c, stage)); }

// ---- Splits --------------------------------------------------------------------------------

Split split_corpus(const std::vector<std::string>& ids, double train, double validation, double test,
                   std::uint64_t seed) {
  if (train < 0.0 || validation < 0.0 || test < 0.0 || std::abs(train + validation + test - 1.0) > 1e-9) {
    throw Error("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::string> order = ids;
  Rng rng(seed);
  rng.shuffle(order);
  const auto n = static_cast<double>(order.size());
  const auto n_train = std::min(order.size(), static_cast<std::size_t>(std::llround(train * n)));
  const auto n_val = std::min(order.size() - n_train, static_cast<std::size_t>(std::llround(validation * n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

json split_to_json(const Split& s) { return json{{"train", s.train}, {"validation", s.validation}, {"test", s.test}}; }

Split split_from_json(const json& j) {
  Split s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

// ---- Evaluation ---------------------------------------------------------------------------------

json prediction_to_json(const Prediction& p) {
  json imp = json::array();
  for (const auto& s : p.impressions) {
    imp.push_back({{"text", s.text}, {"source_sentence", s.source_sentence}, {"keywords", s.keywords}});
  }
  return json{{"id", p.id}, {"impressions", imp}};
}

Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.id = j.at("id").get<std::string>();
  for (const auto& s : j.at("impressions")) {
    Prediction::Sentence out;
    out.text = s.at("text").get<corpus::Sentence>();
    out.source_sentence = s.value("source_sentence", -1);
    out.keywords = s.value("keywords", std::vector<int>{});
    p.impressions.push_back(std::move(out));
  }
  return p;
}

std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (trim(line).empty()) continue;
    try {
      out.push_back(prediction_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error("predictions line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Prediction> predictions_from_references(const std::vector<corpus::Report>& reports) {
  std::vector<Prediction> out;
  for (const auto& r : reports) {
    Prediction p;
    p.id = r.id;
    for (const auto& s : r.impressions) p.impressions.push_back({s, -1, {}});
    out.push_back(std::move(p));
  }
  return out;
}

EvaluationResult evaluate_predictions(const std::vector<Prediction>& predictions,
                                      const std::vector<corpus::Report>& references, rouge::Aggregation aggregation) {
  std::unordered_map<std::string, const corpus::Report*> by_id;
  for (const auto& r : references) by_id[r.id] = &r;
  EvaluationResult out;
  auto add = [](rouge::RougeScore& acc, const rouge::RougeScore& s) {
    acc.recall += s.recall;
    acc.precision += s.precision;
    acc.f1 += s.f1;
  };
  for (const auto& p : predictions) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw Error("evaluate: prediction id '" + p.id + "' has no reference");
    std::vector<corpus::Sentence> candidate;
    for (const auto& s : p.impressions) candidate.push_back(s.text);
    const auto cand = rouge::flatten(candidate);
    const auto ref = rouge::flatten(it->second->impressions);
    add(out.rouge1, rouge::rouge_n(cand, ref, 1));
    add(out.rouge2, rouge::rouge_n(cand, ref, 2));
    add(out.rougeL, rouge::rouge_l_summary(candidate, it->second->impressions, aggregation));
    ++out.reports;
  }
  if (out.reports == 0) throw Error("evaluate: no predictions");
  for (auto* s : {&out.rouge1, &out.rouge2, &out.rougeL}) {
    s->recall *= 100.0 / out.reports;
    s->precision *= 100.0 / out.reports;
    s->f1 *= 100.0 / out.reports;
  }
  return out;
}

json evaluation_to_json(const EvaluationResult& r) {
  auto score = [](const rouge::RougeScore& s) { return json{{"r", s.recall}, {"p", s.precision}, {"f", s.f1}}; };
  return json{{"rouge1", score(r.rouge1)}, {"rouge2", score(r.rouge2)}, {"rougeL", score(r.rougeL)},
              {"reports", r.reports}};
}

std::string evaluation_table(const EvaluationResult& r, const std::string& model) {
  std::ostringstream out;
  const int width = std::max<int>(6, static_cast<int>(model.size()));
  out << std::left << std::setw(width) << "Models" << " | " << std::right << std::setw(7) << "ROUGE-1" << " "
      << std::setw(7) << "ROUGE-2" << " " << std::setw(7) << "ROUGE-L" << "\n";
  out << std::string(static_cast<std::size_t>(width), '-') << "-+-" << std::string(23, '-') << "\n";
  out << std::left << std::setw(width) << model << " | " << std::right << std::fixed << std::setprecision(2)
      << std::setw(7) << r.rouge1.f1 << " " << std::setw(7) << r.rouge2.f1 << " " << std::setw(7) << r.rougeL.f1
      << "\n";
  return out.str();
}

// ---- Commands ------------------------------------------------------------------------------------

namespace {

const char* producer_of(const std::string& key) {
  static const std::map<std::string, const char*> producers{
      {"paths.input", "an external raw corpus"}, {"paths.corpus", "prep or synth"},
      {"paths.splits", "prep or synth"},         {"paths.annotations", "synth"},
      {"paths.keywords", "synth, labels or an external keyword file"},
      {"paths.labels", "labels"},                {"paths.extractor", "pretrain-extractor"},
      {"paths.abstractor", "pretrain-abstractor"}, {"paths.dimac", "train-dimac"},
      {"paths.predictions", "summarize"}};
  auto it = producers.find(key);
  return it == producers.end() ? "an earlier stage" : it->second;
}

class Stage {
 public:
  Stage(const std::string& name, const RunConfig& c, std::ostream& log) : name_(name), c_(c), log_(log) {
    hash_ = stage_hash(c, name);
  }

  fs::path input(const std::string& key) const {
    const auto p = c_.path(key);
    if (!fs::exists(p)) {
      throw Error("missing artifact " + p.string() + " (" + key + ", produced by " + producer_of(key) + ")");
    }
    return p;
  }

  // Verifies the sidecar of an upstream artifact.
  void check_upstream(const std::string& key, const std::string& stage) const {
    const auto p = input(key);
    const auto side = sidecar(p);
    if (!fs::exists(side)) throw Error("missing stage record " + side.string() + "; rerun " + stage);
    std::ifstream in(side);
    const auto j = json::parse(in);
    const auto recorded = j.at("hash").get<std::string>();
    const auto expected = hex64(stage_hash(c_, stage));
    if (j.at("stage").get<std::string>() != stage || recorded != expected) {
      throw Error("stale artifact " + p.string() + ": recorded " + j.at("stage").get<std::string>() + " hash " +
                  recorded + ", configuration expects " + stage + " hash " + expected + "; rerun " + stage);
    }
  }

  nn::Checkpoint load_checkpoint(const std::string& key, const std::string& stage) const {
    const auto p = input(key);
    auto ckpt = nn::load_checkpoint(p);
    const auto expected = stage_hash(c_, stage);
    if (ckpt.config_hash != expected) {
      throw Error("stale checkpoint " + p.string() + ": config hash " + hex64(ckpt.config_hash) +
                  ", configuration expects " + hex64(expected) + "; rerun " + stage);
    }
    return ckpt;
  }

  fs::path output(const std::string& key) {
    const auto p = c_.path(key);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    written_.push_back(p);
    return p;
  }

  std::ofstream open(const std::string& key) {
    const auto p = output(key);
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    return out;
  }

  // Writes the sidecar of every text artifact produced so far.
  void seal() {
    for (const auto& p : written_) {
      if (p.extension() == ".ckpt") continue;
      std::ofstream out(sidecar(p), std::ios::binary);
      out << json{{"stage", name_}, {"hash", hex64(hash_)}, {"config", stage_text(c_, name_)}}.dump() << "\n";
      artifacts_.push_back(p);
      artifacts_.push_back(sidecar(p));
    }
    for (const auto& p : written_) {
      if (p.extension() == ".ckpt") artifacts_.push_back(p);
    }
  }

  void save(nn::Checkpoint ckpt, const std::string& key) {
    ckpt.config_hash = hash_;
    ckpt.config_text = stage_text(c_, name_);
    nn::save_checkpoint(ckpt, output(key));
  }

  static fs::path sidecar(const fs::path& p) { return fs::path(p.string() + ".stage.json"); }

  std::ostream& log() { return log_ << "[" << name_ << "] "; }
  const RunConfig& config() const { return c_; }
  std::vector<fs::path> artifacts() const { return artifacts_; }

 private:
  std::string name_;
  const RunConfig& c_;
  std::ostream& log_;
  std::uint64_t hash_ = 0;
  std::vector<fs::path> written_;
  std::vector<fs::path> artifacts_;
};

std::vector<corpus::Report> load_corpus(const Stage& st) {
  std::ifstream in(st.input("paths.corpus"));
  return corpus::read_reports(in);
}

Split load_split(const Stage& st) {
  std::ifstream in(st.input("paths.splits"));
  return split_from_json(json::parse(in));
}

std::vector<labels::InterleavedLabels> load_labels(const Stage& st) {
  std::ifstream in(st.input("paths.labels"));
  return labels::read_labels(in);
}

labels::KeywordSet load_keywords(const Stage& st) {
  std::ifstream in(st.input("paths.keywords"));
  return labels::read_keyword_file(in, st.config().real("labels.keyword_threshold"));
}

template <typename T>
std::map<std::string, const T*> index_by_id(const std::vector<T>& items) {
  std::map<std::string, const T*> out;
  for (const auto& x : items) {
    if (!out.emplace(x.id, &x).second) throw Error("duplicate report id '" + x.id + "'");
  }
  return out;
}

template <typename T>
std::vector<const T*> select(const std::map<std::string, const T*>& by_id, const std::vector<std::string>& ids,
                             const std::string& what) {
  std::vector<const T*> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("split lists id '" + id + "' missing from " + what);
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::string> split_ids(const Split& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "validation") return s.validation;
  if (name == "test") return s.test;
  if (name == "all") {
    std::vector<std::string> all = s.train;
    all.insert(all.end(), s.validation.begin(), s.validation.end());
    all.insert(all.end(), s.test.begin(), s.test.end());
    return all;
  }
  throw Error("config: unknown split '" + name + "'");
}

corpus::Vocabulary training_vocabulary(const std::vector<const corpus::Report*>& train, const RunConfig& c) {
  std::vector<corpus::Report> reports;
  for (const auto* r : train) reports.push_back(*r);
  return corpus::Vocabulary::build(reports, static_cast<std::size_t>(c.integer("corpus.vocab_size")));
}

void write_split(Stage& st, const std::vector<corpus::Report>& reports) {
  std::vector<std::string> ids;
  for (const auto& r : reports) ids.push_back(r.id);
  index_by_id(reports);
  const auto& c = st.config();
  const auto split = split_corpus(ids, c.real("split.train"), c.real("split.validation"), c.real("split.test"), c.seed());
  st.open("paths.splits") << split_to_json(split).dump() << "\n";
  st.log() << "split " << split.train.size() << "/" << split.validation.size() << "/" << split.test.size() << "\n";
}

void require_corpus_source(const RunConfig& c, const std::string& command) {
  if (corpus_stage(c) != command) {
    throw Error(command + " writes the corpus but corpus.source is " + c.get("corpus.source") +
                "; set corpus.source=" + command);
  }
}

void cmd_prep(Stage& st) {
  const auto& c = st.config();
  require_corpus_source(c, "prep");
  std::ifstream in(st.input("paths.input"));
  corpus::FilterRules rules;
  rules.min_findings_words = static_cast<int>(c.integer("corpus.min_findings_words"));
  const corpus::Normalizer normalizer(normalizer_options(c));
  const auto result = corpus::ingest_and_filter(in, rules, normalizer);
  std::vector<corpus::Report> reports;
  for (const auto& raw : result.accepted) reports.push_back(normalizer.normalize(raw));
  {
    auto out = st.open("paths.corpus");
    corpus::write_reports(out, reports);
  }
  auto rej = st.open("paths.rejections");
  for (const auto& r : result.rejections) {
    rej << json{{"id", r.id}, {"line", r.line}, {"rule", corpus::to_string(r.rule)}, {"detail", r.detail}}.dump()
        << "\n";
  }
  st.log() << reports.size() << " reports kept, " << result.rejections.size() << " rejected\n";
  write_split(st, reports);
}

void cmd_synth(Stage& st) {
  const auto& c = st.config();
  require_corpus_source(c, "synth");
  const auto synth = corpus::generate_synthetic_corpus(synthetic_config(c), c.seed());
  const corpus::Normalizer normalizer(normalizer_options(c));
  std::vector<corpus::Report> reports;
  for (const auto& raw : synth.raw) reports.push_back(normalizer.normalize(raw));
  {
    auto out = st.open("paths.corpus");
    corpus::write_reports(out, reports);
  }
  auto ann = st.open("paths.annotations");
  for (const auto& a : synth.annotations) ann << corpus::annotation_to_json(a).dump() << "\n";
  labels::KeywordSet kw;
  for (const auto& k : synth.keywords) kw.keywords.push_back({k, 1.0});
  {
    auto out = st.open("paths.keywords");
    labels::write_keyword_file(out, kw);
  }
  st.log() << reports.size() << " synthetic reports, " << kw.keywords.size() << " concept keywords\n";
  write_split(st, reports);
}

void cmd_labels(Stage& st) {
  const auto& c = st.config();
  const auto src = corpus_stage(c);
  st.check_upstream("paths.corpus", src);
  st.check_upstream("paths.splits", src);
  const auto reports = load_corpus(st);
  const auto by_id = index_by_id(reports);
  labels::KeywordSet kw;
  const auto& mode = c.get("labels.keywords");
  if (mode == "score") {
    std::vector<corpus::Report> train;
    for (const auto* r : select(by_id, load_split(st).train, "the corpus")) train.push_back(*r);
    labels::KeywordScorerOptions opt;
    opt.max_order = static_cast<int>(c.integer("labels.keyword_max_order"));
    opt.document_frequency_cap = c.real("labels.keyword_df_cap");
    kw = labels::score_keywords(train, c.real("labels.keyword_threshold"), opt);
    {
    auto out = st.open("paths.keywords");
    labels::write_keyword_file(out, kw);
  }
  } else if (mode == "file") {
    kw = load_keywords(st);
  } else {
    throw Error("config: labels.keywords must be score or file, got '" + mode + "'");
  }
  const auto options = match_options(c);
  std::vector<labels::InterleavedLabels> out;
  for (const auto& r : reports) out.push_back(labels::build_labels(r, kw, options));
  {
    auto file = st.open("paths.labels");
    labels::write_labels(file, out);
  }
  st.log() << out.size() << " label sequences, " << kw.keywords.size() << " keywords\n";
}

struct Dataset {
  std::vector<corpus::Report> reports;
  std::map<std::string, const corpus::Report*> by_id;
  Split split;
  std::vector<labels::InterleavedLabels> labels;
  std::map<std::string, const labels::InterleavedLabels*> labels_by_id;
};

void load_dataset(const Stage& st, Dataset& d) {
  st.check_upstream("paths.labels", "labels");
  d.reports = load_corpus(st);
  d.by_id = index_by_id(d.reports);
  d.split = load_split(st);
  d.labels = load_labels(st);
  d.labels_by_id = index_by_id(d.labels);
}

std::vector<extractor::TrainingExample> training_examples(const Dataset& d, const std::vector<std::string>& ids,
                                                          const corpus::Vocabulary& vocab,
                                                          const extractor::ExtractorConfig& config) {
  std::vector<extractor::TrainingExample> out;
  for (const auto* r : select(d.by_id, ids, "the corpus")) {
    const auto* l = select(d.labels_by_id, {r->id}, "the labels").front();
    out.push_back({extractor::encode_report(*r, vocab, config), *l});
  }
  return out;
}

void cmd_pretrain_extractor(Stage& st) {
  const auto& c = st.config();
  Dataset d;
  load_dataset(st, d);
  const auto vocab = training_vocabulary(select(d.by_id, d.split.train, "the corpus"), c);
  const auto config = extractor_config(c, static_cast<int>(vocab.size()));
  const auto train = training_examples(d, d.split.train, vocab, config);
  const auto validation = training_examples(d, d.split.validation, vocab, config);
  nn::ParamStore params;
  Rng rng(c.seed());
  extractor::init_extractor(params, config, rng);
  if (const auto path = c.get("extractor.embeddings"); !path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read embeddings " + path);
    st.log() << "loaded " << extractor::load_word_embeddings(params, vocab, in) << " word vectors from " << path
             << "\n";
  }
  auto log = st.open("paths.extractor_log");
  const auto result = extractor::train_extractor_mle(params, config, train, validation, mle_options(c),
                                                     [&](const extractor::EpochLog& e) {
                                                       log << json{{"epoch", e.epoch},
                                                                   {"train_loss", e.train_loss},
                                                                   {"validation_loss", e.validation_loss}}
                                                                  .dump()
                                                           << "\n";
                                                       st.log() << "epoch " << e.epoch << " validation loss "
                                                                << e.validation_loss << "\n";
                                                     });
  auto ckpt = extractor::make_checkpoint(params, config, vocab);
  ckpt.meta["best_epoch"] = std::to_string(result.best_epoch);
  st.save(std::move(ckpt), "paths.extractor");
}

std::vector<abstractor::Example> abstractor_examples(const Dataset& d, const std::vector<std::string>& ids,
                                                     const corpus::Vocabulary& vocab,
                                                     const labels::MatchOptions& options) {
  std::vector<abstractor::Example> out;
  for (const auto* r : select(d.by_id, ids, "the corpus")) {
    for (const auto& p : abstractor::matched_pairs(*r, options)) {
      out.push_back(abstractor::make_example(p.source, p.target, vocab));
    }
  }
  return out;
}

void cmd_pretrain_abstractor(Stage& st) {
  const auto& c = st.config();
  Dataset d;
  load_dataset(st, d);
  const auto vocab = training_vocabulary(select(d.by_id, d.split.train, "the corpus"), c);
  const auto config = abstractor_config(c, static_cast<int>(vocab.size()));
  const auto options = match_options(c);
  const auto train = abstractor_examples(d, d.split.train, vocab, options);
  const auto validation = abstractor_examples(d, d.split.validation, vocab, options);
  nn::ParamStore params;
  Rng rng(c.seed() + 1);
  abstractor::init_abstractor(params, config, rng);
  auto log = st.open("paths.abstractor_log");
  const auto result = abstractor::train_abstractor(params, config, train, validation, abstractor_train_options(c),
                                                   [&](const abstractor::EpochLog& e) {
                                                     log << json{{"epoch", e.epoch},
                                                                 {"train_loss", e.train_loss},
                                                                 {"validation_nll", e.validation_nll}}
                                                                .dump()
                                                         << "\n";
                                                     st.log() << "epoch " << e.epoch << " validation nll "
                                                              << e.validation_nll << "\n";
                                                   });
  auto ckpt = abstractor::make_checkpoint(params, config, vocab);
  ckpt.meta["best_epoch"] = std::to_string(result.best_epoch);
  st.save(std::move(ckpt), "paths.abstractor");
}

struct Rewriting {
  nn::Checkpoint ckpt;
  abstractor::AbstractorConfig config;
  corpus::Vocabulary vocab;
};

Rewriting load_rewriter(const Stage& st) {
  Rewriting r;
  r.ckpt = st.load_checkpoint("paths.abstractor", "pretrain-abstractor");
  r.config = abstractor::checkpoint_config(r.ckpt);
  r.vocab = corpus::Vocabulary::from_tokens(r.ckpt.vocabulary);
  return r;
}

void cmd_train_dimac(Stage& st) {
  const auto& c = st.config();
  Dataset d;
  load_dataset(st, d);
  auto ext = st.load_checkpoint("paths.extractor", "pretrain-extractor");
  auto abs = load_rewriter(st);
  const auto config = extractor::checkpoint_config(ext);
  const auto vocab = corpus::Vocabulary::from_tokens(ext.vocabulary);
  const auto kw = load_keywords(st);
  const auto& mode = c.get("dimac.rewriter");
  const int beam = static_cast<int>(c.integer("dimac.rewrite_beam"));
  rl::Rewriter rewrite;
  if (mode == "abstractor") {
    rewrite = [&](const corpus::Sentence& s) {
      return abstractor::abstract_sentence(abs.ckpt.params, abs.config, abs.vocab, s, beam).tokens;
    };
  } else if (mode != "identity") {
    throw Error("config: dimac.rewriter must be abstractor or identity, got '" + mode + "'");
  }
  std::vector<rl::Episode> episodes;
  for (const auto* r : select(d.by_id, d.split.train, "the corpus")) {
    const auto* l = select(d.labels_by_id, {r->id}, "the labels").front();
    episodes.push_back(
        rl::make_episode(*r, *l, labels::compile_keyword_indices(*r, kw), vocab, config, rewrite));
  }
  st.log() << episodes.size() << " episodes\n";
  const auto dc = dimac_config(c);
  auto log = st.open("paths.dimac_log");
  nn::ParamStore params = ext.params;
  const int every = std::max(1, dc.updates / 10);
  rl::train_dimac(params, config, dc, episodes, [&](const rl::UpdateStats& s) {
    log << rl::stats_to_json(s).dump() << "\n";
    if (s.step % every == 0) st.log() << "update " << s.step << " mean r^g " << s.mean_rg << "\n";
  });
  auto ckpt = extractor::make_checkpoint(params, config, vocab, "dimac");
  ckpt.meta["dimac"] = rl::config_to_json(dc).dump();
  st.save(std::move(ckpt), "paths.dimac");
}

void cmd_summarize(Stage& st) {
  const auto& c = st.config();
  const bool use_dimac = c.get("summarize.model") == "dimac";
  st.check_upstream("paths.corpus", corpus_stage(c));
  auto model = use_dimac ? st.load_checkpoint("paths.dimac", "train-dimac")
                         : st.load_checkpoint("paths.extractor", "pretrain-extractor");
  auto abs = load_rewriter(st);
  const auto config = extractor::checkpoint_config(model);
  const auto vocab = corpus::Vocabulary::from_tokens(model.vocabulary);
  const auto reports = load_corpus(st);
  const auto by_id = index_by_id(reports);
  const auto ids = split_ids(load_split(st), c.get("summarize.split"));
  const int beam = static_cast<int>(c.integer("summarize.beam"));
  auto pred = st.open("paths.predictions");
  auto traces = st.open("paths.traces");
  for (const auto* r : select(by_id, ids, "the corpus")) {
    const auto enc = extractor::encode_report(*r, vocab, config);
    const auto ex = extractor::extract(model.params, config, enc, extractor::Mode::kGreedy);
    Prediction p;
    p.id = r->id;
    for (int s : ex.sentences) {
      Prediction::Sentence out;
      out.text = abstractor::abstract_sentence(abs.ckpt.params, abs.config, abs.vocab,
                                               r->findings[static_cast<std::size_t>(s)], beam)
                     .tokens;
      out.source_sentence = s;
      for (int w : ex.words) {
        if (enc.word_sentence[static_cast<std::size_t>(w)] == s) out.keywords.push_back(w);
      }
      p.impressions.push_back(std::move(out));
    }
    pred << prediction_to_json(p).dump() << "\n";
    traces << extractor::trace_to_json(r->id, ex).dump() << "\n";
  }
  st.log() << ids.size() << " reports summarized\n";
}

rouge::Aggregation aggregation(const RunConfig& c) {
  const auto& a = c.get("rouge.aggregation");
  if (a == "flattened") return rouge::Aggregation::kFlattened;
  if (a == "union") return rouge::Aggregation::kUnionLcs;
  throw Error("config: rouge.aggregation must be flattened or union, got '" + a + "'");
}

void cmd_evaluate(Stage& st) {
  const auto& c = st.config();
  const auto pred_path = st.input("paths.predictions");
  std::string model = "predictions";
  if (fs::exists(Stage::sidecar(pred_path))) {
    st.check_upstream("paths.predictions", "summarize");
    model = c.get("summarize.model") == "dimac" ? "DiMAC" : "Extractor";
  } else {
    st.log() << "predictions carry no stage record; evaluating as given\n";
  }
  std::ifstream in(pred_path);
  const auto predictions = read_predictions(in);
  const auto result = evaluate_predictions(predictions, load_corpus(st), aggregation(c));
  st.open("paths.evaluation") << evaluation_to_json(result).dump(2) << "\n";
  const auto table = evaluation_table(result, model);
  st.open("paths.evaluation_table") << table;
  st.log() << result.reports << " reports\n" << table;
}

void cmd_stats(Stage& st) {
  const auto& c = st.config();
  st.check_upstream("paths.corpus", corpus_stage(c));
  const auto stats = corpus::corpus_stats(load_corpus(st));
  st.open("paths.stats") << corpus::stats_to_json(stats).dump(2) << "\n";
  st.log() << "\n" << corpus::stats_table(stats);
}

}  // namespace

CommandResult run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  Stage st(name, config, log);
  if (name == "prep") {
    cmd_prep(st);
  } else if (name == "synth") {
    cmd_synth(st);
  } else if (name == "labels") {
    cmd_labels(st);
  } else if (name == "pretrain-extractor") {
    cmd_pretrain_extractor(st);
  } else if (name == "pretrain-abstractor") {
    cmd_pretrain_abstractor(st);
  } else if (name == "train-dimac") {
    cmd_train_dimac(st);
  } else if (name == "summarize") {
    cmd_summarize(st);
  } else if (name == "evaluate") {
    cmd_evaluate(st);
  } else if (name == "stats") {
    cmd_stats(st);
  } else {
    throw Error("unknown command '" + name + "'");
  }
  st.seal();
  return {0, st.artifacts()};
}

}  // namespace dimac::pipeline
