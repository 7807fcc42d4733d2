#include "dimac/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <regex>
#include <set>
#include <sstream>

#include "dimac/error.hpp"
#include "dimac/rng.hpp"

namespace dimac::corpus {

using nlohmann::json;

bool operator==(const FlatToken& a, const FlatToken& b) {
  return a.token == b.token && a.sentence == b.sentence && a.position == b.position;
}

void Report::rebuild_flat() {
  flat_findings.clear();
  for (std::size_t s = 0; s < findings.size(); ++s) {
    for (std::size_t p = 0; p < findings[s].size(); ++p) {
      flat_findings.push_back(FlatToken{findings[s][p], static_cast<int>(s), static_cast<int>(p)});
    }
  }
}

std::vector<int> Report::sentence_offsets() const {
  std::vector<int> out;
  int offset = 0;
  for (const auto& s : findings) {
    out.push_back(offset);
    offset += static_cast<int>(s.size());
  }
  return out;
}

std::vector<Sentence> Report::regroup_flat() const {
  std::vector<Sentence> out;
  for (const auto& t : flat_findings) {
    if (t.sentence < 0) throw Error("regroup_flat: negative sentence index");
    if (static_cast<std::size_t>(t.sentence) >= out.size()) out.resize(static_cast<std::size_t>(t.sentence) + 1);
    out[static_cast<std::size_t>(t.sentence)].push_back(t.token);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '?' || c == '!'; }

bool is_punct_char(char c) {
  static const std::string kPunct = ".,;:!?()[]{}\"'";
  return kPunct.find(c) != std::string::npos;
}

const std::regex& date_pattern() {
  static const std::regex re(R"(^\d{1,4}[/-]\d{1,2}[/-]\d{1,4}$)");
  return re;
}

const std::regex& number_pattern() {
  static const std::regex re(R"(^[+-]?\d+([.,]\d+)*%?$)");
  return re;
}

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

bool is_punctuation_token(const std::string& token) {
  return !token.empty() &&
         std::all_of(token.begin(), token.end(), [](char c) { return is_punct_char(c); });
}

int count_words(const std::vector<Sentence>& sentences) {
  int n = 0;
  for (const auto& s : sentences) {
    for (const auto& t : s) {
      if (!is_punctuation_token(t)) ++n;
    }
  }
  return n;
}

std::vector<std::string> Normalizer::split_sentences(const std::string& text) const {
  std::vector<std::string> out;
  std::string current;
  for (std::size_t i = 0; i < text.size(); ++i) {
    current.push_back(text[i]);
    const bool boundary = is_terminal(text[i]) && (i + 1 == text.size() || is_space(text[i + 1]));
    if (boundary) {
      out.push_back(current);
      current.clear();
    }
  }
  out.push_back(current);
  std::vector<std::string> trimmed;
  for (auto& s : out) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) continue;
    const auto e = s.find_last_not_of(" \t\r\n");
    trimmed.push_back(s.substr(b, e - b + 1));
  }
  return trimmed;
}

std::vector<std::string> Normalizer::tokenize(const std::string& sentence) const {
  std::vector<std::string> out;
  std::istringstream ss(sentence);
  std::string chunk;
  auto emit = [&](std::string tok) {
    if (tok.empty()) return;
    tok = lowercase(std::move(tok));
    if (std::regex_match(tok, date_pattern())) {
      tok = "<date>";
    } else if (std::regex_match(tok, number_pattern())) {
      tok = "<num>";
    } else if (lemmatizer_ && !is_punctuation_token(tok)) {
      tok = lemmatizer_(tok);
    }
    if (!tok.empty()) out.push_back(std::move(tok));
  };
  while (ss >> chunk) {
    std::size_t b = 0;
    std::size_t e = chunk.size();
    std::vector<std::string> leading;
    std::vector<std::string> trailing;
    while (b < e && is_punct_char(chunk[b])) leading.emplace_back(1, chunk[b++]);
    while (e > b && is_punct_char(chunk[e - 1])) trailing.emplace_back(1, chunk[--e]);
    for (auto& t : leading) emit(t);
    emit(chunk.substr(b, e - b));
    for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) emit(*it);
  }
  return out;
}

std::vector<Sentence> Normalizer::sentences(const std::string& text) const {
  std::vector<Sentence> out;
  for (const auto& s : split_sentences(text)) {
    auto toks = tokenize(s);
    if (!toks.empty()) out.push_back(std::move(toks));
  }
  return out;
}

Report Normalizer::normalize(const RawReport& raw) const {
  Report r;
  r.id = raw.id;
  auto truncate = [&](std::vector<Sentence> sents) {
    if (static_cast<int>(sents.size()) > options_.max_sentences) {
      sents.resize(static_cast<std::size_t>(options_.max_sentences));
    }
    int budget = options_.max_words;
    std::vector<Sentence> kept;
    for (auto& s : sents) {
      if (budget <= 0) break;
      if (static_cast<int>(s.size()) > budget) s.resize(static_cast<std::size_t>(budget));
      budget -= static_cast<int>(s.size());
      kept.push_back(std::move(s));
    }
    return kept;
  };
  r.findings = truncate(sentences(raw.findings_text));
  r.impressions = truncate(sentences(raw.impressions_text));
  r.rebuild_flat();
  return r;
}

// ---------------------------------------------------------------------------
// Filtering

std::string to_string(RejectRule rule) {
  switch (rule) {
    case RejectRule::kMissingSection: return "a:missing_section";
    case RejectRule::kFindingsTooShort: return "b:findings_too_short";
    case RejectRule::kImpressionsLonger: return "c:impressions_longer";
    case RejectRule::kMalformed: return "malformed";
  }
  return "unknown";
}

std::optional<RejectRule> check_report(const RawReport& raw, const FilterRules& rules,
                                       const Normalizer& normalizer) {
  const auto findings = normalizer.sentences(raw.findings_text);
  const auto impressions = normalizer.sentences(raw.impressions_text);
  if (findings.empty() || impressions.empty()) return RejectRule::kMissingSection;
  const int fw = count_words(findings);
  const int iw = count_words(impressions);
  if (fw < rules.min_findings_words) return RejectRule::kFindingsTooShort;
  if (fw < iw || findings.size() < impressions.size()) return RejectRule::kImpressionsLonger;
  return std::nullopt;
}

IngestResult filter_reports(const std::vector<RawReport>& reports, const FilterRules& rules,
                            const Normalizer& normalizer) {
  IngestResult result;
  for (const auto& r : reports) {
    if (auto rule = check_report(r, rules, normalizer)) {
      result.rejections.push_back(Rejection{r.id, 0, *rule, ""});
    } else {
      result.accepted.push_back(r);
    }
  }
  return result;
}

IngestResult ingest_and_filter(std::istream& jsonl, const FilterRules& rules,
                               const Normalizer& normalizer) {
  IngestResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(jsonl, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    RawReport raw;
    try {
      const json j = json::parse(line);
      if (!j.is_object() || !j.contains("id") || !j["id"].is_string() ||
          j["id"].get<std::string>().empty()) {
        result.rejections.push_back(Rejection{"", line_no, RejectRule::kMalformed, "missing id"});
        continue;
      }
      raw.id = j["id"].get<std::string>();
      if (j.contains("findings") && j["findings"].is_string()) raw.findings_text = j["findings"];
      if (j.contains("impressions") && j["impressions"].is_string()) {
        raw.impressions_text = j["impressions"];
      }
    } catch (const json::exception& e) {
      result.rejections.push_back(Rejection{"", line_no, RejectRule::kMalformed, e.what()});
      continue;
    }
    if (auto rule = check_report(raw, rules, normalizer)) {
      result.rejections.push_back(Rejection{raw.id, line_no, *rule, ""});
    } else {
      result.accepted.push_back(std::move(raw));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Vocabulary

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> kTokens = {"<pad>", "<unk>", "<start>", "<end>"};
  return kTokens;
}

Vocabulary::Vocabulary() {
  for (const auto& t : reserved_tokens()) add(t);
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token) > 0) throw Error("vocabulary: duplicate token " + token);
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw Error("vocabulary: token list does not start with the reserved tokens");
  }
  Vocabulary v;
  for (std::size_t i = reserved.size(); i < tokens.size(); ++i) v.add(tokens[i]);
  return v;
}

Vocabulary Vocabulary::build(const std::vector<Report>& corpus, std::size_t cap) {
  if (corpus.empty()) throw Error("build_vocabulary: empty corpus");
  if (cap < 1) throw Error("build_vocabulary: cap must be at least 1");
  std::map<std::string, std::size_t> counts;
  const auto& reserved = reserved_tokens();
  auto count = [&](const std::vector<Sentence>& sents) {
    for (const auto& s : sents) {
      for (const auto& t : s) {
        if (std::find(reserved.begin(), reserved.end(), t) == reserved.end()) ++counts[t];
      }
    }
  };
  for (const auto& r : corpus) {
    count(r.findings);
    count(r.impressions);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > cap) ranked.resize(cap);
  Vocabulary v;
  for (const auto& [tok, n] : ranked) v.add(tok);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("vocabulary: id out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  if (xs.empty()) return out;
  double s = 0.0;
  for (double x : xs) s += x;
  out.mean = s / static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - out.mean) * (x - out.mean);
  out.stddev = std::sqrt(v / static_cast<double>(xs.size()));
  return out;
}

SectionStats section_stats(const std::vector<Report>& corpus, bool findings) {
  std::vector<double> per_sentence;
  std::vector<double> sentences;
  std::vector<double> words;
  for (const auto& r : corpus) {
    const auto& sec = findings ? r.findings : r.impressions;
    double total = 0.0;
    for (const auto& s : sec) {
      per_sentence.push_back(static_cast<double>(s.size()));
      total += static_cast<double>(s.size());
    }
    sentences.push_back(static_cast<double>(sec.size()));
    words.push_back(total);
  }
  return SectionStats{mean_std(per_sentence), mean_std(sentences), mean_std(words)};
}

}  // namespace

CorpusStats corpus_stats(const std::vector<Report>& corpus) {
  if (corpus.empty()) throw Error("corpus_stats: empty corpus");
  CorpusStats st;
  st.reports = corpus.size();
  st.findings = section_stats(corpus, true);
  st.impressions = section_stats(corpus, false);
  return st;
}

json stats_to_json(const CorpusStats& stats) {
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.stddev}}; };
  json j;
  j["reports"] = stats.reports;
  j["#w per sentence"] = {{"findings", ms(stats.findings.words_per_sentence)},
                          {"impressions", ms(stats.impressions.words_per_sentence)}};
  j["#s per report"] = {{"findings", ms(stats.findings.sentences_per_report)},
                        {"impressions", ms(stats.impressions.sentences_per_report)}};
  j["#w per report"] = {{"findings", ms(stats.findings.words_per_report)},
                        {"impressions", ms(stats.impressions.words_per_report)}};
  return j;
}

std::string stats_table(const CorpusStats& stats) {
  std::ostringstream os;
  auto cell = [](const MeanStd& m) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << m.mean << " (" << std::setw(5) << std::setfill('0')
      << m.stddev << ")";
    return c.str();
  };
  os << std::left << std::setw(18) << "" << std::setw(18) << "FINDINGS" << "IMPRESSIONS\n";
  auto row = [&](const char* name, const MeanStd& f, const MeanStd& i) {
    os << std::left << std::setw(18) << name << std::setw(18) << cell(f) << cell(i) << "\n";
  };
  row("#w per sentence", stats.findings.words_per_sentence, stats.impressions.words_per_sentence);
  row("#s per report", stats.findings.sentences_per_report, stats.impressions.sentences_per_report);
  row("#w per report", stats.findings.words_per_report, stats.impressions.words_per_report);
  os << "reports: " << stats.reports << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic corpora

namespace {

const std::vector<std::string>& base_fillers() {
  static const std::vector<std::string> kWords = {
      "there", "is", "no", "the", "of", "and", "with", "in", "are", "seen", "within",
      "normal", "limits", "size", "right", "left", "upper", "lower", "lobe", "lung",
      "heart", "mediastinum", "contour", "stable", "unchanged", "prior", "study",
      "again", "noted", "visualized", "appears", "demonstrates", "measures", "region",
      "aspect", "anterior", "posterior", "lateral", "medial", "segment", "wall",
      "surface", "margin", "tissue", "soft", "bone", "osseous", "structures", "intact",
      "view", "frontal", "image", "field", "base", "apex", "level", "portion", "chest",
      "abdomen", "pelvis"};
  return kWords;
}

const std::vector<std::string>& base_concepts() {
  static const std::vector<std::string> kWords = {
      "effusion", "nodule", "opacity", "consolidation", "pneumothorax", "atelectasis",
      "edema", "cardiomegaly", "fracture", "hemorrhage", "mass", "lesion", "calcification",
      "thickening", "collection", "infiltrate", "emphysema", "fibrosis", "adenopathy",
      "lymphadenopathy", "hernia", "aneurysm", "stenosis", "embolism", "abscess",
      "cyst", "granuloma", "metastasis", "laceration", "contusion", "hematoma",
      "dissection", "thrombus", "occlusion", "infarct", "shift", "herniation",
      "scarring", "bronchiectasis", "pneumonia"};
  return kWords;
}

// Deterministic pronounceable alphabetic words, used when a configuration asks
// for more distinct tokens than the base lists hold.
std::string generated_word(int k) {
  static const char* kSyl[] = {"ka", "lo", "mi", "ne", "ru", "ta", "vi", "so", "de", "pa",
                               "gu", "be", "fo", "zi", "ho", "ly"};
  std::string w;
  int x = k;
  for (int i = 0; i < 3 || x > 0; ++i) {
    w += kSyl[x % 16];
    x /= 16;
  }
  return w;
}

std::vector<std::string> make_words(const std::vector<std::string>& base, int count,
                                    std::set<std::string>& used, int& gen_counter,
                                    const std::string& suffix) {
  std::vector<std::string> out;
  for (const auto& w : base) {
    if (static_cast<int>(out.size()) >= count) break;
    if (used.insert(w).second) out.push_back(w);
  }
  while (static_cast<int>(out.size()) < count) {
    std::string w = generated_word(gen_counter++) + suffix;
    if (used.insert(w).second) out.push_back(w);
  }
  return out;
}

}  // namespace

std::string concept_synonym(const std::string& concept_token) {
  if (!concept_token.empty() && concept_token.back() == 's') return concept_token + "es";
  return concept_token + "s";
}

SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& config, std::uint64_t seed) {
  const SyntheticConfig& c = config;
  if (c.reports < 1) throw Error("synthetic: report count must be positive");
  if (c.min_sentences < 1 || c.max_sentences < c.min_sentences) {
    throw Error("synthetic: invalid sentence-count range");
  }
  if (c.min_sentence_length < 1 || c.max_sentence_length < c.min_sentence_length) {
    throw Error("synthetic: invalid sentence-length range");
  }
  if (c.salient_sentences < 1 || c.salient_sentences > c.min_sentences) {
    throw Error("synthetic: planted salient count " + std::to_string(c.salient_sentences) +
                " exceeds the sentence range");
  }
  if (c.min_sentences * c.min_sentence_length < 3) {
    throw Error("synthetic: reports would fall below the 3-word findings minimum");
  }
  if (c.filler_vocabulary < 1 || c.concept_vocabulary < 1) {
    throw Error("synthetic: vocabularies must be nonempty");
  }
  if (c.keyword_density < 0.0 || c.keyword_density > 1.0 || c.dropout < 0.0 || c.dropout >= 1.0 ||
      c.synonym_swap < 0.0 || c.synonym_swap > 1.0) {
    throw Error("synthetic: probabilities out of range");
  }

  std::set<std::string> used;
  int gen = 0;
  const auto concepts = make_words(base_concepts(), c.concept_vocabulary, used, gen, "");
  for (const auto& w : concepts) used.insert(concept_synonym(w));
  const auto fillers = make_words(base_fillers(), c.filler_vocabulary, used, gen, "");

  Rng rng(seed);
  SyntheticCorpus out;
  std::set<std::string> concepts_used;
  const Normalizer normalizer;
  for (int r = 0; r < c.reports; ++r) {
    std::ostringstream id;
    id << "synth-" << std::setw(5) << std::setfill('0') << r;
    const int n = rng.uniform_int(c.min_sentences, c.max_sentences);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
    std::vector<int> planted(order.begin(), order.begin() + c.salient_sentences);
    std::sort(planted.begin(), planted.end());

    Report report;
    report.id = id.str();
    SaliencyAnnotation ann;
    ann.id = report.id;
    ann.salient_sentences = planted;
    std::vector<std::vector<bool>> is_concept(static_cast<std::size_t>(n));
    for (int s = 0; s < n; ++s) {
      const int len = rng.uniform_int(c.min_sentence_length, c.max_sentence_length);
      Sentence sent;
      std::vector<bool> flags(static_cast<std::size_t>(len), false);
      if (std::binary_search(planted.begin(), planted.end(), s)) {
        const int k = std::clamp(static_cast<int>(std::lround(c.keyword_density * len)), 1, len);
        std::vector<int> pos(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) pos[static_cast<std::size_t>(i)] = i;
        rng.shuffle(pos);
        for (int i = 0; i < k; ++i) flags[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])] = true;
      }
      for (int i = 0; i < len; ++i) {
        if (flags[static_cast<std::size_t>(i)]) {
          const auto& w = concepts[static_cast<std::size_t>(rng.uniform_int(0, c.concept_vocabulary - 1))];
          concepts_used.insert(w);
          sent.push_back(w);
        } else {
          sent.push_back(fillers[static_cast<std::size_t>(rng.uniform_int(0, c.filler_vocabulary - 1))]);
        }
      }
      sent.push_back(".");
      report.findings.push_back(std::move(sent));
      is_concept[static_cast<std::size_t>(s)] = std::move(flags);
    }
    report.rebuild_flat();
    const auto offsets = report.sentence_offsets();
    for (int s : planted) {
      const auto& flags = is_concept[static_cast<std::size_t>(s)];
      for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) ann.salient_words.push_back(offsets[static_cast<std::size_t>(s)] + static_cast<int>(i));
      }
    }

    // Impressions paraphrase each planted sentence in order.
    for (int s : planted) {
      const auto& src = report.findings[static_cast<std::size_t>(s)];
      const auto& flags = is_concept[static_cast<std::size_t>(s)];
      Sentence para;
      std::string first_concept;
      for (std::size_t i = 0; i + 1 < src.size(); ++i) {
        const bool drop = rng.bernoulli(c.dropout);
        const bool swap = flags[i] && rng.bernoulli(c.synonym_swap);
        if (flags[i] && first_concept.empty()) first_concept = src[i];
        if (drop) continue;
        para.push_back(swap ? concept_synonym(src[i]) : src[i]);
      }
      if (para.empty()) para.push_back(first_concept.empty() ? src.front() : first_concept);
      para.push_back(".");
      report.impressions.push_back(std::move(para));
    }

    auto render = [](const std::vector<Sentence>& sents) {
      std::string text;
      for (const auto& s : sents) {
        for (const auto& t : s) {
          if (!text.empty()) text += ' ';
          text += t;
        }
      }
      return text;
    };
    RawReport raw{report.id, render(report.findings), render(report.impressions)};
    out.raw.push_back(std::move(raw));
    out.reports.push_back(std::move(report));
    out.annotations.push_back(std::move(ann));
  }
  out.keywords.assign(concepts_used.begin(), concepts_used.end());
  return out;
}

// ---------------------------------------------------------------------------
// JSON-lines I/O

json raw_to_json(const RawReport& r) {
  return json{{"id", r.id}, {"findings", r.findings_text}, {"impressions", r.impressions_text}};
}

json report_to_json(const Report& r) {
  return json{{"id", r.id}, {"findings", r.findings}, {"impressions", r.impressions}};
}

Report report_from_json(const json& j) {
  Report r;
  r.id = j.at("id").get<std::string>();
  r.findings = j.at("findings").get<std::vector<Sentence>>();
  r.impressions = j.at("impressions").get<std::vector<Sentence>>();
  r.rebuild_flat();
  return r;
}

json annotation_to_json(const SaliencyAnnotation& a) {
  return json{{"id", a.id}, {"salient_sentences", a.salient_sentences}, {"salient_words", a.salient_words}};
}

SaliencyAnnotation annotation_from_json(const json& j) {
  return SaliencyAnnotation{j.at("id").get<std::string>(),
                            j.at("salient_sentences").get<std::vector<int>>(),
                            j.at("salient_words").get<std::vector<int>>()};
}

std::vector<Report> read_reports(std::istream& in) {
  std::vector<Report> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    out.push_back(report_from_json(json::parse(line)));
  }
  return out;
}

void write_reports(std::ostream& out, const std::vector<Report>& reports) {
  for (const auto& r : reports) out << report_to_json(r).dump() << "\n";
}

std::vector<RawReport> read_raw_reports(std::istream& in) {
  std::vector<RawReport> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const json j = json::parse(line);
    out.push_back(RawReport{j.at("id").get<std::string>(), j.value("findings", ""),
                            j.value("impressions", "")});
  }
  return out;
}

}  // namespace dimac::corpus
