#include "dimac/labels.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "dimac/error.hpp"
#include "dimac/rouge.hpp"

namespace dimac::labels {

using nlohmann::json;

double sentence_similarity(const Sentence& findings_sentence, const Sentence& impressions_sentence,
                           const MatchOptions& options) {
  const auto s = rouge::rouge_l(findings_sentence, impressions_sentence);
  if (options.pure_recall) return s.recall;
  return rouge::f_beta(s.recall, s.precision, options.beta);
}

SentenceMatch greedy_match(const std::vector<Sentence>& findings,
                           const std::vector<Sentence>& impressions, const MatchOptions& options) {
  if (findings.empty() || impressions.empty()) {
    throw Error("greedy_match: findings and impressions must be nonempty");
  }
  SentenceMatch match;
  std::vector<bool> used(findings.size(), false);
  for (const auto& imp : impressions) {
    if (match.indices.size() == findings.size()) break;
    int best = -1;
    double best_score = -1.0;
    for (std::size_t i = 0; i < findings.size(); ++i) {
      if (used[i]) continue;
      const double sc = sentence_similarity(findings[i], imp, options);
      if (sc > best_score) {
        best_score = sc;
        best = static_cast<int>(i);
      }
    }
    used[static_cast<std::size_t>(best)] = true;
    match.indices.push_back(best);
    match.scores.push_back(best_score);
  }
  return match;
}

// ---------------------------------------------------------------------------

namespace {

bool alphabetic(const std::string& t) {
  return !t.empty() &&
         std::all_of(t.begin(), t.end(), [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; });
}

std::vector<std::string> split_phrase(const std::string& phrase) {
  std::vector<std::string> out;
  std::istringstream ss(phrase);
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

std::string join(const std::vector<std::string>& toks, std::size_t b, std::size_t e) {
  std::string out;
  for (std::size_t i = b; i < e; ++i) {
    if (i > b) out += ' ';
    out += toks[i];
  }
  return out;
}

}  // namespace

KeywordSet score_keywords(const std::vector<Report>& corpus, double threshold,
                          const KeywordScorerOptions& options) {
  if (corpus.empty()) throw Error("score_keywords: empty corpus");
  if (options.max_order < 1) throw Error("score_keywords: max_order must be at least 1");
  std::map<std::string, double> count;
  std::map<std::string, int> docs;
  std::vector<double> order_totals(static_cast<std::size_t>(options.max_order) + 1, 0.0);
  for (const auto& r : corpus) {
    std::set<std::string> seen;
    auto scan = [&](const std::vector<Sentence>& sents) {
      for (const auto& s : sents) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          for (int n = 1; n <= options.max_order && i + static_cast<std::size_t>(n) <= s.size(); ++n) {
            if (!alphabetic(s[i + static_cast<std::size_t>(n) - 1])) break;
            const std::string g = join(s, i, i + static_cast<std::size_t>(n));
            count[g] += 1.0;
            order_totals[static_cast<std::size_t>(n)] += 1.0;
            seen.insert(g);
          }
        }
      }
    };
    scan(r.findings);
    scan(r.impressions);
    for (const auto& g : seen) ++docs[g];
  }

  KeywordSet out;
  out.threshold = threshold;
  const double reports = static_cast<double>(corpus.size());
  for (const auto& [phrase, c] : count) {
    if (static_cast<double>(docs[phrase]) / reports > options.document_frequency_cap) continue;
    const auto toks = split_phrase(phrase);
    double assoc = 1.0;
    if (toks.size() > 1) {
      const double p = c / order_totals[toks.size()];
      double log_indep = 0.0;
      for (const auto& t : toks) log_indep += std::log(count.at(t) / order_totals[1]);
      const double denom = -std::log(p);
      assoc = denom > 0.0 ? (std::log(p) - log_indep) / denom : 1.0;
      assoc = std::clamp(assoc, 0.0, 1.0);
    }
    const double quality = (1.0 - 1.0 / c) * assoc;
    if (quality >= threshold && quality > 0.0) out.keywords.push_back(Keyword{phrase, quality});
  }
  std::stable_sort(out.keywords.begin(), out.keywords.end(),
                   [](const Keyword& a, const Keyword& b) { return a.score > b.score; });
  return out;
}

KeywordSet read_keyword_file(std::istream& in, double threshold) {
  KeywordSet out;
  out.threshold = threshold;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error("keyword file line " + std::to_string(line_no) + ": expected phrase<TAB>score");
    }
    const auto toks = split_phrase(line.substr(0, tab));
    std::string phrase = join(toks, 0, toks.size());
    for (char& ch : phrase) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    double score = 0.0;
    try {
      score = std::stod(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error("keyword file line " + std::to_string(line_no) + ": bad score");
    }
    if (phrase.empty()) continue;
    if (score >= threshold) out.keywords.push_back(Keyword{phrase, score});
  }
  return out;
}

void write_keyword_file(std::ostream& out, const KeywordSet& keywords) {
  for (const auto& k : keywords.keywords) {
    std::ostringstream score;
    score << std::setprecision(6) << k.score;
    out << k.phrase << '\t' << score.str() << '\n';
  }
}

std::vector<int> compile_keyword_indices(const Report& report, const KeywordSet& keywords) {
  std::vector<std::vector<std::string>> phrases;
  for (const auto& k : keywords.keywords) {
    auto toks = split_phrase(k.phrase);
    if (!toks.empty()) phrases.push_back(std::move(toks));
  }
  const auto& flat = report.flat_findings;
  std::vector<bool> hit(flat.size(), false);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (const auto& p : phrases) {
      if (i + p.size() > flat.size()) continue;
      bool ok = true;
      for (std::size_t k = 0; k < p.size() && ok; ++k) {
        ok = flat[i + k].token == p[k] && flat[i + k].sentence == flat[i].sentence;
      }
      if (ok) {
        for (std::size_t k = 0; k < p.size(); ++k) hit[i + k] = true;
      }
    }
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < hit.size(); ++i) {
    if (hit[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------

InterleavedLabels interleave(const SentenceMatch& match, const std::vector<int>& keyword_indices,
                             const Report& report) {
  const int n = report.sentence_count();
  const int m = report.word_count();
  for (int w : keyword_indices) {
    if (w < 0 || w >= m) throw Error("interleave: word index " + std::to_string(w) + " out of range");
  }
  InterleavedLabels out;
  out.id = report.id;
  std::set<int> seen;
  for (int s : match.indices) {
    if (s < 0 || s >= n) throw Error("interleave: sentence index " + std::to_string(s) + " out of range");
    if (!seen.insert(s).second) throw Error("interleave: repeated sentence index " + std::to_string(s));
    std::vector<int> inside;
    for (int w : keyword_indices) {
      if (report.flat_findings[static_cast<std::size_t>(w)].sentence == s) inside.push_back(w);
    }
    std::sort(inside.begin(), inside.end());
    inside.erase(std::unique(inside.begin(), inside.end()), inside.end());
    for (int w : inside) out.steps.push_back(LabelTuple{1, kNone, w});
    out.steps.push_back(LabelTuple{0, s, kNone});
  }
  out.steps.push_back(LabelTuple{0, n, kNone});
  return out;
}

void validate_labels(const InterleavedLabels& labels, const Report& report) {
  const int n = report.sentence_count();
  const int m = report.word_count();
  auto fail = [&](std::size_t j, const std::string& what) {
    throw Error("labels " + labels.id + " step " + std::to_string(j) + ": " + what);
  };
  if (labels.steps.empty()) fail(0, "empty sequence");
  std::set<int> sentences;
  std::vector<int> block;
  for (std::size_t j = 0; j < labels.steps.size(); ++j) {
    const auto& t = labels.steps[j];
    if ((t.s == kNone) == (t.w == kNone)) fail(j, "exactly one of sentence/word must be set");
    if ((t.q == 1) != (t.w != kNone)) fail(j, "switch disagrees with the populated index");
    if (t.q == 1) {
      if (t.w < 0 || t.w >= m) fail(j, "word index out of range");
      if (!block.empty() && t.w <= block.back()) fail(j, "word indices not increasing");
      block.push_back(t.w);
      continue;
    }
    if (t.s < 0 || t.s > n) fail(j, "sentence index out of range");
    const bool is_end = t.s == n;
    if (is_end != (j + 1 == labels.steps.size())) fail(j, "END must be the final step");
    if (is_end && !block.empty()) fail(j, "word steps before END");
    for (int w : block) {
      if (report.flat_findings[static_cast<std::size_t>(w)].sentence != t.s) {
        fail(j, "word outside its sentence block");
      }
    }
    if (!is_end && !sentences.insert(t.s).second) fail(j, "repeated sentence index");
    block.clear();
  }
}

std::vector<int> sentence_stream(const InterleavedLabels& labels) {
  std::vector<int> out;
  for (std::size_t j = 0; j + 1 < labels.steps.size(); ++j) {
    if (labels.steps[j].q == 0) out.push_back(labels.steps[j].s);
  }
  return out;
}

std::vector<int> word_stream(const InterleavedLabels& labels) {
  std::vector<int> out;
  for (const auto& t : labels.steps) {
    if (t.q == 1) out.push_back(t.w);
  }
  return out;
}

InterleavedLabels build_labels(const Report& report, const KeywordSet& keywords,
                               const MatchOptions& options) {
  const auto match = greedy_match(report.findings, report.impressions, options);
  return interleave(match, compile_keyword_indices(report, keywords), report);
}

json labels_to_json(const InterleavedLabels& labels) {
  json steps = json::array();
  for (const auto& t : labels.steps) steps.push_back({t.q, t.s, t.w});
  return json{{"id", labels.id}, {"labels", steps}};
}

InterleavedLabels labels_from_json(const json& j) {
  InterleavedLabels out;
  out.id = j.at("id").get<std::string>();
  for (const auto& t : j.at("labels")) {
    if (!t.is_array() || t.size() != 3) throw Error("labels " + out.id + ": malformed tuple");
    out.steps.push_back(LabelTuple{t[0].get<int>(), t[1].get<int>(), t[2].get<int>()});
  }
  return out;
}

std::vector<InterleavedLabels> read_labels(std::istream& in) {
  std::vector<InterleavedLabels> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    out.push_back(labels_from_json(json::parse(line)));
  }
  return out;
}

void write_labels(std::ostream& out, const std::vector<InterleavedLabels>& labels) {
  for (const auto& l : labels) out << labels_to_json(l).dump() << '\n';
}

}  // namespace dimac::labels
