#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "dimac/error.hpp"
#include "dimac/labels.hpp"
#include "dimac/rng.hpp"
#include "oracles.hpp"
#include "table1_fixture.hpp"

using namespace dimac;
using namespace dimac::labels;
using corpus::Report;
using corpus::Sentence;

namespace {

Report make_report(std::vector<Sentence> findings, std::vector<Sentence> impressions) {
  Report r;
  r.id = "r";
  r.findings = std::move(findings);
  r.impressions = std::move(impressions);
  r.rebuild_flat();
  return r;
}

KeywordSet keywords(std::initializer_list<const char*> phrases) {
  KeywordSet k;
  for (const char* p : phrases) k.keywords.push_back(Keyword{p, 1.0});
  return k;
}

std::vector<Sentence> random_sentences(Rng& rng, int min_count, int max_count) {
  std::vector<Sentence> out(static_cast<std::size_t>(rng.uniform_int(min_count, max_count)));
  for (auto& s : out) {
    s.resize(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (auto& t : s) t = std::string(1, static_cast<char>('a' + rng.uniform_int(0, 3)));
  }
  return out;
}

}  // namespace

TEST_CASE("greedy_match examples") {
  const std::vector<Sentence> findings{{"no", "effusion"}, {"heart", "normal"}, {"mild", "edema", "seen"},
                                       {"large", "mass", "in", "lobe"}};
  auto m = greedy_match(findings, {{"large", "mass", "in", "lobe"}});
  REQUIRE(m.indices.size() == 1);
  CHECK(m.indices[0] == 3);
  CHECK(m.scores[0] == doctest::Approx(1.0));

  auto two = greedy_match({{"a"}, {"b"}, {"c"}}, {{"c"}, {"c"}});
  CHECK(two.indices == std::vector<int>{2, 0});

  auto exhausted = greedy_match({{"a"}, {"b"}}, {{"a"}, {"b"}, {"c"}});
  CHECK(exhausted.indices == std::vector<int>{0, 1});
  CHECK_THROWS_AS(greedy_match({}, {{"a"}}), Error);
}

TEST_CASE("greedy_match equals the step-wise exhaustive argmax oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto findings = random_sentences(rng, 1, 5);
    const auto impressions = random_sentences(rng, 1, 4);
    const auto m = greedy_match(findings, impressions);
    CHECK(m.indices == oracle::greedy_match(findings, impressions, MatchOptions{}.beta));
    std::set<int> unique(m.indices.begin(), m.indices.end());
    CHECK(unique.size() == m.indices.size());
    CHECK(m.indices.size() == std::min(findings.size(), impressions.size()));
  }
}

TEST_CASE("pure-recall similarity is switchable") {
  const Sentence f{"a", "b", "c", "d", "e", "f"};
  const Sentence i{"a", "b"};
  CHECK(sentence_similarity(f, i, MatchOptions{.pure_recall = true}) == 1.0);
  CHECK(sentence_similarity(f, i) < 1.0);
}

TEST_CASE("compile_keyword_indices") {
  auto r = make_report({{"no", "pleural", "effusion"}}, {{"x"}});
  CHECK(compile_keyword_indices(r, keywords({"effusion"})) == std::vector<int>{2});
  CHECK(compile_keyword_indices(r, keywords({"pleural effusion"})) == std::vector<int>{1, 2});
  // Order of the keyword list does not matter.
  auto r2 = make_report({{"mass", "effect", "and", "mass"}, {"effect", "again", "mass", "effect"}}, {{"x"}});
  const auto a = compile_keyword_indices(r2, keywords({"mass effect", "again", "mass"}));
  const auto b = compile_keyword_indices(r2, keywords({"mass", "again", "mass effect"}));
  CHECK(a == b);
  CHECK(a == std::vector<int>{0, 1, 3, 5, 6, 7});
}

TEST_CASE("interleave: Table 1 worked example") {
  const Report report = table1::report();
  const auto kw = compile_keyword_indices(report, table1::keywords());
  // Paper positions are 1-based.
  std::vector<int> one_based;
  for (int w : kw) one_based.push_back(w + 1);
  CHECK(one_based == std::vector<int>{6, 7, 9, 10, 36, 43, 67, 81, 82});

  SentenceMatch match;
  match.indices = {0, 6, 7};
  const auto labels = interleave(match, kw, report);
  CHECK(labels.steps == table1::expected_labels());
  validate_labels(labels, report);

  // Pure-recall matching recovers the highlighted sentences {1, 7, 8}; the
  // default F-beta scorer prefers the shorter sentence 4 for the first
  // impression.
  const auto recall_match = greedy_match(report.findings, report.impressions, MatchOptions{.pure_recall = true});
  CHECK(recall_match.indices == std::vector<int>{0, 6, 7});
  CHECK(greedy_match(report.findings, report.impressions).indices == std::vector<int>{3, 6, 7});
}

TEST_CASE("interleave: rules") {
  auto r = make_report({{"a", "b", "c", "d", "e"}, {"f", "g", "h", "i", "j"}}, {{"x"}});
  SentenceMatch m;
  m.indices = {1, 0};
  auto none = interleave(m, {}, r);
  CHECK(none.steps == std::vector<LabelTuple>{{0, 1, kNone}, {0, 0, kNone}, {0, 2, kNone}});

  SentenceMatch one;
  one.indices = {0};
  auto words = interleave(one, {4, 9, 2}, r);
  CHECK(words.steps == std::vector<LabelTuple>{{1, kNone, 2}, {1, kNone, 4}, {0, 0, kNone}, {0, 2, kNone}});

  CHECK_THROWS_AS(interleave(one, {10}, r), Error);
  SentenceMatch bad;
  bad.indices = {2};
  CHECK_THROWS_AS(interleave(bad, {}, r), Error);
}

TEST_CASE("interleave: structural invariants and stream recovery") {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    auto r = make_report(random_sentences(rng, 1, 6), random_sentences(rng, 1, 4));
    const auto match = greedy_match(r.findings, r.impressions);
    std::vector<int> kw;
    for (int w = 0; w < r.word_count(); ++w) {
      if (rng.bernoulli(0.3)) kw.push_back(w);
    }
    const auto labels = interleave(match, kw, r);
    CHECK_NOTHROW(validate_labels(labels, r));
    CHECK(sentence_stream(labels) == match.indices);
    std::vector<int> expected_words;
    for (int s : match.indices) {
      for (int w : kw) {
        if (r.flat_findings[static_cast<std::size_t>(w)].sentence == s) expected_words.push_back(w);
      }
    }
    CHECK(word_stream(labels) == expected_words);
  }
}

TEST_CASE("validate_labels rejects malformed sequences") {
  auto r = make_report({{"a", "b"}, {"c", "d"}}, {{"x"}});
  InterleavedLabels l;
  l.steps = {{1, kNone, 0}, {0, 0, kNone}, {0, 2, kNone}};
  CHECK_NOTHROW(validate_labels(l, r));
  l.steps = {{1, kNone, 2}, {0, 0, kNone}, {0, 2, kNone}};
  CHECK_THROWS_AS(validate_labels(l, r), Error);  // word outside its block
  l.steps = {{0, 0, kNone}, {0, 0, kNone}, {0, 2, kNone}};
  CHECK_THROWS_AS(validate_labels(l, r), Error);  // repeated sentence
  l.steps = {{0, 0, kNone}};
  CHECK_THROWS_AS(validate_labels(l, r), Error);  // no END
  l.steps = {{1, 0, kNone}, {0, 2, kNone}};
  CHECK_THROWS_AS(validate_labels(l, r), Error);  // switch mismatch
}

TEST_CASE("keyword scorer and keyword file") {
  std::vector<Report> corpus;
  for (int i = 0; i < 10; ++i) {
    std::vector<Sentence> f{{"common", "words", "here"}, {"filler", "text"}};
    if (i < 4) f.push_back({"pleural", "effusion", "noted"});
    if (i == 0) f.push_back({"singleton"});
    corpus.push_back(make_report(f, {{"x"}}));
  }
  const auto ks = score_keywords(corpus, 0.1);
  std::set<std::string> phrases;
  for (const auto& k : ks.keywords) {
    phrases.insert(k.phrase);
    CHECK(k.score >= 0.1);
  }
  CHECK(phrases.count("singleton") == 0);  // frequency floor
  CHECK(phrases.count("common") == 0);     // in every report, above the cap
  CHECK(phrases.count("pleural effusion") == 1);
  CHECK_THROWS_AS(score_keywords({}, 0.1), Error);

  std::stringstream file("Pleural Effusion\t0.9\nmass\t0.2\n\nnodule\t0.5\n");
  const auto loaded = read_keyword_file(file, 0.3);
  REQUIRE(loaded.keywords.size() == 2);
  CHECK(loaded.keywords[0].phrase == "pleural effusion");
  std::stringstream out;
  write_keyword_file(out, loaded);
  CHECK(out.str() == "pleural effusion\t0.9\nnodule\t0.5\n");
}

TEST_CASE("label jsonl round trip uses -1 for the empty slot") {
  const auto l = interleave(SentenceMatch{{0}, {1.0}}, {1}, make_report({{"a", "b"}}, {{"b"}}));
  const auto j = labels_to_json(l);
  CHECK(j.dump() == R"({"id":"r","labels":[[1,-1,1],[0,0,-1],[0,1,-1]]})");
  std::stringstream ss;
  write_labels(ss, {l, l});
  const auto back = read_labels(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[1] == l);
}
