#include <doctest.h>

#include <map>

#include "dimac/rng.hpp"
#include "dimac/rouge.hpp"
#include "oracles.hpp"

using namespace dimac;
using namespace dimac::rouge;
using Toks = std::vector<std::string>;

namespace {

Toks random_tokens(Rng& rng, int max_len, int alphabet) {
  Toks t(static_cast<std::size_t>(rng.uniform_int(0, max_len)));
  for (auto& s : t) s = std::string(1, static_cast<char>('a' + rng.uniform_int(0, alphabet - 1)));
  return t;
}

}  // namespace

TEST_CASE("rouge_n examples") {
  const Toks abc{"a", "b", "c"};
  auto id = rouge_n(abc, abc, 1);
  CHECK(id.recall == 1.0);
  CHECK(id.precision == 1.0);
  CHECK(id.f1 == 1.0);

  auto dis = rouge_n(Toks{"x", "y"}, Toks{"a", "b"}, 1);
  CHECK(dis.recall == 0.0);
  CHECK(dis.precision == 0.0);
  CHECK(dis.f1 == 0.0);
  CHECK_FALSE(dis.degenerate);

  auto part = rouge_n(Toks{"a", "b", "c", "d"}, Toks{"a", "c", "e"}, 1);
  CHECK(part.recall == doctest::Approx(2.0 / 3.0));
  CHECK(part.precision == doctest::Approx(0.5));

  CHECK(r1_recall(Toks{"a", "a", "b"}, Toks{"a", "b", "b"}) == doctest::Approx(2.0 / 3.0));
  CHECK(r1_recall(abc, abc) == 1.0);

  auto short_ref = rouge_n(abc, Toks{"a"}, 2);
  CHECK(short_ref.degenerate);
  CHECK(short_ref.recall == 0.0);
  CHECK_THROWS_AS(rouge_n(abc, abc, 0), Error);
}

TEST_CASE("rouge_l examples") {
  const Toks abc{"a", "b", "c"};
  CHECK(rouge_l(abc, abc).recall == 1.0);
  CHECK(rouge_l(abc, Toks{"a", "c", "b"}).recall == doctest::Approx(2.0 / 3.0));
  auto empty = rouge_l(Toks{}, Toks{"a"});
  CHECK(empty.degenerate);
  CHECK(empty.f1 == 0.0);
}

TEST_CASE("rouge against brute-force oracles on random and long inputs") {
  Rng rng(21);
  for (int trial = 0; trial < 400; ++trial) {
    const int max_len = trial < 300 ? 10 : 80;
    const Toks c = random_tokens(rng, max_len, 4);
    const Toks r = random_tokens(rng, max_len, 4);
    if (max_len <= 10) CHECK(lcs_length(c, r) == oracle::brute_lcs(c, r));
    for (int n = 1; n <= 3; ++n) {
      const auto overlap = static_cast<double>(oracle::consume_overlap(c, r, static_cast<std::size_t>(n)));
      const auto s = rouge_n(c, r, n);
      const double rt = r.size() >= static_cast<std::size_t>(n) ? static_cast<double>(r.size() - n + 1) : 0.0;
      CHECK(s.recall == (rt > 0 && c.size() >= static_cast<std::size_t>(n) ? overlap / rt : 0.0));
      // Symmetry between recall and precision.
      CHECK(s.recall == rouge_n(r, c, n).precision);
    }
  }
}

TEST_CASE("rouge: appending a reference token adds at most one to the overlap") {
  Rng rng(22);
  for (int trial = 0; trial < 300; ++trial) {
    const Toks c = random_tokens(rng, 8, 3);
    Toks r = random_tokens(rng, 8, 3);
    for (int n = 1; n <= 2; ++n) {
      const auto before = clipped_overlap<std::string>(c, r, n);
      Toks longer = r;
      longer.push_back(std::string(1, static_cast<char>('a' + rng.uniform_int(0, 2))));
      const auto after = clipped_overlap<std::string>(c, longer, n);
      CHECK(after >= before);
      CHECK(after <= before + 1);
    }
  }
}

TEST_CASE("rouge: invariant under consistent renaming") {
  Rng rng(23);
  const std::map<std::string, std::string> rename{{"a", "c"}, {"b", "a"}, {"c", "b"}};
  for (int trial = 0; trial < 200; ++trial) {
    const Toks c = random_tokens(rng, 8, 3);
    const Toks r = random_tokens(rng, 8, 3);
    Toks c2, r2;
    for (const auto& t : c) c2.push_back(rename.at(t));
    for (const auto& t : r) r2.push_back(rename.at(t));
    CHECK(rouge_l(c, r).f1 == rouge_l(c2, r2).f1);
    CHECK(rouge_n(c, r, 2).f1 == rouge_n(c2, r2, 2).f1);
  }
}

TEST_CASE("summary-level aggregation") {
  const std::vector<Toks> ref{{"a", "b", "c", "d"}};
  const std::vector<Toks> cand{{"a", "b"}, {"c", "d"}};
  // Flattened: LCS of [a b c d] with itself.
  CHECK(rouge_l_summary(cand, ref).recall == 1.0);
  const std::vector<Toks> swapped{{"c", "d"}, {"a", "b"}};
  CHECK(rouge_l_summary(swapped, ref).recall == doctest::Approx(0.5));
  // Union LCS credits each candidate sentence separately.
  CHECK(rouge_l_summary(swapped, ref, Aggregation::kUnionLcs).recall == 1.0);
}
