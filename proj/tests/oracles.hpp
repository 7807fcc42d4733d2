#pragma once

// Independent reference implementations used by the unit and acceptance
// tests. They are deliberately naive and share no code with the library.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace oracle {

// Greedy two-pointer subsequence test.
template <typename T>
bool is_subsequence(const std::vector<T>& x, const std::vector<T>& y) {
  std::size_t j = 0;
  for (const auto& t : y) {
    if (j < x.size() && x[j] == t) ++j;
  }
  return j == x.size();
}

// Longest common subsequence by enumerating every subsequence of `a`.
template <typename T>
std::size_t brute_lcs(const std::vector<T>& a, const std::vector<T>& b) {
  std::size_t best = 0;
  const std::size_t subsets = std::size_t{1} << a.size();
  for (std::size_t mask = 0; mask < subsets; ++mask) {
    std::vector<T> sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (std::size_t{1} << i)) sub.push_back(a[i]);
    }
    if (sub.size() > best && is_subsequence(sub, b)) best = sub.size();
  }
  return best;
}

// Clipped n-gram overlap by consuming matched reference n-grams one by one.
template <typename T>
std::size_t consume_overlap(const std::vector<T>& cand, const std::vector<T>& ref, std::size_t n) {
  std::vector<std::vector<T>> pool;
  for (std::size_t j = 0; j + n <= ref.size(); ++j) pool.emplace_back(ref.begin() + j, ref.begin() + j + n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i + n <= cand.size(); ++i) {
    std::vector<T> g(cand.begin() + i, cand.begin() + i + n);
    auto it = std::find(pool.begin(), pool.end(), g);
    if (it != pool.end()) {
      pool.erase(it);
      ++hits;
    }
  }
  return hits;
}

// Closed-form ROUGE-L F-beta: (1 + b^2) L / (|c| + b^2 |r|).
inline double lcs_f_beta(std::size_t lcs, std::size_t cand_len, std::size_t ref_len, double beta) {
  if (lcs == 0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * static_cast<double>(lcs) /
         (static_cast<double>(cand_len) + b2 * static_cast<double>(ref_len));
}

// Step-wise exhaustive argmax matching with smaller-index tie-break.
inline std::vector<int> greedy_match(const std::vector<std::vector<std::string>>& findings,
                                     const std::vector<std::vector<std::string>>& impressions,
                                     double beta) {
  std::vector<int> out;
  std::vector<bool> taken(findings.size(), false);
  for (const auto& imp : impressions) {
    if (out.size() == findings.size()) break;
    std::vector<double> scores(findings.size(), -1.0);
    for (std::size_t i = 0; i < findings.size(); ++i) {
      if (!taken[i]) {
        scores[i] = lcs_f_beta(brute_lcs(findings[i], imp), findings[i].size(), imp.size(), beta);
      }
    }
    const double best = *std::max_element(scores.begin(), scores.end());
    for (std::size_t i = 0; i < findings.size(); ++i) {
      if (!taken[i] && scores[i] == best) {
        taken[i] = true;
        out.push_back(static_cast<int>(i));
        break;
      }
    }
  }
  return out;
}

// Every sequence over {0..alphabet-1} of length 0..max_len, shortest first.
inline std::vector<std::vector<std::uint8_t>> all_sequences(int alphabet, int max_len) {
  std::vector<std::vector<std::uint8_t>> out{{}};
  std::size_t level_begin = 0;
  for (int len = 1; len <= max_len; ++len) {
    const std::size_t level_end = out.size();
    for (std::size_t i = level_begin; i < level_end; ++i) {
      for (int a = 0; a < alphabet; ++a) {
        auto s = out[i];
        s.push_back(static_cast<std::uint8_t>(a));
        out.push_back(std::move(s));
      }
    }
    level_begin = level_end;
  }
  return out;
}

}  // namespace oracle
