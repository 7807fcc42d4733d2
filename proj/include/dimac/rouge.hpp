#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dimac/error.hpp"

namespace dimac::rouge {

struct RougeScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  // Set when an operand is empty or shorter than the n-gram order; all
  // components are then 0.
  bool degenerate = false;
};

// Weighted harmonic mean (1 + b^2) P R / (R + b^2 P); 0 when both are 0.
inline double f_beta(double recall, double precision, double beta) {
  const double b2 = beta * beta;
  const double denom = recall + b2 * precision;
  if (denom <= 0.0) return 0.0;
  return (1.0 + b2) * precision * recall / denom;
}

inline RougeScore make_score(double overlap, double reference_total, double candidate_total) {
  RougeScore s;
  if (reference_total <= 0.0 || candidate_total <= 0.0) {
    s.degenerate = true;
    return s;
  }
  s.recall = overlap / reference_total;
  s.precision = overlap / candidate_total;
  s.f1 = f_beta(s.recall, s.precision, 1.0);
  return s;
}

// The generic versions work on any totally ordered token type; the string
// overloads below are what the pipeline uses.

namespace detail {

// Bit j of the result is set when reference[j] == token (reference size <= 64).
template <typename T>
std::uint64_t match_mask(const T& token, std::span<const T> reference) {
  std::uint64_t m = 0;
  for (std::size_t j = 0; j < reference.size(); ++j) m |= static_cast<std::uint64_t>(reference[j] == token) << j;
  return m;
}

// out[i] = match_mask(tokens[i], reference); the loop order lets the
// compiler vectorize over `tokens`.
template <typename T>
void match_masks(std::span<const T> tokens, std::span<const T> reference, std::uint64_t* out) {
  for (std::size_t i = 0; i < tokens.size(); ++i) out[i] = 0;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    const T& r = reference[j];
    for (std::size_t i = 0; i < tokens.size(); ++i) out[i] |= static_cast<std::uint64_t>(tokens[i] == r) << j;
  }
}

inline constexpr std::size_t kMaskTokens = 256;

inline std::uint64_t low_bits(std::size_t n) { return n >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << n) - 1; }

}  // namespace detail

// Bit-parallel row update (Hyyro) when b fits in one word, DP otherwise.
template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  if (b.size() <= 64) {
    std::uint64_t v = ~std::uint64_t{0};
    std::array<std::uint64_t, detail::kMaskTokens> masks;
    for (std::size_t start = 0; start < a.size(); start += detail::kMaskTokens) {
      const auto chunk = a.subspan(start, std::min(detail::kMaskTokens, a.size() - start));
      detail::match_masks(chunk, b, masks.data());
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const std::uint64_t u = v & masks[i];
        v = (v + u) | (v - u);
      }
    }
    return static_cast<std::size_t>(std::popcount(~v & detail::low_bits(b.size())));
  }
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Clipped n-gram overlap: sum over distinct n-grams g of min(count_c(g), count_r(g)).
// Short references match each candidate n-gram to the first unused equal
// reference n-gram, which consumes min(count_c, count_r) per n-gram.
template <typename T>
std::size_t clipped_overlap(std::span<const T> candidate, std::span<const T> reference, int n) {
  if (n < 1) throw Error("rouge: n-gram order must be at least 1");
  const auto order = static_cast<std::size_t>(n);
  if (candidate.size() < order || reference.size() < order) return 0;
  const std::size_t nc = candidate.size() - order + 1;
  const std::size_t nr = reference.size() - order + 1;
  std::size_t overlap = 0;
  if (reference.size() <= 64 && candidate.size() <= detail::kMaskTokens) {
    std::array<std::uint64_t, detail::kMaskTokens> unigram;
    detail::match_masks(candidate, reference, unigram.data());
    std::uint64_t unused = detail::low_bits(nr);
    for (std::size_t i = 0; i < nc; ++i) {
      std::uint64_t m = unused;
      for (std::size_t k = 0; k < order && m != 0; ++k) m &= unigram[i + k] >> k;
      if (m != 0) {
        unused ^= m & (~m + 1);  // lowest set bit of m
        ++overlap;
      }
    }
    return overlap;
  }
  std::map<std::vector<T>, std::size_t> counts;
  for (std::size_t i = 0; i < nc; ++i) {
    ++counts[std::vector<T>(candidate.begin() + static_cast<std::ptrdiff_t>(i),
                            candidate.begin() + static_cast<std::ptrdiff_t>(i + order))];
  }
  for (std::size_t j = 0; j < nr; ++j) {
    auto it = counts.find(std::vector<T>(reference.begin() + static_cast<std::ptrdiff_t>(j),
                                         reference.begin() + static_cast<std::ptrdiff_t>(j + order)));
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  return overlap;
}

// Clipped n-gram overlap scores. Throws dimac::Error when n < 1.
template <typename T>
RougeScore rouge_n(std::span<const T> candidate, std::span<const T> reference, int n) {
  const std::size_t overlap = clipped_overlap(candidate, reference, n);
  const auto total = [n](std::size_t len) {
    return len + 1 > static_cast<std::size_t>(n) ? static_cast<double>(len + 1 - static_cast<std::size_t>(n))
                                                  : 0.0;
  };
  return make_score(static_cast<double>(overlap), total(reference.size()), total(candidate.size()));
}

// Longest-common-subsequence scores.
template <typename T>
RougeScore rouge_l(std::span<const T> candidate, std::span<const T> reference) {
  return make_score(static_cast<double>(lcs_length(candidate, reference)),
                    static_cast<double>(reference.size()), static_cast<double>(candidate.size()));
}

using Tokens = std::span<const std::string>;

inline RougeScore rouge_n(Tokens candidate, Tokens reference, int n) {
  return rouge_n<std::string>(candidate, reference, n);
}
inline RougeScore rouge_l(Tokens candidate, Tokens reference) {
  return rouge_l<std::string>(candidate, reference);
}
inline std::size_t lcs_length(Tokens a, Tokens b) { return lcs_length<std::string>(a, b); }
inline double r1_recall(Tokens candidate, Tokens reference) {
  return rouge_n(candidate, reference, 1).recall;
}

enum class Aggregation {
  kFlattened,  // sentences concatenated into one token sequence
  kUnionLcs,   // summary-level union LCS
};

RougeScore rouge_l_summary(const std::vector<std::vector<std::string>>& candidate,
                           const std::vector<std::vector<std::string>>& reference,
                           Aggregation aggregation = Aggregation::kFlattened);

std::vector<std::string> flatten(const std::vector<std::vector<std::string>>& sentences);

}  // namespace dimac::rouge
