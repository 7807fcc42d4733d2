#include "dimac/rouge.hpp"

#include <set>

namespace dimac::rouge {

namespace {

// Positions in `ref` covered by one LCS with `cand`.
std::vector<std::size_t> lcs_positions(Tokens ref, Tokens cand) {
  const std::size_t w = cand.size() + 1;
  std::vector<std::size_t> t((ref.size() + 1) * w, 0);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    for (std::size_t j = 1; j <= cand.size(); ++j) {
      t[i * w + j] = ref[i - 1] == cand[j - 1] ? t[(i - 1) * w + j - 1] + 1
                                               : std::max(t[(i - 1) * w + j], t[i * w + j - 1]);
    }
  }
  std::vector<std::size_t> out;
  std::size_t i = ref.size();
  std::size_t j = cand.size();
  while (i > 0 && j > 0) {
    if (ref[i - 1] == cand[j - 1]) {
      out.push_back(i - 1);
      --i;
      --j;
    } else if (t[(i - 1) * w + j] >= t[i * w + j - 1]) {
      --i;
    } else {
      --j;
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> flatten(const std::vector<std::vector<std::string>>& sentences) {
  std::vector<std::string> out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

RougeScore rouge_l_summary(const std::vector<std::vector<std::string>>& candidate,
                           const std::vector<std::vector<std::string>>& reference,
                           Aggregation aggregation) {
  if (aggregation == Aggregation::kFlattened) {
    return rouge_l(flatten(candidate), flatten(reference));
  }
  double hits = 0.0;
  double ref_total = 0.0;
  double cand_total = 0.0;
  for (const auto& c : candidate) cand_total += static_cast<double>(c.size());
  for (const auto& r : reference) {
    ref_total += static_cast<double>(r.size());
    std::set<std::size_t> covered;
    for (const auto& c : candidate) {
      for (std::size_t p : lcs_positions(r, c)) covered.insert(p);
    }
    hits += static_cast<double>(covered.size());
  }
  return make_score(hits, ref_total, cand_total);
}

}  // namespace dimac::rouge
