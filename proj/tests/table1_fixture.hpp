#pragma once

// The sample report shown at the top of the paper, with punctuation removed
// so that flat positions count words only.

#include "dimac/corpus.hpp"
#include "dimac/labels.hpp"

namespace table1 {

inline dimac::corpus::Report report() {
  const char* findings =
      "there is no evidence of midline shift or mass effect. "
      "there is soft tissue swelling or hematoma in the right frontal or supraorbital region. "
      "underlying sinus walls and calvarium are intact. "
      "there is no obvious laceration. "
      "there is subtle thickening of the falx at the high convexity with its mid to posterior portion. "
      "there is no associated subarachnoid hemorrhage. "
      "this likely reflects normal prominence of the falx in a patient of this age. "
      "remote consideration would be a very thin subdural collection.";
  const char* impressions =
      "no definite acute intracranial process. "
      "mild prominence of the falx is likely normal for this patient. "
      "remote possibility of very thin subdural collection has not been entirely excluded.";
  const dimac::corpus::Normalizer norm;
  auto r = norm.normalize({"table1", findings, impressions});
  auto strip = [](std::vector<dimac::corpus::Sentence>& sents) {
    for (auto& s : sents) {
      std::erase_if(s, [](const std::string& t) { return dimac::corpus::is_punctuation_token(t); });
    }
  };
  strip(r.findings);
  strip(r.impressions);
  r.rebuild_flat();
  return r;
}

inline dimac::labels::KeywordSet keywords() {
  dimac::labels::KeywordSet k;
  for (const char* p : {"midline shift", "mass effect", "laceration", "falx", "subdural collection"}) {
    k.keywords.push_back({p, 1.0});
  }
  return k;
}

// Expected sequence, converted from the paper's 1-based positions.
inline std::vector<dimac::labels::LabelTuple> expected_labels() {
  using dimac::labels::kNone;
  return {{1, kNone, 5},  {1, kNone, 6},  {1, kNone, 8}, {1, kNone, 9},  {0, 0, kNone}, {1, kNone, 66},
          {0, 6, kNone},  {1, kNone, 80}, {1, kNone, 81}, {0, 7, kNone}, {0, 8, kNone}};
}

}  // namespace table1
