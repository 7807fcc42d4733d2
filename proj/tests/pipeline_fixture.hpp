#pragma once

// Small end-to-end pipeline configurations rooted in a scratch directory.

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "dimac/pipeline.hpp"

namespace fixture {

inline const std::vector<std::string>& artifact_keys() {
  static const std::vector<std::string> keys{
      "corpus",     "rejections",     "annotations", "splits",      "keywords",   "labels",
      "extractor",  "extractor_log",  "abstractor",  "abstractor_log", "dimac",  "dimac_log",
      "predictions", "traces",        "evaluation",  "evaluation_table", "stats"};
  return keys;
}

inline const std::vector<std::string>& full_pipeline() {
  static const std::vector<std::string> stages{"synth",       "labels",    "pretrain-extractor", "pretrain-abstractor",
                                               "train-dimac", "summarize", "evaluate"};
  return stages;
}

// Every artifact path placed under `root`.
inline dimac::pipeline::RunConfig rooted(dimac::pipeline::RunConfig c, const std::filesystem::path& root) {
  for (const auto& k : artifact_keys()) c.set("paths." + k, (root / k).string());
  return c;
}

inline dimac::pipeline::RunConfig tiny_pipeline_config(const std::filesystem::path& root) {
  std::istringstream text(R"(
seed = 5
[corpus]
source = synth
[synth]
reports = 30
min_sentences = 3
max_sentences = 5
min_sentence_length = 4
max_sentence_length = 6
salient_sentences = 2
filler_vocabulary = 30
concept_vocabulary = 10
[labels]
keywords = file
[extractor]
embed_dim = 12
position_dim = 4
hidden = 12
conv_filters = 6
windows = 1,2
attention_dim = 12
switch_hidden = 12
epochs = 4
lr = 0.005
[abstractor]
embed_dim = 12
hidden = 12
attention_dim = 12
epochs = 2
lr = 0.005
[dimac]
updates = 6
batch_size = 4
rewrite_beam = 2
[summarize]
beam = 2
)");
  return rooted(dimac::pipeline::RunConfig::parse(text), root);
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dimac_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
