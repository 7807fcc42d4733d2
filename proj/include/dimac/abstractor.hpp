#pragma once

// Sentence rewriter: pointer-generator with coverage over an extended
// vocabulary that appends the source's out-of-vocabulary tokens.
//
// Parameter prefixes (all under "abs."):
//   abs.emb            token embeddings (E x V)
//   abs.enc.*          source BiLSTM
//   abs.init           decoder initial hidden state from the encoder end
//   abs.dec            decoder LSTM, input [emb(prev); previous context]
//   abs.attn.{WD,WE,wc,v}  coverage attention
//   abs.out            vocabulary projection of [s; context]
//   abs.gen            generation gate over [context; s; emb(prev)]

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimac/corpus.hpp"
#include "dimac/labels.hpp"
#include "dimac/nn/checkpoint.hpp"
#include "dimac/nn/layers.hpp"
#include "dimac/rng.hpp"

namespace dimac::abstractor {

using nn::Graph;
using nn::Matrix;
using nn::ParamStore;
using nn::Var;

struct AbstractorConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int hidden = 256;
  int attention_dim = 256;
  double coverage_weight = 1.0;
  int max_length = 30;

  bool operator==(const AbstractorConfig&) const = default;
};

nlohmann::json config_to_json(const AbstractorConfig& c);
AbstractorConfig config_from_json(const nlohmann::json& j);

void init_abstractor(ParamStore& params, const AbstractorConfig& config, Rng& rng);

// Source and target ids over the extended vocabulary. Ids >= vocab_size
// index `oov`.
struct Example {
  std::vector<int> source;
  std::vector<int> target;  // ends with <end>
  std::vector<std::string> oov;
  int extended_size() const;
  int vocab_size = 0;
};

Example make_example(const corpus::Sentence& source, const corpus::Sentence& target,
                     const corpus::Vocabulary& vocab);
Example make_source(const corpus::Sentence& source, const corpus::Vocabulary& vocab);

struct SourceEncoding {
  Var states;     // (2H x L)
  Var projected;  // WE states
  Var end;        // (2H x 1)
  int length = 0;
};

SourceEncoding encode_source(Graph& g, ParamStore& params, const Example& ex);

struct PgState {
  Var decoder;   // packed [h; c]
  Var coverage;  // (L x 1), zeros at step 0
  Var context;   // previous context (2H x 1), zeros at step 0
};

PgState initial_pg_state(Graph& g, ParamStore& params, const SourceEncoding& src);

struct PgStep {
  Var distribution;   // (extended x 1) simplex
  Var attention;      // (L x 1)
  Var p_gen;          // (1 x 1)
  Var coverage_loss;  // sum min(attention, coverage before this step)
  PgState next;
};

// One decoding step fed with the previous token `prev` (extended id; ids
// outside the fixed vocabulary are embedded as <unk>).
PgStep pg_step(Graph& g, ParamStore& params, const AbstractorConfig& config, const SourceEncoding& src,
               const Example& ex, const PgState& state, int prev);

struct PairLoss {
  Var total;  // nll + coverage_weight * coverage, averaged over target tokens
  double nll = 0.0;       // summed over tokens
  double coverage = 0.0;  // summed over tokens
  int tokens = 0;
};

PairLoss pair_loss(Graph& g, ParamStore& params, const AbstractorConfig& config, const Example& ex);

// ---- Training --------------------------------------------------------------------

struct SentencePair {
  corpus::Sentence source;
  corpus::Sentence target;
};

// One pair per impressions sentence, aligned by greedy matching.
std::vector<SentencePair> matched_pairs(const corpus::Report& report, const labels::MatchOptions& options = {});

struct TrainOptions {
  int epochs = 20;
  int batch_size = 8;
  double lr = 1e-3;
  double clip_norm = 1.5;
  int patience = 5;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_nll = 0.0;  // per target token
};

struct TrainResult {
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_validation_nll = 0.0;
};

// Per-token validation NLL and mean coverage term.
struct Evaluation {
  double nll_per_token = 0.0;
  double coverage_per_token = 0.0;
};
Evaluation evaluate(ParamStore& params, const AbstractorConfig& config, const std::vector<Example>& data);

// Throws NumericError on a non-finite loss. `params` ends at the best
// validation epoch.
TrainResult train_abstractor(ParamStore& params, const AbstractorConfig& config, const std::vector<Example>& train,
                             const std::vector<Example>& validation, const TrainOptions& options,
                             const std::function<void(const EpochLog&)>& on_epoch = {});

// ---- Decoding ----------------------------------------------------------------------

struct Hypothesis {
  std::vector<int> ids;   // extended ids, <end> excluded
  double log_prob = 0.0;  // sum over emitted tokens including <end>
  int length = 0;         // emitted tokens including <end>
  bool finished = false;
  double score() const { return length > 0 ? log_prob / length : 0.0; }
};

struct Summary {
  std::vector<std::string> tokens;
  Hypothesis best;
  bool empty_source = false;
};

// Length-normalized beam search. Beam 1 is greedy decoding; wider beams also
// keep the greedy hypothesis as a candidate, so their score never falls
// below it.
Summary abstract_sentence(ParamStore& params, const AbstractorConfig& config, const corpus::Vocabulary& vocab,
                          const corpus::Sentence& source, int beam = 5);

Hypothesis greedy_decode(ParamStore& params, const AbstractorConfig& config, const Example& ex);
std::vector<Hypothesis> beam_search(ParamStore& params, const AbstractorConfig& config, const Example& ex, int beam);

std::vector<std::string> resolve(const Example& ex, const corpus::Vocabulary& vocab, const std::vector<int>& ids);

// Fraction of target positions reproduced, over max(|decoded|, |target|).
double token_accuracy(const std::vector<std::string>& decoded, const corpus::Sentence& target);

nn::Checkpoint make_checkpoint(const ParamStore& params, const AbstractorConfig& config,
                               const corpus::Vocabulary& vocab);
AbstractorConfig checkpoint_config(const nn::Checkpoint& ckpt);

}  // namespace dimac::abstractor
