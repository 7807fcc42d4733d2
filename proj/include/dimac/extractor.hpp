#pragma once

// Hierarchical encoder with two pointer decoders (words and sentences) and a
// switch network that decides, per step, which decoder acts.
//
// Parameter prefixes:
//   emb.word, emb.pos          word and within-sentence position tables
//   enc_word.*                 word-level BiLSTM
//   conv.*                     convolutional sentence encoder
//   enc_sent.*                 sentence-level BiLSTM
//   dec_word.{init,lstm,attn}  word pointer decoder
//   dec_sent.{init,lstm,attn,end_key}
//   switch.{l1,l2}             switch network (the communicator during RL)

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimac/corpus.hpp"
#include "dimac/labels.hpp"
#include "dimac/nn/checkpoint.hpp"
#include "dimac/nn/layers.hpp"
#include "dimac/rng.hpp"

namespace dimac::extractor {

using nn::Graph;
using nn::Matrix;
using nn::ParamStore;
using nn::Var;

struct ExtractorConfig {
  int vocab_size = 0;
  int embed_dim = 128;
  int position_dim = 128;
  int max_positions = 100;  // positions past this share the last embedding
  int hidden = 256;
  int conv_filters = 100;
  std::vector<int> windows{3, 4, 5};
  int attention_dim = 256;
  int switch_hidden = 256;

  int encoder_dim() const { return 2 * hidden; }
  // [c^w; c^s; selected representation; message]
  int decoder_input_dim() const { return 3 * encoder_dim() + 1; }

  bool operator==(const ExtractorConfig&) const = default;
};

nlohmann::json config_to_json(const ExtractorConfig& c);
ExtractorConfig config_from_json(const nlohmann::json& j);

void init_extractor(ParamStore& params, const ExtractorConfig& config, Rng& rng);

// Overwrites emb.word columns from a text file with one `token v1 ... vE`
// line per word. Tokens outside the vocabulary are skipped; returns the
// number of columns replaced. Throws dimac::Error on a dimension mismatch or
// a malformed line.
int load_word_embeddings(ParamStore& params, const corpus::Vocabulary& vocab, std::istream& in);

// Vocabulary ids and layout of one report's findings.
struct EncodedReport {
  std::string id;
  std::vector<int> word_ids;
  std::vector<int> positions;         // within-sentence position, clamped
  std::vector<int> word_sentence;     // sentence index of each flat word
  std::vector<int> sentence_offsets;  // first flat index of each sentence
  std::vector<int> sentence_lengths;
  int m() const { return static_cast<int>(word_ids.size()); }
  int n() const { return static_cast<int>(sentence_offsets.size()); }
};

EncodedReport encode_report(const corpus::Report& report, const corpus::Vocabulary& vocab,
                            const ExtractorConfig& config);

struct EncoderStates {
  Var words;          // (2H x m)
  Var sentences;      // (2H x n)
  Var word_end;       // (2H x 1)
  Var sentence_end;   // (2H x 1)
  Var sentence_conv;  // (3F x n) conv sentence vectors before the sentence BiLSTM
  int m = 0;
  int n = 0;
};

// Throws dimac::Error on empty findings.
EncoderStates encode_findings(Graph& g, ParamStore& params, const ExtractorConfig& config,
                              const EncodedReport& report);

// Decoder-side keys precomputed for one report: word keys and sentence keys
// with the learned END column appended at index n.
struct DecoderKeys {
  Var word_keys;
  Var word_proj;
  Var sentence_keys;  // (2H x n+1)
  Var sentence_proj;
};

DecoderKeys decoder_keys(Graph& g, ParamStore& params, const EncoderStates& enc);

enum class Level { kWord, kSentence };

struct ExtractorState {
  Var word_state;      // packed [h; c] of the word decoder
  Var sentence_state;  // packed [h; c] of the sentence decoder
  int step = 0;
  std::vector<bool> selected;  // sentences already chosen
  std::vector<int> sentence_history;
  std::vector<int> word_history;
};

ExtractorState initial_state(Graph& g, ParamStore& params, const EncoderStates& enc);

struct StepScores {
  nn::Attention word;
  nn::Attention sentence;  // already-selected sentences masked out
  Var switch_logit;        // log-odds that this is a word step
  Var q;                   // sigmoid(switch_logit)
};

// Attention of both decoders and the switch value at the current state.
StepScores score_step(Graph& g, ParamStore& params, const EncoderStates& enc, const DecoderKeys& keys,
                      const ExtractorState& state);

// Sigmoid of the switch network over (h^w, c^w, h^s, c^s).
Var switch_probability(Graph& g, ParamStore& params, Var word_h, Var word_context, Var sentence_h,
                       Var sentence_context);

struct Choice {
  Level level = Level::kSentence;
  int index = 0;  // flat word index, sentence index, or n for END
};

// Advances both decoders by one step. The sentence decoder receives the
// message `q` and the word decoder `1 - q`; `detach_message` cuts the
// gradient path through the message. Throws on a repeated sentence or END.
ExtractorState advance(Graph& g, ParamStore& params, const EncoderStates& enc, const ExtractorState& state,
                       const StepScores& scores, const Choice& choice, bool detach_message = false);

struct LossBreakdown {
  double word = 0.0;
  double sentence = 0.0;
  double switch_term = 0.0;
  int steps = 0;
  double total() const { return word + sentence + switch_term; }
};

// Teacher-forced negative log-likelihood of an interleaved label sequence.
Var mle_loss(Graph& g, ParamStore& params, const ExtractorConfig& config, const EncodedReport& report,
             const labels::InterleavedLabels& labels, LossBreakdown* breakdown = nullptr);

void check_labels_fit(const EncodedReport& report, const labels::InterleavedLabels& labels);

// ---- Training ---------------------------------------------------------------

struct TrainingExample {
  EncodedReport report;
  labels::InterleavedLabels labels;
};

struct MleOptions {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  double clip_norm = 1.5;
  int patience = 5;
  std::uint64_t seed = 1;
};

struct EpochLog {
  int epoch = 0;  // 0 is the untrained model
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct MleResult {
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  bool stopped_early = false;
};

double mean_loss(ParamStore& params, const ExtractorConfig& config, const std::vector<TrainingExample>& data);

// Mini-batch Adam on the summed MLE loss with early stopping on validation
// loss. `params` ends at the best validation epoch (possibly the untrained
// initialization). Throws NumericError when the loss becomes non-finite.
MleResult train_extractor_mle(ParamStore& params, const ExtractorConfig& config,
                              const std::vector<TrainingExample>& train,
                              const std::vector<TrainingExample>& validation, const MleOptions& options,
                              const std::function<void(const EpochLog&)>& on_epoch = {});

// ---- Inference ---------------------------------------------------------------

enum class Mode { kGreedy, kSample };

struct TraceStep {
  int j = 0;
  Level level = Level::kSentence;
  int index = 0;
  double q = 0.0;
};

struct Extraction {
  std::vector<int> sentences;  // in selection order, END excluded
  std::vector<int> words;
  std::vector<TraceStep> trace;
  bool truncated = false;  // max_steps reached before END
};

// max_steps <= 0 selects 2 (n + m).
Extraction extract(ParamStore& params, const ExtractorConfig& config, const EncodedReport& report, Mode mode,
                   int max_steps = 0, Rng* rng = nullptr);

nlohmann::json trace_to_json(const std::string& id, const Extraction& extraction);

struct SelectionMetrics {
  double sentence_accuracy = 0.0;  // mean |sel & planted| / max(|sel|, |planted|)
  double keyword_recall = 0.0;     // micro-averaged over planted words
  double switch_agreement = 0.0;   // teacher-forced word steps with q > 0.5
  int reports = 0;
};

SelectionMetrics evaluate_selection(ParamStore& params, const ExtractorConfig& config,
                                    const std::vector<EncodedReport>& reports,
                                    const std::vector<corpus::SaliencyAnnotation>& annotations,
                                    const std::vector<labels::InterleavedLabels>& labels);

// ---- Checkpoints ----------------------------------------------------------------

nn::Checkpoint make_checkpoint(const ParamStore& params, const ExtractorConfig& config,
                               const corpus::Vocabulary& vocab, const std::string& kind = "extractor");
ExtractorConfig checkpoint_config(const nn::Checkpoint& ckpt);

}  // namespace dimac::extractor
