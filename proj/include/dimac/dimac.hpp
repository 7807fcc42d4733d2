#pragma once

// Multi-agent actor-critic fine-tuning of the extractor.
//
// The word decoder (dec_word.*) and the sentence decoder (dec_sent.*) act as
// two actors; the switch network (switch.*) is the communicator whose message
// enters both actors' LSTM inputs. The critic lives under critic.* and the
// encoder stays frozen. The abstractor is part of the environment: each
// episode carries the rewritten version of every findings sentence.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dimac/corpus.hpp"
#include "dimac/extractor.hpp"
#include "dimac/labels.hpp"
#include "dimac/nn/optim.hpp"
#include "dimac/rng.hpp"

namespace dimac::rl {

using extractor::Choice;
using extractor::EncoderStates;
using extractor::ExtractorConfig;
using extractor::Level;
using nn::Graph;
using nn::Matrix;
using nn::ParamStore;
using nn::Var;

struct DimacConfig {
  double gamma = 0.95;
  double lambda = 0.1;
  double lr = 1e-4;
  double clip_norm = 1.5;
  int batch_size = 8;
  int updates = 500;
  int step_cap_factor = 2;  // cap = factor * (n + |keywords|)
  // Adds the communicator's level decision to the policy-gradient loss with
  // the team advantage. When false the communicator learns only through the
  // message it feeds to the actors.
  bool communicator_policy_gradient = true;
  std::uint64_t seed = 1;
};

nlohmann::json config_to_json(const DimacConfig& c);
DimacConfig config_from_json(const nlohmann::json& j);

// Parameter prefixes updated during fine-tuning.
const std::vector<std::string>& trainable_prefixes();

// critic.init, critic.lstm and critic.attn_w are copied from the word
// decoder; critic.attn_s and the two-row value head critic.value are fresh.
void init_critic(ParamStore& params, const ExtractorConfig& config, Rng& rng);

// ---- Environment -----------------------------------------------------------------

struct Episode {
  corpus::Report report;
  extractor::EncodedReport encoded;
  labels::InterleavedLabels labels;
  std::vector<int> keyword_indices;          // sorted flat findings positions
  std::vector<corpus::Sentence> abstracts;   // rewritten findings sentences
};

using Rewriter = std::function<corpus::Sentence(const corpus::Sentence&)>;

Episode make_episode(const corpus::Report& report, const labels::InterleavedLabels& labels,
                     const std::vector<int>& keyword_indices, const corpus::Vocabulary& vocab,
                     const ExtractorConfig& config, const Rewriter& rewrite);

// Encoder outputs computed once; the encoder does not change during RL.
struct EncoderCache {
  Matrix words;
  Matrix sentences;
  Matrix word_end;
  Matrix sentence_end;
  Matrix sentence_conv;
  int m = 0;
  int n = 0;
};

EncoderCache cache_encoder(ParamStore& params, const ExtractorConfig& config, const extractor::EncodedReport& report);
EncoderStates constant_states(Graph& g, const EncoderCache& cache);

// ---- Rewards ------------------------------------------------------------------------

// R1 recall against impressions[cursor]; 0 once the impressions are used up.
// Advances the cursor.
double sentence_reward(const corpus::Sentence& abstracted, const std::vector<corpus::Sentence>& impressions,
                       std::size_t& cursor);

// 1 when `word` occurs in `keyword_indices` at a position >= cursor; the
// cursor then moves just past that position.
double word_reward(int word, const std::vector<int>& keyword_indices, std::size_t& cursor);

// R1 recall of the summary against the flattened impressions plus lambda
// times R1 recall of the selected words against the keyword tokens.
double global_reward(const std::vector<corpus::Sentence>& summary, const std::vector<corpus::Sentence>& impressions,
                     const std::vector<std::string>& selected_words, const std::vector<std::string>& keyword_words,
                     double lambda);

// ---- Rollouts -------------------------------------------------------------------------

struct TrajectoryStep {
  Level level = Level::kSentence;
  int index = 0;        // word index, sentence index or n for END
  double message = 0.0;
  Var log_prob;         // log probability of the active actor's action
  Var level_log_prob;   // log probability of the communicator's level decision
  double reward_w = 0.0;
  double reward_s = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  std::vector<int> sentences;  // selected, END excluded
  std::vector<int> words;
  std::vector<corpus::Sentence> summary;  // abstracted selections
  double global_reward = 0.0;             // already folded into the last step
  bool truncated = false;
  std::vector<Var> messages;              // communicator outputs, one per step
  std::size_t length() const { return steps.size(); }
};

enum class Mode { kSample, kGreedy };

struct RolloutOptions {
  Mode mode = Mode::kSample;
  double lambda = 0.1;
  int step_cap_factor = 2;
  bool detach_message = false;
  // Replays these choices instead of deciding (used for gradient checks).
  const std::vector<Choice>* forced = nullptr;
};

Trajectory rollout(Graph& g, ParamStore& params, const Episode& episode, const EncoderStates& enc,
                   const RolloutOptions& options, Rng* rng);

// Convenience wrapper with its own graph and encoder pass.
Trajectory rollout(ParamStore& params, const ExtractorConfig& config, const Episode& episode,
                   const RolloutOptions& options, Rng* rng);

int step_cap(const Episode& episode, int factor);

// ---- Returns, critic and advantages -----------------------------------------------------------

std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma);

struct ReturnsTable {
  std::vector<double> g_w;
  std::vector<double> g_s;
  // Single-sample Q estimate of the active agent at each step.
  std::vector<double> q;
};

ReturnsTable returns_and_q(const Trajectory& trajectory, double gamma);

// Critic output per step: one value per agent stream, stacked [V^w; V^s].
// V_j of a step is the row of the agent active at that step.
std::vector<Var> critic_values(Graph& g, ParamStore& params, const Episode& episode, const EncoderStates& enc,
                               std::size_t length);

struct CriticValues {
  std::vector<double> w;
  std::vector<double> s;
};
CriticValues critic_numbers(const std::vector<Var>& values);

// Per step: A_j = Q_j - V_j for the active agent, and the communicator's
// advantage (G^w_j + G^s_j) - (V^w_j + V^s_j).
struct AdvantageTable {
  std::vector<double> actor;
  std::vector<double> communicator;
};
AdvantageTable advantages(const Trajectory& trajectory, const ReturnsTable& returns, const CriticValues& values);

// ---- Updates ----------------------------------------------------------------------------------

struct UpdateStats {
  int step = 0;
  double mean_rg = 0.0;
  double mean_len = 0.0;
  double adv_s = 0.0;
  double adv_w = 0.0;
  double critic_loss = 0.0;
  double communicator_grad_norm = 0.0;
  int truncated = 0;
};

nlohmann::json stats_to_json(const UpdateStats& s);

// Actor loss -sum log pi * A (advantages constant), the communicator term,
// and critic loss sum (V^w - G^w)^2 + (V^s - G^s)^2 over a batch, followed by one Adam step on
// trainable_prefixes(). Throws NumericError on a non-finite loss.
UpdateStats dimac_update(ParamStore& params, const DimacConfig& config, const std::vector<const Episode*>& batch,
                         const std::vector<const EncoderCache*>& caches, nn::Adam& adam, Rng& rng);

struct TrainLog {
  std::vector<UpdateStats> updates;
};

TrainLog train_dimac(ParamStore& params, const ExtractorConfig& extractor_config, const DimacConfig& config,
                     const std::vector<Episode>& episodes,
                     const std::function<void(const UpdateStats&)>& on_update = {});

// Mean r^g over the first and last `fraction` of updates.
struct Improvement {
  double first = 0.0;
  double last = 0.0;
  double delta() const { return last - first; }
};
Improvement smoothed_improvement(const std::vector<UpdateStats>& updates, double fraction = 0.1);

// ---- Baseline invariance --------------------------------------------------------------------------

// One decision of the two-agent policy: the communicator picks the word agent
// with probability `message`, and the active agent samples from its softmax.
struct PolicySnapshot {
  std::vector<double> word_logits;
  std::vector<double> sentence_logits;
  double message = 0.5;
};

// Snapshot of the first decision of an episode.
PolicySnapshot policy_snapshot(ParamStore& params, const ExtractorConfig& config, const Episode& episode);

// Baseline b(level, action). A state-only baseline ignores both arguments.
using BaselineFn = std::function<double(Level, int)>;

struct InvarianceReport {
  std::vector<double> mean;            // per logit coordinate, word block first
  std::vector<double> standard_error;
  int samples = 0;
  bool passed = false;                 // every |mean| <= 3 standard errors
  int worst_coordinate = -1;
  double worst_z = 0.0;
};

// Monte Carlo estimate of E[grad log pi(a) * b] with respect to the logits.
// Only the active agent contributes a gradient term.
InvarianceReport baseline_invariance_check(const PolicySnapshot& policy, const BaselineFn& baseline, int n_samples,
                                           std::uint64_t seed);

// Total (summed over coordinates) variance of grad log pi * (R - b) with
// and without a state-only baseline b = E[R].
struct VarianceReport {
  double with_baseline = 0.0;
  double without_baseline = 0.0;
  double baseline = 0.0;
};
using RewardFn = std::function<double(Level, int)>;
VarianceReport baseline_variance(const PolicySnapshot& policy, const RewardFn& reward, int n_samples,
                                 std::uint64_t seed);

}  // namespace dimac::rl
