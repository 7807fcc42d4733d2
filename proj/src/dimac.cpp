#include "dimac/dimac.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dimac/error.hpp"
#include "dimac/rouge.hpp"

namespace dimac::rl {

using nlohmann::json;
using namespace dimac::nn;
using rouge::flatten;
using rouge::r1_recall;

json config_to_json(const DimacConfig& c) {
  return json{{"gamma", c.gamma},           {"lambda", c.lambda},         {"lr", c.lr},
              {"clip_norm", c.clip_norm},   {"batch_size", c.batch_size}, {"updates", c.updates},
              {"step_cap_factor", c.step_cap_factor},
              {"communicator_policy_gradient", c.communicator_policy_gradient}, {"seed", c.seed}};
}

DimacConfig config_from_json(const json& j) {
  DimacConfig c;
  c.gamma = j.at("gamma").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.lr = j.at("lr").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.updates = j.at("updates").get<int>();
  c.step_cap_factor = j.at("step_cap_factor").get<int>();
  c.communicator_policy_gradient = j.value("communicator_policy_gradient", true);
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

const std::vector<std::string>& trainable_prefixes() {
  static const std::vector<std::string> prefixes{"dec_word.", "dec_sent.", "switch.", "critic."};
  return prefixes;
}

void init_critic(ParamStore& params, const ExtractorConfig& config, Rng& rng) {
  if (params.contains("critic.value.W")) return;
  const int enc = config.encoder_dim();
  add_linear(params, "critic.init", enc, config.hidden, rng);
  add_lstm(params, "critic.lstm", config.decoder_input_dim(), config.hidden, rng);
  add_attention(params, "critic.attn_w", config.hidden, enc, config.attention_dim, rng);
  add_attention(params, "critic.attn_s", config.hidden, enc, config.attention_dim, rng);
  add_linear(params, "critic.value", config.hidden + 2 * enc, 2, rng);
  params.copy_prefix("dec_word.init.", "critic.init.");
  params.copy_prefix("dec_word.lstm.", "critic.lstm.");
  params.copy_prefix("dec_word.attn.", "critic.attn_w.");
}

Episode make_episode(const corpus::Report& report, const labels::InterleavedLabels& labels,
                     const std::vector<int>& keyword_indices, const corpus::Vocabulary& vocab,
                     const ExtractorConfig& config, const Rewriter& rewrite) {
  Episode e;
  e.report = report;
  e.encoded = extractor::encode_report(report, vocab, config);
  extractor::check_labels_fit(e.encoded, labels);
  e.labels = labels;
  e.keyword_indices = keyword_indices;
  std::sort(e.keyword_indices.begin(), e.keyword_indices.end());
  for (const auto& s : report.findings) e.abstracts.push_back(rewrite ? rewrite(s) : s);
  return e;
}

EncoderCache cache_encoder(ParamStore& params, const ExtractorConfig& config, const extractor::EncodedReport& report) {
  Graph g;
  const auto enc = extractor::encode_findings(g, params, config, report);
  return EncoderCache{enc.words.value(),    enc.sentences.value(),     enc.word_end.value(),
                      enc.sentence_end.value(), enc.sentence_conv.value(), enc.m, enc.n};
}

EncoderStates constant_states(Graph& g, const EncoderCache& cache) {
  EncoderStates s;
  s.words = g.constant(cache.words);
  s.sentences = g.constant(cache.sentences);
  s.word_end = g.constant(cache.word_end);
  s.sentence_end = g.constant(cache.sentence_end);
  s.sentence_conv = g.constant(cache.sentence_conv);
  s.m = cache.m;
  s.n = cache.n;
  return s;
}

// ---------------------------------------------------------------------------

double sentence_reward(const corpus::Sentence& abstracted, const std::vector<corpus::Sentence>& impressions,
                       std::size_t& cursor) {
  const std::size_t at = cursor++;
  if (at >= impressions.size()) return 0.0;
  return r1_recall(abstracted, impressions[at]);
}

double word_reward(int word, const std::vector<int>& keyword_indices, std::size_t& cursor) {
  for (std::size_t i = cursor; i < keyword_indices.size(); ++i) {
    if (keyword_indices[i] == word) {
      cursor = i + 1;
      return 1.0;
    }
  }
  return 0.0;
}

double global_reward(const std::vector<corpus::Sentence>& summary, const std::vector<corpus::Sentence>& impressions,
                     const std::vector<std::string>& selected_words, const std::vector<std::string>& keyword_words,
                     double lambda) {
  const auto flat_summary = flatten(summary);
  const auto flat_impressions = flatten(impressions);
  const double summary_recall = r1_recall(flat_summary, flat_impressions);
  const double keyword_recall = r1_recall(selected_words, keyword_words);
  return summary_recall + lambda * keyword_recall;
}

// ---------------------------------------------------------------------------

int step_cap(const Episode& episode, int factor) {
  return factor * (episode.encoded.n() + static_cast<int>(episode.keyword_indices.size()));
}

namespace {

int argmax(const Matrix& probs) {
  Eigen::Index best = 0;
  probs.col(0).maxCoeff(&best);
  return static_cast<int>(best);
}

int sample(const Matrix& probs, Rng& rng) {
  return static_cast<int>(rng.categorical(std::vector<double>(probs.data(), probs.data() + probs.size())));
}

Var level_log_prob(const extractor::StepScores& sc, Level level) {
  return log_sigmoid(level == Level::kWord ? sc.switch_logit : scale(sc.switch_logit, -1.0));
}

}  // namespace

Trajectory rollout(Graph& g, ParamStore& params, const Episode& episode, const EncoderStates& enc,
                   const RolloutOptions& options, Rng* rng) {
  if (options.mode == Mode::kSample && options.forced == nullptr && rng == nullptr) {
    throw Error("rollout: sampling needs a generator");
  }
  const auto keys = extractor::decoder_keys(g, params, enc);
  auto state = extractor::initial_state(g, params, enc);
  const int cap = step_cap(episode, options.step_cap_factor);
  Trajectory traj;
  std::size_t cursor_s = 0;
  std::size_t cursor_w = 0;
  bool ended = false;
  for (int j = 0; j < cap; ++j) {
    if (options.forced && static_cast<std::size_t>(j) >= options.forced->size()) break;
    const auto sc = extractor::score_step(g, params, enc, keys, state);
    const double q = sc.q.scalar();
    Choice choice;
    if (options.forced) {
      choice = (*options.forced)[static_cast<std::size_t>(j)];
    } else {
      const bool word = options.mode == Mode::kGreedy ? q >= 0.5 : rng->bernoulli(q);
      const auto& probs = word ? sc.word.probs.value() : sc.sentence.probs.value();
      choice.level = word ? Level::kWord : Level::kSentence;
      choice.index = options.mode == Mode::kGreedy ? argmax(probs) : sample(probs, *rng);
    }
    TrajectoryStep step;
    step.level = choice.level;
    step.index = choice.index;
    step.message = q;
    step.level_log_prob = level_log_prob(sc, choice.level);
    traj.messages.push_back(sc.q);
    if (choice.level == Level::kWord) {
      step.log_prob = pick(sc.word.log_probs, choice.index);
      step.reward_w = word_reward(choice.index, episode.keyword_indices, cursor_w);
      traj.words.push_back(choice.index);
    } else {
      step.log_prob = pick(sc.sentence.log_probs, choice.index);
      if (choice.index == enc.n) {
        traj.steps.push_back(step);
        ended = true;
        break;
      }
      const auto& abstracted = episode.abstracts.at(static_cast<std::size_t>(choice.index));
      step.reward_s = sentence_reward(abstracted, episode.report.impressions, cursor_s);
      traj.sentences.push_back(choice.index);
      traj.summary.push_back(abstracted);
    }
    if (!std::isfinite(step.log_prob.scalar())) throw NumericError("rollout: action with zero probability");
    traj.steps.push_back(step);
    state = extractor::advance(g, params, enc, state, sc, choice, options.detach_message);
  }
  traj.truncated = !ended;

  std::vector<std::string> selected;
  for (int w : traj.words) selected.push_back(episode.report.flat_findings[static_cast<std::size_t>(w)].token);
  std::vector<std::string> keywords;
  for (int k : episode.keyword_indices) keywords.push_back(episode.report.flat_findings[static_cast<std::size_t>(k)].token);
  traj.global_reward = global_reward(traj.summary, episode.report.impressions, selected, keywords, options.lambda);
  if (!traj.steps.empty()) {
    traj.steps.back().reward_w += traj.global_reward;
    traj.steps.back().reward_s += traj.global_reward;
  }
  return traj;
}

Trajectory rollout(ParamStore& params, const ExtractorConfig& config, const Episode& episode,
                   const RolloutOptions& options, Rng* rng) {
  Graph g;
  const auto enc = extractor::encode_findings(g, params, config, episode.encoded);
  return rollout(g, params, episode, enc, options, rng);
}

// ---------------------------------------------------------------------------

std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size(), 0.0);
  double next = 0.0;
  for (std::size_t j = rewards.size(); j-- > 0;) {
    next = rewards[j] + gamma * next;
    g[j] = next;
  }
  return g;
}

ReturnsTable returns_and_q(const Trajectory& trajectory, double gamma) {
  std::vector<double> rw;
  std::vector<double> rs;
  for (const auto& s : trajectory.steps) {
    rw.push_back(s.reward_w);
    rs.push_back(s.reward_s);
  }
  ReturnsTable t;
  t.g_w = discounted_returns(rw, gamma);
  t.g_s = discounted_returns(rs, gamma);
  for (std::size_t j = 0; j < trajectory.steps.size(); ++j) {
    t.q.push_back(trajectory.steps[j].level == Level::kWord ? t.g_w[j] : t.g_s[j]);
  }
  return t;
}

std::vector<Var> critic_values(Graph& g, ParamStore& params, const Episode& episode, const EncoderStates& enc,
                               std::size_t length) {
  std::vector<Var> values;
  Var state = pack_state(g, tanh(linear(g, params, "critic.init", enc.word_end)));
  Var proj_w = project_keys(g, params, "critic.attn_w", enc.words);
  Var proj_s = project_keys(g, params, "critic.attn_s", enc.sentences);
  const auto& steps = episode.labels.steps;
  for (std::size_t j = 0; j < length; ++j) {
    Var h = state_h(state);
    const auto aw = additive_attention(g, params, "critic.attn_w", h, enc.words, proj_w);
    const auto as = additive_attention(g, params, "critic.attn_s", h, enc.sentences, proj_s);
    const Var head_in[] = {h, aw.context, as.context};
    values.push_back(linear(g, params, "critic.value", concat_rows(head_in)));
    if (j + 1 == length) break;
    Var rep = enc.sentence_end;
    double indicator = 0.0;
    if (j < steps.size()) {
      const auto& t = steps[j];
      if (t.q == 1) {
        rep = column(enc.words, t.w);
        indicator = 1.0;
      } else if (t.s < enc.n) {
        rep = column(enc.sentences, t.s);
      }
    }
    const Var in[] = {aw.context, as.context, rep, g.constant_scalar(1.0 - indicator)};
    state = lstm_step(g, params, "critic.lstm", concat_rows(in), state);
  }
  return values;
}

CriticValues critic_numbers(const std::vector<Var>& values) {
  CriticValues v;
  for (const auto& x : values) {
    v.w.push_back(x.value()(0, 0));
    v.s.push_back(x.value()(1, 0));
  }
  return v;
}

AdvantageTable advantages(const Trajectory& trajectory, const ReturnsTable& returns, const CriticValues& values) {
  const std::size_t n = trajectory.steps.size();
  if (returns.q.size() != n || values.w.size() != n || values.s.size() != n) {
    throw Error("advantages: returns and values differ in length");
  }
  AdvantageTable a;
  for (std::size_t j = 0; j < n; ++j) {
    const bool word = trajectory.steps[j].level == Level::kWord;
    a.actor.push_back(returns.q[j] - (word ? values.w[j] : values.s[j]));
    a.communicator.push_back(returns.g_w[j] + returns.g_s[j] - values.w[j] - values.s[j]);
  }
  return a;
}

// ---------------------------------------------------------------------------

json stats_to_json(const UpdateStats& s) {
  return json{{"step", s.step}, {"mean_rg", s.mean_rg}, {"mean_len", s.mean_len}, {"adv_s", s.adv_s},
              {"adv_w", s.adv_w}};
}

UpdateStats dimac_update(ParamStore& params, const DimacConfig& config, const std::vector<const Episode*>& batch,
                         const std::vector<const EncoderCache*>& caches, Adam& adam, Rng& rng) {
  if (batch.empty()) throw Error("dimac_update: empty batch");
  if (caches.size() != batch.size()) throw Error("dimac_update: one encoder cache per episode is required");
  UpdateStats stats;
  double adv_s = 0.0;
  double adv_w = 0.0;
  int n_s = 0;
  int n_w = 0;
  const double weight = 1.0 / static_cast<double>(batch.size());
  RolloutOptions opt;
  opt.lambda = config.lambda;
  opt.step_cap_factor = config.step_cap_factor;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Graph g;
    const auto enc = constant_states(g, *caches[b]);
    const auto traj = rollout(g, params, *batch[b], enc, opt, &rng);
    const auto values = critic_values(g, params, *batch[b], enc, traj.length());
    const auto returns = returns_and_q(traj, config.gamma);
    const auto adv = advantages(traj, returns, critic_numbers(values));

    std::vector<Var> terms;
    double critic = 0.0;
    for (std::size_t j = 0; j < traj.length(); ++j) {
      const auto& step = traj.steps[j];
      terms.push_back(scale(step.log_prob, -adv.actor[j]));
      if (config.communicator_policy_gradient) terms.push_back(scale(step.level_log_prob, -adv.communicator[j]));
      Matrix target(2, 1);
      target << returns.g_w[j], returns.g_s[j];
      Var diff = sub(values[j], g.constant(target));
      Var sq = sum(mul(diff, diff));
      terms.push_back(sq);
      critic += sq.scalar();
      if (step.level == Level::kWord) {
        adv_w += adv.actor[j];
        ++n_w;
      } else {
        adv_s += adv.actor[j];
        ++n_s;
      }
    }
    Var loss = scale(sum(concat_rows(terms)), weight);
    if (!std::isfinite(loss.scalar())) throw NumericError("dimac_update: non-finite loss on report " + batch[b]->report.id);
    g.backward(loss);
    stats.mean_rg += traj.global_reward * weight;
    stats.mean_len += static_cast<double>(traj.length()) * weight;
    stats.critic_loss += critic * weight;
    stats.truncated += traj.truncated ? 1 : 0;
  }
  stats.adv_s = n_s > 0 ? adv_s / n_s : 0.0;
  stats.adv_w = n_w > 0 ? adv_w / n_w : 0.0;
  stats.communicator_grad_norm = params.grad_norm("switch.");
  adam.step(params);
  return stats;
}

TrainLog train_dimac(ParamStore& params, const ExtractorConfig& extractor_config, const DimacConfig& config,
                     const std::vector<Episode>& episodes, const std::function<void(const UpdateStats&)>& on_update) {
  if (episodes.empty()) throw Error("train_dimac: no episodes");
  Rng init_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  init_critic(params, extractor_config, init_rng);
  std::vector<EncoderCache> caches;
  caches.reserve(episodes.size());
  for (const auto& e : episodes) caches.push_back(cache_encoder(params, extractor_config, e.encoded));

  Adam adam(AdamConfig{.lr = config.lr, .clip_norm = config.clip_norm}, trainable_prefixes());
  Rng rng(config.seed);
  std::vector<std::size_t> order(episodes.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t next = 0;
  TrainLog log;
  for (int u = 1; u <= config.updates; ++u) {
    std::vector<const Episode*> batch;
    std::vector<const EncoderCache*> batch_caches;
    for (int b = 0; b < config.batch_size; ++b) {
      if (next == order.size()) {
        rng.shuffle(order);
        next = 0;
      }
      batch.push_back(&episodes[order[next]]);
      batch_caches.push_back(&caches[order[next]]);
      ++next;
    }
    auto stats = dimac_update(params, config, batch, batch_caches, adam, rng);
    stats.step = u;
    log.updates.push_back(stats);
    if (on_update) on_update(stats);
  }
  return log;
}

Improvement smoothed_improvement(const std::vector<UpdateStats>& updates, double fraction) {
  Improvement out;
  if (updates.empty()) return out;
  const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(updates.size()))));
  for (std::size_t i = 0; i < k; ++i) {
    out.first += updates[i].mean_rg;
    out.last += updates[updates.size() - 1 - i].mean_rg;
  }
  out.first /= static_cast<double>(k);
  out.last /= static_cast<double>(k);
  return out;
}

// ---------------------------------------------------------------------------

PolicySnapshot policy_snapshot(ParamStore& params, const ExtractorConfig& config, const Episode& episode) {
  Graph g;
  const auto enc = extractor::encode_findings(g, params, config, episode.encoded);
  const auto keys = extractor::decoder_keys(g, params, enc);
  const auto state = extractor::initial_state(g, params, enc);
  const auto sc = extractor::score_step(g, params, enc, keys, state);
  const Matrix& w = sc.word.logits.value();
  const Matrix& s = sc.sentence.logits.value();
  return PolicySnapshot{std::vector<double>(w.data(), w.data() + w.size()),
                        std::vector<double>(s.data(), s.data() + s.size()), sc.q.scalar()};
}

namespace {

std::vector<double> softmax_of(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (auto& x : p) x /= z;
  return p;
}

struct Sampled {
  Level level;
  int action;
};

// Draws one decision and writes grad log pi of the active agent into `grad`
// (word block first); the paused agent's block stays zero.
Sampled draw(const PolicySnapshot& policy, const std::vector<double>& pw, const std::vector<double>& ps, Rng& rng,
             std::vector<double>& grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const bool word = rng.bernoulli(policy.message);
  const auto& p = word ? pw : ps;
  const int a = static_cast<int>(rng.categorical(p));
  const std::size_t offset = word ? 0 : pw.size();
  for (std::size_t i = 0; i < p.size(); ++i) grad[offset + i] = (static_cast<int>(i) == a ? 1.0 : 0.0) - p[i];
  return {word ? Level::kWord : Level::kSentence, a};
}

}  // namespace

InvarianceReport baseline_invariance_check(const PolicySnapshot& policy, const BaselineFn& baseline, int n_samples,
                                           std::uint64_t seed) {
  if (n_samples < 2) throw Error("baseline_invariance_check: need at least two samples");
  if (policy.word_logits.empty() || policy.sentence_logits.empty()) {
    throw Error("baseline_invariance_check: empty action set");
  }
  const auto pw = softmax_of(policy.word_logits);
  const auto ps = softmax_of(policy.sentence_logits);
  const std::size_t dims = pw.size() + ps.size();
  std::vector<double> grad(dims);
  // Welford running moments.
  std::vector<double> means(dims, 0.0);
  std::vector<double> m2(dims, 0.0);
  Rng rng(seed);
  for (int i = 0; i < n_samples; ++i) {
    const auto s = draw(policy, pw, ps, rng, grad);
    const double b = baseline(s.level, s.action);
    for (std::size_t d = 0; d < dims; ++d) {
      const double x = grad[d] * b;
      const double delta = x - means[d];
      means[d] += delta / (i + 1.0);
      m2[d] += delta * (x - means[d]);
    }
  }
  InvarianceReport r;
  r.samples = n_samples;
  r.passed = true;
  const double n = n_samples;
  for (std::size_t d = 0; d < dims; ++d) {
    const double mean = means[d];
    const double var = m2[d] / (n - 1.0);
    const double se = std::sqrt(var / n);
    r.mean.push_back(mean);
    r.standard_error.push_back(se);
    const double z = se > 0.0 ? std::abs(mean) / se : (std::abs(mean) > 1e-12 ? INFINITY : 0.0);
    if (z > r.worst_z || r.worst_coordinate < 0) {
      r.worst_z = z;
      r.worst_coordinate = static_cast<int>(d);
    }
    if (std::abs(mean) > 3.0 * se + 1e-12) r.passed = false;
  }
  return r;
}

VarianceReport baseline_variance(const PolicySnapshot& policy, const RewardFn& reward, int n_samples,
                                 std::uint64_t seed) {
  if (n_samples < 2) throw Error("baseline_variance: need at least two samples");
  const auto pw = softmax_of(policy.word_logits);
  const auto ps = softmax_of(policy.sentence_logits);
  VarianceReport out;
  for (std::size_t i = 0; i < pw.size(); ++i) out.baseline += policy.message * pw[i] * reward(Level::kWord, static_cast<int>(i));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out.baseline += (1.0 - policy.message) * ps[i] * reward(Level::kSentence, static_cast<int>(i));
  }
  const std::size_t dims = pw.size() + ps.size();
  std::vector<double> grad(dims);
  std::vector<double> s_with(dims, 0.0), sq_with(dims, 0.0), s_without(dims, 0.0), sq_without(dims, 0.0);
  Rng rng(seed);
  for (int i = 0; i < n_samples; ++i) {
    const auto s = draw(policy, pw, ps, rng, grad);
    const double r = reward(s.level, s.action);
    for (std::size_t d = 0; d < dims; ++d) {
      const double a = grad[d] * (r - out.baseline);
      const double c = grad[d] * r;
      s_with[d] += a;
      sq_with[d] += a * a;
      s_without[d] += c;
      sq_without[d] += c * c;
    }
  }
  const double n = n_samples;
  for (std::size_t d = 0; d < dims; ++d) {
    out.with_baseline += (sq_with[d] - s_with[d] * s_with[d] / n) / (n - 1.0);
    out.without_baseline += (sq_without[d] - s_without[d] * s_without[d] / n) / (n - 1.0);
  }
  return out;
}

}  // namespace dimac::rl
