#include "dimac/abstractor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dimac/error.hpp"
#include "dimac/nn/optim.hpp"

namespace dimac::abstractor {

using nlohmann::json;
using namespace dimac::nn;

namespace {

// Floor inside the log so that a saturated generation gate cannot produce an
// infinite loss on a copied token.
constexpr double kLogFloor = 1e-12;

int embed_id(int id, int vocab_size) { return id < vocab_size ? id : corpus::Vocabulary::kUnk; }

}  // namespace

json config_to_json(const AbstractorConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"embed_dim", c.embed_dim},
              {"hidden", c.hidden},         {"attention_dim", c.attention_dim},
              {"coverage_weight", c.coverage_weight}, {"max_length", c.max_length}};
}

AbstractorConfig config_from_json(const json& j) {
  AbstractorConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.attention_dim = j.at("attention_dim").get<int>();
  c.coverage_weight = j.at("coverage_weight").get<double>();
  c.max_length = j.at("max_length").get<int>();
  return c;
}

void init_abstractor(ParamStore& params, const AbstractorConfig& c, Rng& rng) {
  if (c.vocab_size <= corpus::Vocabulary::kReserved) throw Error("abstractor: vocabulary too small");
  const int enc = 2 * c.hidden;
  params.add("abs.emb", uniform_matrix(c.embed_dim, c.vocab_size, rng));
  add_bilstm(params, "abs.enc", c.embed_dim, c.hidden, rng);
  add_linear(params, "abs.init", enc, c.hidden, rng);
  add_lstm(params, "abs.dec", c.embed_dim + enc, c.hidden, rng);
  add_attention(params, "abs.attn", c.hidden, enc, c.attention_dim, rng);
  params.add("abs.attn.wc", glorot_matrix(c.attention_dim, 1, rng));
  add_linear(params, "abs.out", c.hidden + enc, c.vocab_size, rng);
  add_linear(params, "abs.gen", enc + c.hidden + c.embed_dim, 1, rng);
}

int Example::extended_size() const { return vocab_size + static_cast<int>(oov.size()); }

Example make_source(const corpus::Sentence& source, const corpus::Vocabulary& vocab) {
  Example ex;
  ex.vocab_size = static_cast<int>(vocab.size());
  for (const auto& t : source) {
    if (vocab.contains(t)) {
      ex.source.push_back(vocab.id(t));
      continue;
    }
    auto it = std::find(ex.oov.begin(), ex.oov.end(), t);
    if (it == ex.oov.end()) it = ex.oov.insert(ex.oov.end(), t);
    ex.source.push_back(ex.vocab_size + static_cast<int>(it - ex.oov.begin()));
  }
  return ex;
}

Example make_example(const corpus::Sentence& source, const corpus::Sentence& target,
                     const corpus::Vocabulary& vocab) {
  Example ex = make_source(source, vocab);
  for (const auto& t : target) {
    if (vocab.contains(t)) {
      ex.target.push_back(vocab.id(t));
      continue;
    }
    auto it = std::find(ex.oov.begin(), ex.oov.end(), t);
    ex.target.push_back(it == ex.oov.end() ? corpus::Vocabulary::kUnk
                                           : ex.vocab_size + static_cast<int>(it - ex.oov.begin()));
  }
  ex.target.push_back(corpus::Vocabulary::kEnd);
  return ex;
}

SourceEncoding encode_source(Graph& g, ParamStore& params, const Example& ex) {
  if (ex.source.empty()) throw Error("abstractor: empty source sentence");
  std::vector<int> ids;
  ids.reserve(ex.source.size());
  for (int id : ex.source) ids.push_back(embed_id(id, ex.vocab_size));
  auto out = bilstm_encode(g, params, "abs.enc", embed_columns(g, params.at("abs.emb"), ids));
  SourceEncoding src;
  src.states = out.states;
  src.end = out.end;
  src.projected = project_keys(g, params, "abs.attn", out.states);
  src.length = static_cast<int>(ex.source.size());
  return src;
}

PgState initial_pg_state(Graph& g, ParamStore& params, const SourceEncoding& src) {
  PgState s;
  s.decoder = pack_state(g, tanh(linear(g, params, "abs.init", src.end)));
  s.coverage = g.constant(Matrix::Zero(src.length, 1));
  s.context = g.constant(Matrix::Zero(src.states.rows(), 1));
  return s;
}

PgStep pg_step(Graph& g, ParamStore& params, const AbstractorConfig& config, const SourceEncoding& src,
               const Example& ex, const PgState& state, int prev) {
  (void)config;
  const int prev_id = embed_id(prev, ex.vocab_size);
  Var x = embed_columns(g, params.at("abs.emb"), std::span<const int>(&prev_id, 1));
  const Var dec_in[] = {x, state.context};
  Var dec = lstm_step(g, params, "abs.dec", concat_rows(dec_in), state.decoder);
  Var s = state_h(dec);

  Var wd = g.param(params.at("abs.attn.WD"));
  Var wc = g.param(params.at("abs.attn.wc"));
  Var v = g.param(params.at("abs.attn.v"));
  Var features = add(src.projected, matmul(wc, transpose(state.coverage)));
  Var hidden = tanh(add_bias_cols(features, matmul(wd, s)));
  Var attention = softmax(transpose(matmul(v, hidden)));
  Var context = matmul(src.states, attention);

  PgStep out;
  out.attention = attention;
  out.coverage_loss = sum(elementwise_min(attention, state.coverage));
  const Var out_in[] = {s, context};
  Var p_vocab = softmax(linear(g, params, "abs.out", concat_rows(out_in)));
  const Var gen_in[] = {context, s, x};
  out.p_gen = sigmoid(linear(g, params, "abs.gen", concat_rows(gen_in)));
  const Eigen::Index ext = ex.extended_size();
  Var generated = pad_rows(matmul(p_vocab, out.p_gen), ext);
  Var copied = scatter_add(matmul(attention, add_scalar(scale(out.p_gen, -1.0), 1.0)), ex.source, ext);
  out.distribution = add(generated, copied);
  out.next = PgState{dec, add(state.coverage, attention), context};
  return out;
}

PairLoss pair_loss(Graph& g, ParamStore& params, const AbstractorConfig& config, const Example& ex) {
  if (ex.target.empty()) throw Error("abstractor: empty target");
  const SourceEncoding src = encode_source(g, params, ex);
  PgState state = initial_pg_state(g, params, src);
  std::vector<Var> nll;
  std::vector<Var> cov;
  PairLoss out;
  int prev = corpus::Vocabulary::kStart;
  for (int y : ex.target) {
    PgStep step = pg_step(g, params, config, src, ex, state, prev);
    Var term = scale(log(add_scalar(pick(step.distribution, y), kLogFloor)), -1.0);
    nll.push_back(term);
    cov.push_back(step.coverage_loss);
    out.nll += term.scalar();
    out.coverage += step.coverage_loss.scalar();
    state = step.next;
    prev = y;
  }
  out.tokens = static_cast<int>(ex.target.size());
  Var total = add(sum(concat_rows(nll)), scale(sum(concat_rows(cov)), config.coverage_weight));
  out.total = scale(total, 1.0 / out.tokens);
  return out;
}

std::vector<SentencePair> matched_pairs(const corpus::Report& report, const labels::MatchOptions& options) {
  std::vector<SentencePair> out;
  if (report.findings.empty() || report.impressions.empty()) return out;
  const auto match = labels::greedy_match(report.findings, report.impressions, options);
  for (std::size_t i = 0; i < match.indices.size(); ++i) {
    out.push_back({report.findings[static_cast<std::size_t>(match.indices[i])], report.impressions[i]});
  }
  return out;
}

Evaluation evaluate(ParamStore& params, const AbstractorConfig& config, const std::vector<Example>& data) {
  Evaluation e;
  double nll = 0.0;
  double cov = 0.0;
  long tokens = 0;
  for (const auto& ex : data) {
    Graph g;
    const auto l = pair_loss(g, params, config, ex);
    nll += l.nll;
    cov += l.coverage;
    tokens += l.tokens;
  }
  if (tokens > 0) {
    e.nll_per_token = nll / static_cast<double>(tokens);
    e.coverage_per_token = cov / static_cast<double>(tokens);
  }
  return e;
}

TrainResult train_abstractor(ParamStore& params, const AbstractorConfig& config, const std::vector<Example>& train,
                             const std::vector<Example>& validation, const TrainOptions& options,
                             const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw Error("train_abstractor: no sentence pairs");
  const auto& eval_set = validation.empty() ? train : validation;
  TrainResult result;
  Rng rng(options.seed);
  Adam adam(AdamConfig{.lr = options.lr, .clip_norm = options.clip_norm}, {"abs."});

  EpochLog initial{0, 0.0, evaluate(params, config, eval_set).nll_per_token};
  result.history.push_back(initial);
  if (on_epoch) on_epoch(initial);
  result.best_validation_nll = initial.validation_nll;
  ParamStore best = params;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(std::max(1, options.batch_size));
  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t end = std::min(order.size(), b + batch);
      for (std::size_t i = b; i < end; ++i) {
        Graph g;
        const auto l = pair_loss(g, params, config, train[order[i]]);
        if (!std::isfinite(l.total.scalar())) {
          throw NumericError("train_abstractor: non-finite loss in epoch " + std::to_string(epoch));
        }
        epoch_loss += l.total.scalar();
        g.backward(scale(l.total, 1.0 / static_cast<double>(end - b)));
      }
      adam.step(params);
    }
    EpochLog log{epoch, epoch_loss / static_cast<double>(train.size()),
                 evaluate(params, config, eval_set).nll_per_token};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (log.validation_nll < result.best_validation_nll) {
      result.best_validation_nll = log.validation_nll;
      result.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      break;
    }
  }
  params = best;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

struct Beam {
  Hypothesis hyp;
  PgState state;
  int prev = corpus::Vocabulary::kStart;
};

bool selectable(int id) {
  return id != corpus::Vocabulary::kPad && id != corpus::Vocabulary::kStart;
}

// Ranks finished hypotheses by normalized score; earlier candidates win ties.
const Hypothesis& best_of(const std::vector<Hypothesis>& hyps) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < hyps.size(); ++i) {
    if (hyps[i].score() > hyps[best].score()) best = i;
  }
  return hyps[best];
}

}  // namespace

std::vector<Hypothesis> beam_search(ParamStore& params, const AbstractorConfig& config, const Example& ex, int beam) {
  if (beam < 1) throw Error("beam_search: beam width must be positive");
  Graph g;
  const SourceEncoding src = encode_source(g, params, ex);
  std::vector<Beam> alive{Beam{Hypothesis{}, initial_pg_state(g, params, src)}};
  std::vector<Hypothesis> finished;

  struct Candidate {
    std::size_t parent;
    int token;
    double log_prob;
  };
  for (int t = 0; t < config.max_length && !alive.empty(); ++t) {
    std::vector<Candidate> candidates;
    std::vector<PgState> next_states;
    for (std::size_t b = 0; b < alive.size(); ++b) {
      PgStep step = pg_step(g, params, config, src, ex, alive[b].state, alive[b].prev);
      next_states.push_back(step.next);
      const Matrix& dist = step.distribution.value();
      std::vector<int> ids;
      for (int i = 0; i < dist.rows(); ++i) {
        if (selectable(i)) ids.push_back(i);
      }
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(beam), ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                        [&](int a, int c) { return dist(a, 0) > dist(c, 0) || (dist(a, 0) == dist(c, 0) && a < c); });
      for (std::size_t i = 0; i < k; ++i) {
        candidates.push_back({b, ids[i], alive[b].hyp.log_prob + std::log(std::max(dist(ids[i], 0), kLogFloor))});
      }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& c) { return a.log_prob > c.log_prob; });
    std::vector<Beam> next;
    for (const auto& c : candidates) {
      if (static_cast<int>(next.size()) >= beam) break;
      Hypothesis h = alive[c.parent].hyp;
      h.log_prob = c.log_prob;
      ++h.length;
      if (c.token == corpus::Vocabulary::kEnd) {
        h.finished = true;
        finished.push_back(h);
        if (static_cast<int>(finished.size()) >= beam) break;
        continue;
      }
      h.ids.push_back(c.token);
      next.push_back(Beam{h, next_states[c.parent], c.token});
    }
    if (static_cast<int>(finished.size()) >= beam) {
      alive.clear();
      break;
    }
    alive = std::move(next);
  }
  for (const auto& b : alive) finished.push_back(b.hyp);
  std::stable_sort(finished.begin(), finished.end(),
                   [](const Hypothesis& a, const Hypothesis& c) { return a.score() > c.score(); });
  return finished;
}

Hypothesis greedy_decode(ParamStore& params, const AbstractorConfig& config, const Example& ex) {
  return beam_search(params, config, ex, 1).front();
}

std::vector<std::string> resolve(const Example& ex, const corpus::Vocabulary& vocab, const std::vector<int>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) {
    out.push_back(id < ex.vocab_size ? vocab.token(id) : ex.oov.at(static_cast<std::size_t>(id - ex.vocab_size)));
  }
  return out;
}

Summary abstract_sentence(ParamStore& params, const AbstractorConfig& config, const corpus::Vocabulary& vocab,
                          const corpus::Sentence& source, int beam) {
  Summary out;
  if (source.empty()) {
    out.empty_source = true;
    return out;
  }
  const Example ex = make_source(source, vocab);
  auto hyps = beam_search(params, config, ex, beam);
  if (beam > 1) hyps.push_back(greedy_decode(params, config, ex));
  out.best = best_of(hyps);
  out.tokens = resolve(ex, vocab, out.best.ids);
  return out;
}

double token_accuracy(const std::vector<std::string>& decoded, const corpus::Sentence& target) {
  const std::size_t denom = std::max(decoded.size(), target.size());
  if (denom == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(decoded.size(), target.size()); ++i) hits += decoded[i] == target[i];
  return static_cast<double>(hits) / static_cast<double>(denom);
}

nn::Checkpoint make_checkpoint(const ParamStore& params, const AbstractorConfig& config,
                               const corpus::Vocabulary& vocab) {
  nn::Checkpoint ckpt;
  ckpt.kind = "abstractor";
  ckpt.meta["model"] = config_to_json(config).dump();
  ckpt.vocabulary = vocab.tokens();
  ckpt.params = params;
  return ckpt;
}

AbstractorConfig checkpoint_config(const nn::Checkpoint& ckpt) {
  auto it = ckpt.meta.find("model");
  if (it == ckpt.meta.end()) throw Error("abstractor checkpoint has no model configuration");
  return config_from_json(json::parse(it->second));
}

}  // namespace dimac::abstractor
