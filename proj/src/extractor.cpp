#include "dimac/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <sstream>

#include "dimac/error.hpp"
#include "dimac/nn/optim.hpp"

namespace dimac::extractor {

using nlohmann::json;
using namespace dimac::nn;

json config_to_json(const ExtractorConfig& c) {
  return json{{"vocab_size", c.vocab_size},       {"embed_dim", c.embed_dim},
              {"position_dim", c.position_dim},   {"max_positions", c.max_positions},
              {"hidden", c.hidden},               {"conv_filters", c.conv_filters},
              {"windows", c.windows},             {"attention_dim", c.attention_dim},
              {"switch_hidden", c.switch_hidden}};
}

ExtractorConfig config_from_json(const json& j) {
  ExtractorConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.position_dim = j.at("position_dim").get<int>();
  c.max_positions = j.at("max_positions").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.conv_filters = j.at("conv_filters").get<int>();
  c.windows = j.at("windows").get<std::vector<int>>();
  c.attention_dim = j.at("attention_dim").get<int>();
  c.switch_hidden = j.at("switch_hidden").get<int>();
  return c;
}

void init_extractor(ParamStore& params, const ExtractorConfig& c, Rng& rng) {
  if (c.vocab_size <= 0) throw Error("extractor: vocab_size must be positive");
  const int enc = c.encoder_dim();
  params.add("emb.word", uniform_matrix(c.embed_dim, c.vocab_size, rng));
  params.add("emb.pos", uniform_matrix(c.position_dim, c.max_positions, rng));
  add_bilstm(params, "enc_word", c.embed_dim, c.hidden, rng);
  add_conv_sentence(params, "conv", c.embed_dim + c.position_dim, c.windows, c.conv_filters, rng);
  add_bilstm(params, "enc_sent", static_cast<Eigen::Index>(c.windows.size()) * c.conv_filters, c.hidden, rng);
  for (const std::string dec : {"dec_word", "dec_sent"}) {
    add_linear(params, dec + ".init", enc, c.hidden, rng);
    add_lstm(params, dec + ".lstm", c.decoder_input_dim(), c.hidden, rng);
    add_attention(params, dec + ".attn", c.hidden, enc, c.attention_dim, rng);
  }
  params.add("dec_sent.end_key", uniform_matrix(enc, 1, rng));
  add_linear(params, "switch.l1", 2 * c.hidden + 2 * enc, c.switch_hidden, rng);
  add_linear(params, "switch.l2", c.switch_hidden, 1, rng);
}

EncodedReport encode_report(const corpus::Report& report, const corpus::Vocabulary& vocab,
                            const ExtractorConfig& config) {
  EncodedReport out;
  out.id = report.id;
  for (const auto& t : report.flat_findings) {
    out.word_ids.push_back(vocab.id(t.token));
    out.positions.push_back(std::min(t.position, config.max_positions - 1));
    out.word_sentence.push_back(t.sentence);
  }
  out.sentence_offsets = report.sentence_offsets();
  for (const auto& s : report.findings) out.sentence_lengths.push_back(static_cast<int>(s.size()));
  return out;
}

EncoderStates encode_findings(Graph& g, ParamStore& params, const ExtractorConfig& config,
                              const EncodedReport& report) {
  if (report.m() == 0 || report.n() == 0) throw Error("encode_findings: report " + report.id + " has empty findings");
  EncoderStates out;
  out.m = report.m();
  out.n = report.n();
  Parameter& words = params.at("emb.word");
  Parameter& pos = params.at("emb.pos");
  Var word_embs = embed_columns(g, words, report.word_ids);
  auto wenc = bilstm_encode(g, params, "enc_word", word_embs);
  out.words = wenc.states;
  out.word_end = wenc.end;

  std::vector<Var> sentence_vectors;
  sentence_vectors.reserve(static_cast<std::size_t>(report.n()));
  for (int k = 0; k < report.n(); ++k) {
    const auto off = static_cast<std::size_t>(report.sentence_offsets[static_cast<std::size_t>(k)]);
    const auto len = static_cast<std::size_t>(report.sentence_lengths[static_cast<std::size_t>(k)]);
    if (len == 0) throw Error("encode_findings: report " + report.id + " has an empty sentence");
    std::span<const int> ids(report.word_ids.data() + off, len);
    std::span<const int> ps(report.positions.data() + off, len);
    sentence_vectors.push_back(
        conv_sentence_encode(g, params, "conv", embed_columns(g, words, ids), embed_columns(g, pos, ps), config.windows));
  }
  out.sentence_conv = concat_cols(sentence_vectors);
  auto senc = bilstm_encode(g, params, "enc_sent", out.sentence_conv);
  out.sentences = senc.states;
  out.sentence_end = senc.end;
  return out;
}

DecoderKeys decoder_keys(Graph& g, ParamStore& params, const EncoderStates& enc) {
  DecoderKeys k;
  k.word_keys = enc.words;
  k.word_proj = project_keys(g, params, "dec_word.attn", enc.words);
  const Var cols[] = {enc.sentences, g.param(params.at("dec_sent.end_key"))};
  k.sentence_keys = concat_cols(cols);
  k.sentence_proj = project_keys(g, params, "dec_sent.attn", k.sentence_keys);
  return k;
}

ExtractorState initial_state(Graph& g, ParamStore& params, const EncoderStates& enc) {
  ExtractorState s;
  s.word_state = pack_state(g, tanh(linear(g, params, "dec_word.init", enc.word_end)));
  s.sentence_state = pack_state(g, tanh(linear(g, params, "dec_sent.init", enc.sentence_end)));
  s.selected.assign(static_cast<std::size_t>(enc.n), false);
  return s;
}

Var switch_probability(Graph& g, ParamStore& params, Var word_h, Var word_context, Var sentence_h,
                       Var sentence_context) {
  const Var parts[] = {word_h, word_context, sentence_h, sentence_context};
  Var hidden = tanh(linear(g, params, "switch.l1", concat_rows(parts)));
  return sigmoid(linear(g, params, "switch.l2", hidden));
}

StepScores score_step(Graph& g, ParamStore& params, const EncoderStates& enc, const DecoderKeys& keys,
                      const ExtractorState& state) {
  StepScores out;
  Var hw = state_h(state.word_state);
  Var hs = state_h(state.sentence_state);
  out.word = additive_attention(g, params, "dec_word.attn", hw, keys.word_keys, keys.word_proj);
  const auto slots = static_cast<std::size_t>(enc.n) + 1;
  std::unique_ptr<bool[]> mask(new bool[slots]);
  for (std::size_t k = 0; k < slots; ++k) mask[k] = k == slots - 1 || !state.selected[k];
  const std::span<const bool> m(mask.get(), slots);
  out.sentence = additive_attention(g, params, "dec_sent.attn", hs, keys.sentence_keys, keys.sentence_proj, m);
  const Var parts[] = {hw, out.word.context, hs, out.sentence.context};
  Var hidden = tanh(linear(g, params, "switch.l1", concat_rows(parts)));
  out.switch_logit = linear(g, params, "switch.l2", hidden);
  out.q = sigmoid(out.switch_logit);
  return out;
}

ExtractorState advance(Graph& g, ParamStore& params, const EncoderStates& enc, const ExtractorState& state,
                       const StepScores& scores, const Choice& choice, bool detach_message) {
  ExtractorState next = state;
  Var word_rep = enc.word_end;
  Var sentence_rep = enc.sentence_end;
  if (choice.level == Level::kWord) {
    if (choice.index < 0 || choice.index >= enc.m) throw Error("extractor_step: word index out of range");
    word_rep = column(enc.words, choice.index);
    next.word_history.push_back(choice.index);
  } else {
    if (choice.index < 0 || choice.index >= enc.n) {
      throw Error("extractor_step: sentence index " + std::to_string(choice.index) + " is not selectable");
    }
    if (state.selected[static_cast<std::size_t>(choice.index)]) {
      throw Error("extractor_step: sentence " + std::to_string(choice.index) + " already selected");
    }
    sentence_rep = column(enc.sentences, choice.index);
    next.selected[static_cast<std::size_t>(choice.index)] = true;
    next.sentence_history.push_back(choice.index);
  }
  Var msg = detach_message ? g.constant(scores.q.value()) : scores.q;
  Var inv = add_scalar(scale(msg, -1.0), 1.0);
  const Var sent_in[] = {scores.word.context, scores.sentence.context, sentence_rep, msg};
  const Var word_in[] = {scores.word.context, scores.sentence.context, word_rep, inv};
  next.sentence_state = lstm_step(g, params, "dec_sent.lstm", concat_rows(sent_in), state.sentence_state);
  next.word_state = lstm_step(g, params, "dec_word.lstm", concat_rows(word_in), state.word_state);
  ++next.step;
  return next;
}

void check_labels_fit(const EncodedReport& report, const labels::InterleavedLabels& labels) {
  if (labels.steps.empty()) throw Error("labels for " + report.id + " are empty");
  for (const auto& t : labels.steps) {
    if (t.q == 1 ? (t.w < 0 || t.w >= report.m()) : (t.s < 0 || t.s > report.n())) {
      throw Error("labels for " + report.id + " do not fit the report");
    }
  }
  const auto& last = labels.steps.back();
  if (last.q != 0 || last.s != report.n()) throw Error("labels for " + report.id + " do not end with END");
}

Var mle_loss(Graph& g, ParamStore& params, const ExtractorConfig& config, const EncodedReport& report,
             const labels::InterleavedLabels& labels, LossBreakdown* breakdown) {
  check_labels_fit(report, labels);
  const EncoderStates enc = encode_findings(g, params, config, report);
  const DecoderKeys keys = decoder_keys(g, params, enc);
  ExtractorState state = initial_state(g, params, enc);
  std::vector<Var> terms;
  LossBreakdown local;
  for (const auto& t : labels.steps) {
    const StepScores sc = score_step(g, params, enc, keys, state);
    if (t.q == 1) {
      Var pick_term = scale(pick(sc.word.log_probs, t.w), -1.0);
      Var switch_term = scale(log_sigmoid(sc.switch_logit), -1.0);
      local.word += pick_term.scalar();
      local.switch_term += switch_term.scalar();
      terms.push_back(pick_term);
      terms.push_back(switch_term);
    } else {
      Var pick_term = scale(pick(sc.sentence.log_probs, t.s), -1.0);
      Var switch_term = scale(log_sigmoid(scale(sc.switch_logit, -1.0)), -1.0);
      local.sentence += pick_term.scalar();
      local.switch_term += switch_term.scalar();
      terms.push_back(pick_term);
      terms.push_back(switch_term);
    }
    ++local.steps;
    if (t.q == 0 && t.s == enc.n) break;
    state = advance(g, params, enc, state, sc,
                    t.q == 1 ? Choice{Level::kWord, t.w} : Choice{Level::kSentence, t.s});
  }
  if (breakdown) *breakdown = local;
  Var total = concat_rows(terms);
  return sum(total);
}

// ---------------------------------------------------------------------------

double mean_loss(ParamStore& params, const ExtractorConfig& config, const std::vector<TrainingExample>& data) {
  if (data.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : data) {
    Graph g;
    total += mle_loss(g, params, config, ex.report, ex.labels).scalar();
  }
  return total / static_cast<double>(data.size());
}

MleResult train_extractor_mle(ParamStore& params, const ExtractorConfig& config,
                              const std::vector<TrainingExample>& train,
                              const std::vector<TrainingExample>& validation, const MleOptions& options,
                              const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.empty()) throw Error("train_extractor_mle: empty training set");
  MleResult result;
  Rng rng(options.seed);
  Adam adam(AdamConfig{.lr = options.lr, .clip_norm = options.clip_norm});
  const auto& eval_set = validation.empty() ? train : validation;

  EpochLog initial{0, mean_loss(params, config, train), mean_loss(params, config, eval_set)};
  result.history.push_back(initial);
  if (on_epoch) on_epoch(initial);
  result.best_validation_loss = initial.validation_loss;
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
      const double w = 1.0 / static_cast<double>(end - b);
      for (std::size_t i = b; i < end; ++i) {
        const auto& ex = train[order[i]];
        Graph g;
        Var loss = mle_loss(g, params, config, ex.report, ex.labels);
        if (!std::isfinite(loss.scalar())) {
          throw NumericError("train_extractor_mle: non-finite loss on report " + ex.report.id + " in epoch " +
                             std::to_string(epoch));
        }
        epoch_loss += loss.scalar();
        g.backward(scale(loss, w));
      }
      adam.step(params);
    }
    EpochLog log{epoch, epoch_loss / static_cast<double>(train.size()), mean_loss(params, config, eval_set)};
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (log.validation_loss < result.best_validation_loss) {
      result.best_validation_loss = log.validation_loss;
      result.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best >= options.patience) {
      result.stopped_early = epoch < options.epochs;
      break;
    }
  }
  params = best;
  return result;
}

// ---------------------------------------------------------------------------

namespace {

int argmax(const Matrix& probs) {
  Eigen::Index best = 0;
  probs.col(0).maxCoeff(&best);
  return static_cast<int>(best);
}

int sample_index(const Matrix& probs, Rng& rng) {
  std::vector<double> w(probs.data(), probs.data() + probs.size());
  return static_cast<int>(rng.categorical(w));
}

}  // namespace

Extraction extract(ParamStore& params, const ExtractorConfig& config, const EncodedReport& report, Mode mode,
                   int max_steps, Rng* rng) {
  if (mode == Mode::kSample && rng == nullptr) throw Error("extract: sample mode needs a generator");
  Graph g;
  const EncoderStates enc = encode_findings(g, params, config, report);
  const DecoderKeys keys = decoder_keys(g, params, enc);
  ExtractorState state = initial_state(g, params, enc);
  if (max_steps <= 0) max_steps = 2 * (enc.n + enc.m);
  Extraction out;
  for (int j = 0; j < max_steps; ++j) {
    const StepScores sc = score_step(g, params, enc, keys, state);
    const double q = sc.q.scalar();
    const bool word = mode == Mode::kGreedy ? q >= 0.5 : rng->bernoulli(q);
    Choice choice;
    if (word) {
      choice = Choice{Level::kWord, mode == Mode::kGreedy ? argmax(sc.word.probs.value())
                                                          : sample_index(sc.word.probs.value(), *rng)};
      out.words.push_back(choice.index);
    } else {
      choice = Choice{Level::kSentence, mode == Mode::kGreedy ? argmax(sc.sentence.probs.value())
                                                              : sample_index(sc.sentence.probs.value(), *rng)};
    }
    out.trace.push_back(TraceStep{j, choice.level, choice.index, q});
    if (choice.level == Level::kSentence && choice.index == enc.n) return out;
    if (choice.level == Level::kSentence) out.sentences.push_back(choice.index);
    state = advance(g, params, enc, state, sc, choice);
  }
  out.truncated = true;
  return out;
}

json trace_to_json(const std::string& id, const Extraction& extraction) {
  json steps = json::array();
  for (const auto& s : extraction.trace) {
    steps.push_back({{"j", s.j}, {"level", s.level == Level::kWord ? "w" : "s"}, {"index", s.index}, {"q", s.q}});
  }
  json out{{"id", id}, {"steps", steps}};
  if (extraction.truncated) out["truncated"] = true;
  return out;
}

SelectionMetrics evaluate_selection(ParamStore& params, const ExtractorConfig& config,
                                    const std::vector<EncodedReport>& reports,
                                    const std::vector<corpus::SaliencyAnnotation>& annotations,
                                    const std::vector<labels::InterleavedLabels>& labels) {
  if (reports.size() != annotations.size() || reports.size() != labels.size()) {
    throw Error("evaluate_selection: reports, annotations and labels differ in length");
  }
  SelectionMetrics m;
  m.reports = static_cast<int>(reports.size());
  if (reports.empty()) return m;
  double acc = 0.0;
  std::size_t planted_words = 0;
  std::size_t found_words = 0;
  std::size_t word_steps = 0;
  std::size_t agreeing = 0;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto ex = extract(params, config, reports[i], Mode::kGreedy);
    std::vector<int> sel = ex.sentences;
    std::vector<int> planted = annotations[i].salient_sentences;
    std::sort(sel.begin(), sel.end());
    std::sort(planted.begin(), planted.end());
    std::vector<int> common;
    std::set_intersection(sel.begin(), sel.end(), planted.begin(), planted.end(), std::back_inserter(common));
    const double denom = static_cast<double>(std::max(sel.size(), planted.size()));
    acc += denom > 0 ? static_cast<double>(common.size()) / denom : 1.0;

    std::vector<int> words = ex.words;
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    for (int w : annotations[i].salient_words) {
      ++planted_words;
      if (std::binary_search(words.begin(), words.end(), w)) ++found_words;
    }

    // Teacher-forced switch values on the labelled word steps.
    Graph g;
    const EncoderStates enc = encode_findings(g, params, config, reports[i]);
    const DecoderKeys keys = decoder_keys(g, params, enc);
    ExtractorState state = initial_state(g, params, enc);
    for (const auto& t : labels[i].steps) {
      const StepScores sc = score_step(g, params, enc, keys, state);
      if (t.q == 1) {
        ++word_steps;
        if (sc.q.scalar() > 0.5) ++agreeing;
      }
      if (t.q == 0 && t.s == enc.n) break;
      state = advance(g, params, enc, state, sc, t.q == 1 ? Choice{Level::kWord, t.w} : Choice{Level::kSentence, t.s});
    }
  }
  m.sentence_accuracy = acc / static_cast<double>(reports.size());
  m.keyword_recall = planted_words > 0 ? static_cast<double>(found_words) / static_cast<double>(planted_words) : 1.0;
  m.switch_agreement = word_steps > 0 ? static_cast<double>(agreeing) / static_cast<double>(word_steps) : 1.0;
  return m;
}

int load_word_embeddings(ParamStore& params, const corpus::Vocabulary& vocab, std::istream& in) {
  auto& table = params.at("emb.word").value;
  int replaced = 0;
  int line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> v;
    for (double x; fields >> x;) v.push_back(x);
    if (!fields.eof()) throw Error("embedding line " + std::to_string(line_no) + ": non-numeric value");
    if (static_cast<Eigen::Index>(v.size()) != table.rows()) {
      throw Error("embedding line " + std::to_string(line_no) + ": expected " + std::to_string(table.rows()) +
                  " values, got " + std::to_string(v.size()));
    }
    if (!vocab.contains(token)) continue;
    const int id = vocab.id(token);
    for (std::size_t k = 0; k < v.size(); ++k) table(static_cast<Eigen::Index>(k), id) = v[k];
    ++replaced;
  }
  return replaced;
}

nn::Checkpoint make_checkpoint(const ParamStore& params, const ExtractorConfig& config,
                               const corpus::Vocabulary& vocab, const std::string& kind) {
  nn::Checkpoint ckpt;
  ckpt.kind = kind;
  ckpt.meta["model"] = config_to_json(config).dump();
  ckpt.vocabulary = vocab.tokens();
  ckpt.params = params;
  return ckpt;
}

ExtractorConfig checkpoint_config(const nn::Checkpoint& ckpt) {
  auto it = ckpt.meta.find("model");
  if (it == ckpt.meta.end()) throw Error("checkpoint of kind " + ckpt.kind + " has no model configuration");
  return config_from_json(json::parse(it->second));
}

}  // namespace dimac::extractor
