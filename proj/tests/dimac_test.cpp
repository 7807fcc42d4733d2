#include <doctest.h>

#include <cmath>
#include <set>

#include "dimac/dimac.hpp"
#include "dimac/error.hpp"
#include "synthetic_fixture.hpp"

using namespace dimac;
using namespace dimac::rl;
using dimac::labels::kNone;

namespace {

corpus::Report toy_report() {
  corpus::Report r;
  r.id = "toy";
  r.findings = {{"a", "b", "c"}, {"d", "e", "f", "g"}, {"h", "i"}};
  r.impressions = {{"d", "e", "x"}, {"h", "i"}};
  r.rebuild_flat();
  return r;
}

labels::InterleavedLabels toy_labels() {
  labels::InterleavedLabels l;
  l.id = "toy";
  l.steps = {{1, kNone, 4}, {0, 1, kNone}, {1, kNone, 8}, {0, 2, kNone}, {0, 3, kNone}};
  return l;
}

struct Toy {
  corpus::Vocabulary vocab;
  ExtractorConfig config;
  ParamStore params;
  Episode episode;
};

Toy make_toy(std::uint64_t seed, int hidden = 4) {
  Toy t;
  t.vocab = corpus::Vocabulary::build({toy_report()}, 100);
  t.config = fixture::tiny_extractor(static_cast<int>(t.vocab.size()));
  t.config.hidden = hidden;
  t.config.attention_dim = hidden;
  t.config.switch_hidden = hidden;
  Rng rng(seed);
  extractor::init_extractor(t.params, t.config, rng);
  init_critic(t.params, t.config, rng);
  t.episode = make_episode(toy_report(), toy_labels(), {4, 8}, t.vocab, t.config, nullptr);
  return t;
}

std::vector<Choice> label_choices(const labels::InterleavedLabels& l) {
  std::vector<Choice> out;
  for (const auto& s : l.steps) out.push_back(s.q == 1 ? Choice{Level::kWord, s.w} : Choice{Level::kSentence, s.s});
  return out;
}

void randomize(ParamStore& store, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto& [name, p] : store) p.value = nn::uniform_matrix(p.value.rows(), p.value.cols(), rng, scale);
}

// Surrogate over a replayed trajectory with fixed advantages.
struct Surrogate {
  std::vector<double> actor_adv;
  std::vector<double> comm_adv;
  bool with_critic = true;
  bool detach_message = false;
};

double surrogate_loss(ParamStore& ps, const Toy& toy, const std::vector<Choice>& forced, const Surrogate& s,
                      bool with_grad) {
  Graph g;
  const auto enc = extractor::encode_findings(g, ps, toy.config, toy.episode.encoded);
  RolloutOptions opt;
  opt.forced = &forced;
  opt.detach_message = s.detach_message;
  const auto traj = rollout(g, ps, toy.episode, enc, opt, nullptr);
  std::vector<Var> terms;
  for (std::size_t j = 0; j < traj.length(); ++j) {
    terms.push_back(scale(traj.steps[j].log_prob, -s.actor_adv[j]));
    if (!s.comm_adv.empty()) terms.push_back(scale(traj.steps[j].level_log_prob, -s.comm_adv[j]));
  }
  if (s.with_critic) {
    const auto values = critic_values(g, ps, toy.episode, enc, traj.length());
    const auto returns = returns_and_q(traj, 0.95);
    for (std::size_t j = 0; j < values.size(); ++j) {
      Matrix target(2, 1);
      target << returns.g_w[j], returns.g_s[j];
      Var d = sub(values[j], g.constant(target));
      terms.push_back(sum(mul(d, d)));
    }
  }
  Var loss = sum(concat_rows(terms));
  if (with_grad) g.backward(loss);
  return loss.scalar();
}

}  // namespace

TEST_CASE("word reward uses a monotone cursor") {
  const std::vector<int> kw{4, 9};
  std::size_t cursor = 0;
  CHECK(word_reward(4, kw, cursor) == 1.0);
  CHECK(word_reward(9, kw, cursor) == 1.0);
  cursor = 0;
  CHECK(word_reward(9, kw, cursor) == 1.0);
  CHECK(word_reward(4, kw, cursor) == 0.0);
  cursor = 0;
  CHECK(word_reward(5, kw, cursor) == 0.0);
  CHECK(cursor == 0);
}

TEST_CASE("sentence reward matches impressions sequentially") {
  const std::vector<corpus::Sentence> imp{{"a", "b"}, {"c"}};
  std::size_t cursor = 0;
  CHECK(sentence_reward({"a", "b"}, imp, cursor) == 1.0);
  CHECK(sentence_reward({"a"}, imp, cursor) == 0.0);
  CHECK(sentence_reward({"c"}, imp, cursor) == 0.0);  // impressions used up
  CHECK(cursor == 3);
  cursor = 0;
  CHECK(sentence_reward({"a", "x"}, imp, cursor) == 0.5);
}

TEST_CASE("global reward") {
  const std::vector<corpus::Sentence> imp{{"a", "b"}, {"c"}};
  CHECK(global_reward(imp, imp, {"k"}, {"k"}, 0.1) == doctest::Approx(1.1));
  CHECK(global_reward(imp, imp, {"k"}, {"k"}, 0.0) == doctest::Approx(1.0));
  CHECK(global_reward({}, imp, {}, {"k"}, 0.1) == 0.0);
  CHECK(global_reward({{"a"}}, imp, {}, {"k"}, 0.1) == doctest::Approx(1.0 / 3));
}

TEST_CASE("discounted returns") {
  CHECK(discounted_returns({1, 0, 1}, 0.5)[0] == doctest::Approx(1.25));
  CHECK(discounted_returns({1, 2, 3}, 0.0) == std::vector<double>{1, 2, 3});
  CHECK(discounted_returns({0, 0, 0}, 0.9) == std::vector<double>{0, 0, 0});
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(rng.uniform_int(1, 12)));
    for (auto& x : r) x = rng.uniform(0.0, 1.0);
    const double gamma = rng.uniform(0.0, 1.0);
    const auto g = discounted_returns(r, gamma);
    for (std::size_t j = 0; j < r.size(); ++j) {
      double direct = 0.0;
      for (std::size_t l = j; l < r.size(); ++l) direct += std::pow(gamma, static_cast<double>(l - j)) * r[l];
      CHECK(g[j] == doctest::Approx(direct));
      const double next = j + 1 < r.size() ? g[j + 1] : 0.0;
      CHECK(g[j] == doctest::Approx(r[j] + gamma * next));
    }
  }
}

TEST_CASE("advantages use the active agent's stream") {
  Trajectory t;
  t.steps.resize(2);
  t.steps[0].level = Level::kWord;
  t.steps[1].level = Level::kSentence;
  ReturnsTable r{{1.25, 0.5}, {2.0, 1.0}, {1.25, 1.0}};
  const auto a = advantages(t, r, CriticValues{{1.0, 0.0}, {0.0, 1.0}});
  CHECK(a.actor[0] == doctest::Approx(0.25));
  CHECK(a.actor[1] == doctest::Approx(0.0));
  CHECK(a.communicator[0] == doctest::Approx(2.25));
  CHECK_THROWS_AS(advantages(t, r, CriticValues{{1.0}, {1.0}}), Error);
}

TEST_CASE("shifting rewards leaves advantages unchanged under an oracle critic") {
  // gamma = 1 and equal-length episodes: every G_j moves by c (T - j), and so
  // does the per-step mean used as the critic.
  Rng rng(2);
  const std::size_t episodes = 6;
  const std::size_t len = 5;
  std::vector<std::vector<double>> rewards(episodes, std::vector<double>(len));
  for (auto& r : rewards) {
    for (auto& x : r) x = rng.uniform(0.0, 1.0);
  }
  auto advantage_table = [&](double shift) {
    std::vector<std::vector<double>> g;
    for (auto r : rewards) {
      for (auto& x : r) x += shift;
      g.push_back(discounted_returns(r, 1.0));
    }
    std::vector<double> v(len, 0.0);
    for (const auto& gi : g) {
      for (std::size_t j = 0; j < len; ++j) v[j] += gi[j] / static_cast<double>(episodes);
    }
    std::vector<std::vector<double>> a = g;
    for (auto& ai : a) {
      for (std::size_t j = 0; j < len; ++j) ai[j] -= v[j];
    }
    return a;
  };
  const auto base = advantage_table(0.0);
  const auto shifted = advantage_table(3.5);
  for (std::size_t i = 0; i < episodes; ++i) {
    for (std::size_t j = 0; j < len; ++j) CHECK(shifted[i][j] == doctest::Approx(base[i][j]));
  }
}

TEST_CASE("sampled trajectories satisfy the structural invariants") {
  auto toy = make_toy(3);
  Rng rng(4);
  const double lambda = 0.1;
  for (int trial = 0; trial < 200; ++trial) {
    RolloutOptions opt;
    opt.lambda = lambda;
    const auto t = rollout(toy.params, toy.config, toy.episode, opt, &rng);
    REQUIRE(t.length() > 0);
    CHECK(static_cast<int>(t.length()) <= step_cap(toy.episode, 2));
    std::set<int> seen;
    int sentence_rewards = 0;
    for (std::size_t j = 0; j < t.length(); ++j) {
      const auto& s = t.steps[j];
      CHECK(s.message > 0.0);
      CHECK(s.message < 1.0);
      const bool last = j + 1 == t.length();
      const double rg = last ? t.global_reward : 0.0;
      if (s.level == Level::kWord) {
        CHECK(s.reward_s == doctest::Approx(rg));
        const double local = s.reward_w - rg;
        CHECK((std::abs(local) < 1e-12 || std::abs(local - 1.0) < 1e-12));
      } else {
        CHECK(s.reward_w == doctest::Approx(rg));
        const double local = s.reward_s - rg;
        CHECK(local >= -1e-12);
        CHECK(local <= 1.0 + 1e-12);
        if (s.index < toy.episode.encoded.n()) {
          ++sentence_rewards;
          CHECK(seen.insert(s.index).second);
        } else {
          CHECK(last);
          CHECK(std::abs(local) < 1e-12);
        }
      }
    }
    CHECK(sentence_rewards == static_cast<int>(t.sentences.size()));
    CHECK(t.truncated == !(t.steps.back().level == Level::kSentence && t.steps.back().index == 3));
    CHECK(t.global_reward >= 0.0);
    CHECK(t.global_reward <= 1.0 + lambda + 1e-12);
  }
}

TEST_CASE("rollouts are reproducible for a fixed seed") {
  auto toy = make_toy(5);
  Rng a(9);
  Rng b(9);
  RolloutOptions opt;
  const auto t1 = rollout(toy.params, toy.config, toy.episode, opt, &a);
  const auto t2 = rollout(toy.params, toy.config, toy.episode, opt, &b);
  REQUIRE(t1.length() == t2.length());
  for (std::size_t j = 0; j < t1.length(); ++j) {
    CHECK(t1.steps[j].index == t2.steps[j].index);
    CHECK(t1.steps[j].level == t2.steps[j].level);
  }
  CHECK(t1.global_reward == t2.global_reward);
}

TEST_CASE("greedy rollout of an overfit extractor follows the labels") {
  auto toy = make_toy(6, 12);
  const std::vector<extractor::TrainingExample> data{{toy.episode.encoded, toy.episode.labels}};
  extractor::MleOptions opt;
  opt.epochs = 100;
  opt.lr = 1e-2;
  opt.patience = 100;
  extractor::train_extractor_mle(toy.params, toy.config, data, {}, opt);
  RolloutOptions ro;
  ro.mode = Mode::kGreedy;
  const auto t = rollout(toy.params, toy.config, toy.episode, ro, nullptr);
  const auto expected = label_choices(toy.episode.labels);
  REQUIRE(t.length() == expected.size());
  for (std::size_t j = 0; j < t.length(); ++j) {
    CHECK(t.steps[j].level == expected[j].level);
    CHECK(t.steps[j].index == expected[j].index);
  }
  // Both keywords hit, both impressions covered except the unmatched "x".
  CHECK(t.global_reward == doctest::Approx(4.0 / 5 + 0.1));
}

TEST_CASE("actor, communicator and critic gradients match central differences") {
  auto toy = make_toy(7);
  randomize(toy.params, 8, 0.5);
  const auto forced = label_choices(toy.episode.labels);
  Surrogate s{{0.7, -0.3, 1.2, 0.4, -0.9}, {0.2, 0.5, -0.6, 0.3, 0.8}};
  auto loss = [&](ParamStore& ps, bool with_grad) { return surrogate_loss(ps, toy, forced, s, with_grad); };
  nn::GradCheckOptions opt;
  opt.prefixes = trainable_prefixes();
  opt.samples_per_param = 8;
  const auto report = nn::finite_difference_check(toy.params, loss, opt);
  CHECK_MESSAGE(report.passed(), "worst " << report.worst_parameter << " " << report.max_relative_error);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("the message channel carries actor gradients into the communicator") {
  auto toy = make_toy(9);
  randomize(toy.params, 10, 0.5);
  const auto forced = label_choices(toy.episode.labels);
  Surrogate s{{0.7, -0.3, 1.2, 0.4, -0.9}, {}, false, false};
  toy.params.zero_grad();
  surrogate_loss(toy.params, toy, forced, s, true);
  const double live = toy.params.grad_norm("switch.");
  const auto actor_grad = toy.params.at("dec_sent.lstm.W").grad;
  toy.params.zero_grad();
  s.detach_message = true;
  surrogate_loss(toy.params, toy, forced, s, true);
  CHECK(live > 0.0);
  CHECK(toy.params.grad_norm("switch.") == 0.0);
  CHECK_FALSE(actor_grad.isApprox(toy.params.at("dec_sent.lstm.W").grad));
}

TEST_CASE("actor gradients are linear in the advantages") {
  auto toy = make_toy(11);
  randomize(toy.params, 12, 0.5);
  const auto forced = label_choices(toy.episode.labels);
  Surrogate s{{0.7, -0.3, 1.2, 0.4, -0.9}, {}, false, false};
  toy.params.zero_grad();
  surrogate_loss(toy.params, toy, forced, s, true);
  std::map<std::string, Matrix> base;
  for (const auto& [name, p] : toy.params) base[name] = p.grad;
  toy.params.zero_grad();
  for (auto& a : s.actor_adv) a *= 2.5;
  surrogate_loss(toy.params, toy, forced, s, true);
  for (const auto& [name, p] : toy.params) CHECK(p.grad.isApprox(2.5 * base[name], 1e-12));

  toy.params.zero_grad();
  for (auto& a : s.actor_adv) a = 0.0;
  surrogate_loss(toy.params, toy, forced, s, true);
  CHECK(toy.params.grad_norm() == 0.0);
}

TEST_CASE("baseline invariance check") {
  PolicySnapshot uniform{{0.0, 0.0, 0.0}, {0.0, 0.0}, 0.5};
  const auto ok = baseline_invariance_check(uniform, [](Level, int) { return 1.0; }, 10000, 1);
  CHECK(ok.passed);
  CHECK(ok.mean.size() == 5);

  PolicySnapshot skewed{{1.0, -0.5, 0.2}, {0.3, -1.0}, 0.6};
  CHECK(baseline_invariance_check(skewed, [](Level, int) { return 2.0; }, 10000, 2).passed);
  const auto control = baseline_invariance_check(
      skewed, [](Level l, int a) { return l == Level::kWord && a == 0 ? 1.0 : 0.0; }, 10000, 3);
  CHECK_FALSE(control.passed);

  // Rewards that favour one action: subtracting the expected reward lowers
  // the estimator variance.
  PolicySnapshot trained{{2.5, 0.1, -1.0}, {1.5, -0.5}, 0.7};
  const auto var = baseline_variance(
      trained, [](Level l, int a) { return (l == Level::kWord && a == 0) || (l == Level::kSentence && a == 0) ? 1.5 : 1.0; },
      10000, 4);
  CHECK(var.with_baseline <= var.without_baseline);
}

TEST_CASE("dimac training is deterministic and logs every update") {
  const auto corpus = fixture::labelled_corpus(fixture::tiny_corpus_config(6), 3);
  const auto config = fixture::tiny_extractor(static_cast<int>(corpus.vocab.size()));
  const auto kw = fixture::keyword_set(corpus.synth.keywords);
  std::vector<Episode> episodes;
  for (std::size_t i = 0; i < corpus.synth.reports.size(); ++i) {
    const auto& r = corpus.synth.reports[i];
    episodes.push_back(make_episode(r, corpus.labels[i], labels::compile_keyword_indices(r, kw), corpus.vocab, config,
                                    nullptr));
  }
  DimacConfig dc;
  dc.updates = 6;
  dc.batch_size = 2;
  auto run = [&] {
    ParamStore params;
    Rng rng(1);
    extractor::init_extractor(params, config, rng);
    const auto before = params.at("emb.word").value;
    std::vector<std::string> lines;
    train_dimac(params, config, dc, episodes, [&](const UpdateStats& s) {
      lines.push_back(stats_to_json(s).dump());
      CHECK(s.communicator_grad_norm > 0.0);
    });
    CHECK(params.at("emb.word").value == before);  // encoder stays frozen
    return lines;
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.size() == 6);
  CHECK(a == b);
  const auto j = nlohmann::json::parse(a.front());
  for (const char* key : {"step", "mean_rg", "mean_len", "adv_s", "adv_w"}) CHECK(j.contains(key));
}
