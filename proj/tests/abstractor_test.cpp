#include <doctest.h>

#include <cmath>

#include "dimac/abstractor.hpp"
#include "dimac/error.hpp"
#include "dimac/nn/optim.hpp"

using namespace dimac;
using namespace dimac::abstractor;

namespace {

corpus::Vocabulary small_vocab() {
  corpus::Report r;
  r.findings = {{"mild", "edema", "in", "the", "left", "lobe"}};
  r.impressions = {{"left", "edema"}};
  r.rebuild_flat();
  return corpus::Vocabulary::build({r}, 100);
}

AbstractorConfig tiny_config(int vocab_size) {
  AbstractorConfig c;
  c.vocab_size = vocab_size;
  c.embed_dim = 6;
  c.hidden = 5;
  c.attention_dim = 4;
  c.max_length = 10;
  return c;
}

}  // namespace

TEST_CASE("abstractor: extended vocabulary ids") {
  const auto vocab = small_vocab();
  const int v = static_cast<int>(vocab.size());
  const auto ex = make_example({"mild", "zzz", "edema", "zzz", "qqq"}, {"qqq", "edema", "unseen"}, vocab);
  CHECK(ex.oov == std::vector<std::string>{"zzz", "qqq"});
  CHECK(ex.source == std::vector<int>{vocab.id("mild"), v, vocab.id("edema"), v, v + 1});
  CHECK(ex.target == std::vector<int>{v + 1, vocab.id("edema"), corpus::Vocabulary::kUnk, corpus::Vocabulary::kEnd});
  CHECK(ex.extended_size() == v + 2);
  CHECK(resolve(ex, vocab, {v + 1, vocab.id("edema")}) == std::vector<std::string>{"qqq", "edema"});
}

TEST_CASE("abstractor: pg_step mixes a vocabulary and a copy simplex") {
  const auto vocab = small_vocab();
  const auto config = tiny_config(static_cast<int>(vocab.size()));
  ParamStore params;
  Rng rng(1);
  init_abstractor(params, config, rng);
  const auto ex = make_example({"mild", "zzz", "edema"}, {"zzz"}, vocab);
  Graph g;
  const auto src = encode_source(g, params, ex);
  auto state = initial_pg_state(g, params, src);
  int prev = corpus::Vocabulary::kStart;
  for (int t = 0; t < 4; ++t) {
    const auto step = pg_step(g, params, config, src, ex, state, prev);
    const Matrix& d = step.distribution.value();
    CHECK(std::abs(d.sum() - 1.0) <= 1e-10);
    CHECK(step.attention.value().sum() == doctest::Approx(1.0));
    if (t == 0) CHECK(step.coverage_loss.scalar() == 0.0);
    const double p_gen = step.p_gen.scalar();
    // The OOV slot holds only copy mass.
    const double oov_mass = d(config.vocab_size, 0);
    CHECK(oov_mass == doctest::Approx((1.0 - p_gen) * step.attention.value()(1, 0)));
    CHECK(oov_mass > 0.0);
    CHECK(step.next.coverage.value().sum() == doctest::Approx(t + 1.0));
    state = step.next;
    prev = ex.source[static_cast<std::size_t>(t % 3)];
  }
}

TEST_CASE("abstractor: pair loss gradient matches central differences") {
  const auto vocab = small_vocab();
  const auto config = tiny_config(static_cast<int>(vocab.size()));
  ParamStore params;
  Rng rng(2);
  init_abstractor(params, config, rng);
  Rng r2(3);
  for (auto& [name, p] : params) p.value = nn::uniform_matrix(p.value.rows(), p.value.cols(), r2, 0.5);
  const auto ex = make_example({"mild", "zzz", "edema", "in", "lobe"}, {"zzz", "edema", "lobe"}, vocab);
  auto loss = [&](ParamStore& ps, bool with_grad) {
    Graph g;
    const auto l = pair_loss(g, ps, config, ex);
    if (with_grad) g.backward(l.total);
    return l.total.scalar();
  };
  nn::GradCheckOptions opt;
  opt.samples_per_param = 8;
  const auto report = nn::finite_difference_check(params, loss, opt);
  CHECK_MESSAGE(report.passed(), "worst " << report.worst_parameter << " " << report.max_relative_error);
}

TEST_CASE("abstractor: beam search contracts") {
  const auto vocab = small_vocab();
  const auto config = tiny_config(static_cast<int>(vocab.size()));
  ParamStore params;
  Rng rng(4);
  init_abstractor(params, config, rng);
  const std::vector<corpus::Sentence> sources{
      {"mild", "edema"}, {"left", "lobe", "zzz"}, {"the", "the", "in"}, {"qqq", "mild", "in", "left"}};
  for (const auto& s : sources) {
    const auto ex = make_source(s, vocab);
    const auto greedy = greedy_decode(params, config, ex);
    const auto b1 = abstract_sentence(params, config, vocab, s, 1);
    const auto b5 = abstract_sentence(params, config, vocab, s, 5);
    CHECK(b1.best.ids == greedy.ids);
    CHECK(b5.best.score() >= b1.best.score());
    CHECK(b5.best.length <= config.max_length);
    const auto again = abstract_sentence(params, config, vocab, s, 5);
    CHECK(again.tokens == b5.tokens);
  }
  const auto empty = abstract_sentence(params, config, vocab, {}, 5);
  CHECK(empty.empty_source);
  CHECK(empty.tokens.empty());
  CHECK_THROWS_AS(beam_search(params, config, make_source({"mild"}, vocab), 0), Error);
}

TEST_CASE("abstractor: overfitting one pair reproduces its target, including a copied OOV") {
  const auto vocab = small_vocab();
  auto config = tiny_config(static_cast<int>(vocab.size()));
  config.hidden = 16;
  config.embed_dim = 12;
  config.attention_dim = 12;
  ParamStore params;
  Rng rng(5);
  init_abstractor(params, config, rng);
  const corpus::Sentence source{"mild", "zzz", "edema", "in", "the", "left", "lobe"};
  const corpus::Sentence target{"zzz", "left", "edema"};
  const std::vector<Example> data{make_example(source, target, vocab)};
  TrainOptions opt;
  opt.epochs = 150;
  opt.lr = 1e-2;
  opt.patience = 150;
  const auto result = train_abstractor(params, config, data, {}, opt);
  CHECK(result.best_validation_nll < 0.05);
  CHECK(abstract_sentence(params, config, vocab, source, 5).tokens == target);
  CHECK(abstract_sentence(params, config, vocab, source, 1).tokens == target);
  CHECK(token_accuracy(target, target) == 1.0);
  CHECK(token_accuracy({"zzz"}, target) == doctest::Approx(1.0 / 3));
}

TEST_CASE("abstractor: matched pairs follow greedy matching") {
  corpus::Report r;
  r.findings = {{"a", "b"}, {"c", "d", "e"}, {"f"}};
  r.impressions = {{"c", "d"}, {"f"}};
  r.rebuild_flat();
  const auto pairs = matched_pairs(r);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].source == corpus::Sentence{"c", "d", "e"});
  CHECK(pairs[1].source == corpus::Sentence{"f"});
}

TEST_CASE("abstractor: checkpoint round trip") {
  const auto vocab = small_vocab();
  const auto config = tiny_config(static_cast<int>(vocab.size()));
  ParamStore params;
  Rng rng(6);
  init_abstractor(params, config, rng);
  const auto back = nn::deserialize_checkpoint(nn::serialize_checkpoint(make_checkpoint(params, config, vocab)));
  CHECK(checkpoint_config(back) == config);
  ParamStore restored = back.params;
  const corpus::Sentence s{"left", "zzz", "lobe"};
  CHECK(abstract_sentence(params, config, vocab, s).tokens == abstract_sentence(restored, config, vocab, s).tokens);
}

TEST_CASE("abstractor: the coverage loss lowers repeated attention on held-out pairs") {
  corpus::SyntheticConfig sc;
  sc.reports = 40;
  const auto synth = corpus::generate_synthetic_corpus(sc, 17);
  const auto vocab = corpus::Vocabulary::build(synth.reports, 200);
  std::vector<Example> train;
  std::vector<Example> validation;
  for (std::size_t i = 0; i < synth.reports.size(); ++i) {
    for (const auto& p : matched_pairs(synth.reports[i])) {
      (i < 32 ? train : validation).push_back(make_example(p.source, p.target, vocab));
    }
  }
  auto coverage_after_training = [&](double weight) {
    auto config = tiny_config(static_cast<int>(vocab.size()));
    config.embed_dim = 16;
    config.hidden = 16;
    config.attention_dim = 16;
    config.coverage_weight = weight;
    ParamStore params;
    Rng rng(18);
    init_abstractor(params, config, rng);
    TrainOptions opt;
    opt.epochs = 6;
    opt.lr = 5e-3;
    train_abstractor(params, config, train, validation, opt);
    return evaluate(params, config, validation).coverage_per_token;
  };
  const double with = coverage_after_training(1.0);
  const double without = coverage_after_training(0.0);
  MESSAGE("coverage per token: " << with << " with the loss, " << without << " without");
  CHECK(with <= without);
}
