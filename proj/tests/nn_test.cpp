#include <doctest.h>

#include <array>
#include <cmath>

#include "dimac/nn/checkpoint.hpp"
#include "dimac/nn/layers.hpp"
#include "dimac/nn/optim.hpp"

using namespace dimac;
using namespace dimac::nn;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  return uniform_matrix(r, c, rng, scale);
}

void zero_all(ParamStore& store) {
  for (auto& [name, p] : store) p.value.setZero();
}

}  // namespace

TEST_CASE("bilstm: zero parameters and zero input give zero output") {
  Rng rng(1);
  ParamStore store;
  add_bilstm(store, "enc", 5, 4, rng);
  zero_all(store);
  Graph g;
  auto out = bilstm_encode(g, store, "enc", g.constant(Matrix::Zero(5, 3)));
  CHECK(out.states.value().cwiseAbs().maxCoeff() == 0.0);
  CHECK(out.end.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bilstm: default size produces 2x256 features per position") {
  Rng rng(2);
  ParamStore store;
  add_bilstm(store, "enc", 128, 256, rng);
  Graph g;
  auto out = bilstm_encode(g, store, "enc", g.constant(random_matrix(128, 7, rng)));
  CHECK(out.states.rows() == 512);
  CHECK(out.states.cols() == 7);
  CHECK(out.end.rows() == 512);
  // End representation is [last forward; first backward].
  CHECK(out.end.value().topRows(256).isApprox(out.states.value().block(0, 6, 256, 1)));
  CHECK(out.end.value().bottomRows(256).isApprox(out.states.value().block(256, 0, 256, 1)));
}

TEST_CASE("bilstm: shape mismatch is an error") {
  Rng rng(3);
  ParamStore store;
  add_bilstm(store, "enc", 5, 4, rng);
  Graph g;
  CHECK_THROWS_AS(bilstm_encode(g, store, "enc", g.constant(Matrix::Zero(6, 3))), ShapeError);
}

TEST_CASE("bilstm: analytic gradient matches central differences") {
  Rng rng(4);
  ParamStore store;
  add_bilstm(store, "enc", 3, 4, rng);
  for (auto& [n, p] : store) p.value = random_matrix(p.value.rows(), p.value.cols(), rng, 0.5);
  store.add("x", random_matrix(3, 3, rng));
  store.add("probe", random_matrix(8, 3, rng));
  auto loss = [](ParamStore& ps, bool with_grad) {
    Graph g;
    auto out = bilstm_encode(g, ps, "enc", g.param(ps.at("x")));
    Var l = sum(mul(out.states, g.param(ps.at("probe"))));
    l = add(l, sum(mul(out.end, out.end)));
    if (with_grad) g.backward(l);
    return l.scalar();
  };
  GradCheckOptions opt;
  opt.samples_per_param = 0;
  auto report = finite_difference_check(store, loss, opt);
  CHECK_MESSAGE(report.passed(), "worst " << report.worst_parameter << " " << report.max_relative_error);
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("conv sentence encoder: 3 windows of 100 filters give 300 features") {
  Rng rng(5);
  ParamStore store;
  const std::array<int, 3> windows{3, 4, 5};
  add_conv_sentence(store, "conv", 16, windows, 100, rng);
  Graph g;
  Var w = g.constant(random_matrix(8, 6, rng));
  Var p = g.constant(random_matrix(8, 6, rng));
  CHECK(conv_sentence_encode(g, store, "conv", w, p, windows).rows() == 300);
  // Shorter than the largest window is zero-padded rather than rejected.
  Var w2 = g.constant(random_matrix(8, 2, rng));
  Var p2 = g.constant(random_matrix(8, 2, rng));
  CHECK(conv_sentence_encode(g, store, "conv", w2, p2, windows).rows() == 300);
}

TEST_CASE("conv sentence encoder: zero inputs and zero bias give zero output") {
  Rng rng(6);
  ParamStore store;
  const std::array<int, 3> windows{3, 4, 5};
  add_conv_sentence(store, "conv", 4, windows, 10, rng);
  Graph g;
  Var z = g.constant(Matrix::Zero(2, 5));
  Var out = conv_sentence_encode(g, store, "conv", z, z, windows);
  CHECK(out.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv sentence encoder: gradient check") {
  Rng rng(7);
  ParamStore store;
  const std::array<int, 3> windows{3, 4, 5};
  add_conv_sentence(store, "conv", 4, windows, 5, rng);
  for (auto& [n, p] : store) p.value = random_matrix(p.value.rows(), p.value.cols(), rng, 0.5);
  store.add("w", random_matrix(2, 6, rng));
  store.add("p", random_matrix(2, 6, rng));
  auto loss = [&](ParamStore& ps, bool with_grad) {
    Graph g;
    Var out = conv_sentence_encode(g, ps, "conv", g.param(ps.at("w")), g.param(ps.at("p")), windows);
    Var l = sum(mul(out, out));
    if (with_grad) g.backward(l);
    return l.scalar();
  };
  GradCheckOptions opt;
  opt.samples_per_param = 0;
  auto report = finite_difference_check(store, loss, opt);
  CHECK_MESSAGE(report.passed(), "worst " << report.worst_parameter << " " << report.max_relative_error);
}

TEST_CASE("additive attention: singleton, symmetry and simplex") {
  Rng rng(8);
  ParamStore store;
  add_attention(store, "att", 4, 3, 5, rng);
  Graph g;
  Var q = g.constant(random_matrix(4, 1, rng));

  Var one = g.constant(random_matrix(3, 1, rng));
  auto single = additive_attention(g, store, "att", q, one);
  CHECK(single.probs.value()(0, 0) == doctest::Approx(1.0));
  CHECK(single.context.value().isApprox(one.value()));

  Matrix same(3, 4);
  same.colwise() = random_matrix(3, 1, rng).col(0);
  auto uniform = additive_attention(g, store, "att", q, g.constant(same));
  for (int i = 0; i < 4; ++i) CHECK(uniform.probs.value()(i, 0) == doctest::Approx(0.25).epsilon(1e-14));

  for (int trial = 0; trial < 50; ++trial) {
    Var keys = g.constant(random_matrix(3, 1 + trial % 9, rng, 3.0));
    auto a = additive_attention(g, store, "att", g.constant(random_matrix(4, 1, rng, 3.0)), keys);
    CHECK(std::abs(a.probs.value().sum() - 1.0) <= 1e-12);
    CHECK(a.probs.value().minCoeff() >= 0.0);
  }

  CHECK_THROWS_AS(additive_attention(g, store, "att", q, g.constant(Matrix(3, 0))), ShapeError);
}

TEST_CASE("masked softmax assigns exactly zero to masked entries") {
  Graph g;
  Rng rng(9);
  Var logits = g.constant(random_matrix(5, 1, rng, 4.0));
  const std::array<bool, 5> mask{true, false, true, false, true};
  Var p = softmax(logits, mask);
  CHECK(p.value()(1, 0) == 0.0);
  CHECK(p.value()(3, 0) == 0.0);
  CHECK(std::abs(p.value().sum() - 1.0) <= 1e-12);
  Var lp = log_softmax(logits, mask);
  CHECK(std::isinf(lp.value()(1, 0)));
  CHECK(std::exp(lp.value()(2, 0)) == doctest::Approx(p.value()(2, 0)));
  const std::array<bool, 5> none{false, false, false, false, false};
  CHECK_THROWS_AS(softmax(logits, none), NumericError);
}

TEST_CASE("primitive operations gradient check") {
  Rng rng(11);
  ParamStore store;
  store.add("a", random_matrix(4, 3, rng));
  store.add("b", random_matrix(3, 1, rng));
  store.add("c", random_matrix(4, 1, rng));
  store.add("table", random_matrix(3, 6, rng));
  store.add("u", random_matrix(8, 2, rng));
  store.add("gx", random_matrix(8, 1, rng));
  store.add("st", random_matrix(4, 1, rng));
  const std::array<int, 4> ids{1, 4, 4, 0};
  const std::array<int, 4> scatter_ids{2, 0, 2, 1};
  const std::array<bool, 4> mask{true, true, false, true};
  auto loss = [&](ParamStore& ps, bool with_grad) {
    Graph g;
    Var a = g.param(ps.at("a"));
    Var b = g.param(ps.at("b"));
    Var c = g.param(ps.at("c"));
    Var emb = embed_columns(g, ps.at("table"), ids);
    Var h = tanh(add(matmul(a, b), c));
    Var s = sigmoid(matmul(transpose(emb), b));
    Var lp = log_softmax(add(h, s), mask);
    Var sm = softmax(mul(h, s));
    Var sc = scatter_add(sm, scatter_ids, 3);
    Var mn = elementwise_min(sc, pad_rows(slice_rows(h, 0, 2), 3));
    Var ls = log_sigmoid(scale(add_scalar(h, 0.3), 2.0));
    const Var parts[] = {mn, column(emb, 2)};
    Var cat = concat_rows(parts);
    const Var cols[] = {transpose(emb), a};
    Var wide = concat_cols(cols);
    Var cell = lstm_cell(g.param(ps.at("gx")), g.param(ps.at("st")), g.param(ps.at("u")));
    Var l = add(add(pick(lp, 3), pick(lp, 0)), sum(mul(cat, cat)));
    l = add(l, sum(ls));
    l = add(l, sum(rowwise_max(relu(emb))));
    l = add(l, sum(log(add_scalar(sm, 1.0))));
    l = add(l, sum(mul(wide, wide)));
    l = add(l, sum(mul(cell, cell)));
    l = sub(l, sum(unfold(emb, 3)));
    if (with_grad) g.backward(l);
    return l.scalar();
  };
  GradCheckOptions opt;
  opt.samples_per_param = 0;
  auto report = finite_difference_check(store, loss, opt);
  CHECK_MESSAGE(report.passed(), "worst " << report.worst_parameter << " " << report.max_relative_error);
}

TEST_CASE("finite difference checker: quadratic passes and corrupted gradient fails") {
  Rng rng(12);
  ParamStore store;
  store.add("p", random_matrix(5, 2, rng));
  auto quadratic = [](ParamStore& ps, bool with_grad) {
    Parameter& p = ps.at("p");
    if (with_grad) p.grad += p.value;
    return 0.5 * p.value.squaredNorm();
  };
  auto good = finite_difference_check(store, quadratic);
  CHECK(good.passed());
  CHECK(good.max_relative_error < 1e-8);

  auto corrupted = [](ParamStore& ps, bool with_grad) {
    Parameter& p = ps.at("p");
    if (with_grad) p.grad += 1.01 * p.value;
    return 0.5 * p.value.squaredNorm();
  };
  auto bad = finite_difference_check(store, corrupted);
  CHECK_FALSE(bad.passed());
  CHECK(bad.failing_parameters == std::vector<std::string>{"p"});
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  Rng rng(13);
  ParamStore store;
  store.add("w", random_matrix(3, 3, rng));
  const Matrix before = store.at("w").value;
  Adam opt(AdamConfig{});
  opt.step(store);
  CHECK(store.at("w").value == before);
}

TEST_CASE("adam: gradient of norm 3 is clipped by half at 1.5") {
  ParamStore store;
  store.add("w", Matrix::Zero(2, 1));
  store.at("w").grad << 3.0, 0.0;
  Adam opt(AdamConfig{});
  auto stats = opt.step(store);
  CHECK(stats.grad_norm == doctest::Approx(3.0));
  CHECK(stats.clip_scale == doctest::Approx(0.5));
  CHECK(store.at("w").grad.isZero());

  ParamStore other;
  other.add("w", Matrix::Zero(2, 1));
  other.at("w").grad << 3.0, 4.0;
  CHECK(clip_gradients(other, 1.5) == doctest::Approx(5.0));
  CHECK(other.at("w").grad.norm() == doctest::Approx(1.5));
}

TEST_CASE("adam: defaults and non-finite gradients") {
  CHECK(AdamConfig{}.lr == 1e-3);
  CHECK(AdamConfig{}.clip_norm == 1.5);
  ParamStore store;
  store.add("bad.param", Matrix::Zero(1, 1));
  store.at("bad.param").grad(0, 0) = std::nan("");
  Adam opt(AdamConfig{});
  try {
    opt.step(store);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("bad.param") != std::string::npos);
  }
}

TEST_CASE("adam: prefixes restrict which parameters move") {
  ParamStore store;
  store.add("a.w", Matrix::Ones(1, 1));
  store.add("b.w", Matrix::Ones(1, 1));
  store.at("a.w").grad(0, 0) = 1.0;
  store.at("b.w").grad(0, 0) = 1.0;
  Adam opt(AdamConfig{}, {"a."});
  opt.step(store);
  CHECK(store.at("a.w").value(0, 0) < 1.0);
  CHECK(store.at("b.w").value(0, 0) == 1.0);
}

TEST_CASE("checkpoint round trip is lossless") {
  Rng rng(14);
  Checkpoint ckpt;
  ckpt.kind = "test";
  ckpt.config_hash = 0x0123456789abcdefULL;
  ckpt.config_text = "a.b = 1\n";
  ckpt.meta["upstream"] = "42";
  ckpt.vocabulary = {"<pad>", "tok", "ünïcode"};
  ckpt.params.add("x", random_matrix(3, 2, rng));
  ckpt.params.add("y", Matrix::Constant(1, 1, 1.0 / 3.0));
  const std::string bytes = serialize_checkpoint(ckpt);
  Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.kind == ckpt.kind);
  CHECK(back.config_hash == ckpt.config_hash);
  CHECK(back.config_text == ckpt.config_text);
  CHECK(back.meta == ckpt.meta);
  CHECK(back.vocabulary == ckpt.vocabulary);
  CHECK(back.params.at("x").value == ckpt.params.at("x").value);
  CHECK(back.params.at("y").value == ckpt.params.at("y").value);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(deserialize_checkpoint("NOTACKPT"), Error);
}
