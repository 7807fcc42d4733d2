#include "dimac/nn/layers.hpp"

#include <cmath>

namespace dimac::nn {

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  // Column-major fill order is part of the determinism contract.
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  return uniform_matrix(rows, cols, rng, std::sqrt(6.0 / static_cast<double>(rows + cols)));
}

void add_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                Rng& rng) {
  store.add(prefix + ".W", glorot_matrix(out, in, rng));
  store.add(prefix + ".b", Matrix::Zero(out, 1));
}

Var linear(Graph& g, ParamStore& store, const std::string& prefix, Var x) {
  Var w = g.param(store.at(prefix + ".W"));
  Var b = g.param(store.at(prefix + ".b"));
  return add_bias_cols(matmul(w, x), b);
}

void add_lstm(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
              Rng& rng) {
  store.add(prefix + ".W", uniform_matrix(4 * hidden, in, rng));
  store.add(prefix + ".U", uniform_matrix(4 * hidden, hidden, rng));
  store.add(prefix + ".b", Matrix::Zero(4 * hidden, 1));
}

Eigen::Index lstm_hidden(const ParamStore& store, const std::string& prefix) {
  return store.at(prefix + ".U").value.cols();
}

Eigen::Index lstm_input(const ParamStore& store, const std::string& prefix) {
  return store.at(prefix + ".W").value.cols();
}

Var lstm_step(Graph& g, ParamStore& store, const std::string& prefix, Var x, Var state) {
  Var w = g.param(store.at(prefix + ".W"));
  Var u = g.param(store.at(prefix + ".U"));
  Var b = g.param(store.at(prefix + ".b"));
  if (x.rows() != w.cols() || x.cols() != 1) {
    throw ShapeError(prefix + ": LSTM input has " + std::to_string(x.rows()) + " rows, expected " +
                     std::to_string(w.cols()));
  }
  return lstm_cell(add(matmul(w, x), b), state, u);
}

Var state_h(Var packed) { return slice_rows(packed, 0, packed.rows() / 2); }
Var state_c(Var packed) { return slice_rows(packed, packed.rows() / 2, packed.rows() / 2); }

Var pack_state(Graph& g, Var h) {
  Var zeros = g.constant(Matrix::Zero(h.rows(), 1));
  const Var parts[] = {h, zeros};
  return concat_rows(parts);
}

void add_bilstm(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                Rng& rng) {
  add_lstm(store, prefix + ".fwd", in, hidden, rng);
  add_lstm(store, prefix + ".bwd", in, hidden, rng);
}

BiLstmOutput bilstm_encode(Graph& g, ParamStore& store, const std::string& prefix, Var inputs) {
  const std::string fwd = prefix + ".fwd";
  const std::string bwd = prefix + ".bwd";
  const Eigen::Index hidden = lstm_hidden(store, fwd);
  if (inputs.rows() != lstm_input(store, fwd)) {
    throw ShapeError(prefix + ": input dimension " + std::to_string(inputs.rows()) +
                     " does not match LSTM input " + std::to_string(lstm_input(store, fwd)));
  }
  const Eigen::Index len = inputs.cols();
  if (len < 1) throw ShapeError(prefix + ": empty input sequence");

  // Input contributions for all positions in one product per direction.
  auto gates_for = [&](const std::string& dir) {
    Var w = g.param(store.at(dir + ".W"));
    Var b = g.param(store.at(dir + ".b"));
    return add_bias_cols(matmul(w, inputs), b);
  };
  Var gates_f = gates_for(fwd);
  Var gates_b = gates_for(bwd);
  Var u_f = g.param(store.at(fwd + ".U"));
  Var u_b = g.param(store.at(bwd + ".U"));

  std::vector<Var> hs_f(static_cast<std::size_t>(len));
  std::vector<Var> hs_b(static_cast<std::size_t>(len));
  Var state = g.constant(Matrix::Zero(2 * hidden, 1));
  for (Eigen::Index t = 0; t < len; ++t) {
    state = lstm_cell(column(gates_f, t), state, u_f);
    hs_f[static_cast<std::size_t>(t)] = state_h(state);
  }
  state = g.constant(Matrix::Zero(2 * hidden, 1));
  for (Eigen::Index t = len - 1; t >= 0; --t) {
    state = lstm_cell(column(gates_b, t), state, u_b);
    hs_b[static_cast<std::size_t>(t)] = state_h(state);
  }
  Var top = concat_cols(hs_f);
  Var bottom = concat_cols(hs_b);
  const Var halves[] = {top, bottom};
  const Var ends[] = {hs_f.back(), hs_b.front()};
  return BiLstmOutput{concat_rows(halves), concat_rows(ends)};
}

void add_conv_sentence(ParamStore& store, const std::string& prefix, Eigen::Index in,
                       std::span<const int> windows, Eigen::Index filters, Rng& rng) {
  for (int w : windows) {
    store.add(prefix + ".w" + std::to_string(w), glorot_matrix(filters, w * in, rng));
    store.add(prefix + ".b" + std::to_string(w), Matrix::Zero(filters, 1));
  }
}

Var conv_sentence_encode(Graph& g, ParamStore& store, const std::string& prefix, Var word_embs,
                         Var pos_embs, std::span<const int> windows) {
  if (word_embs.cols() != pos_embs.cols()) {
    throw ShapeError(prefix + ": word and position embeddings differ in length");
  }
  const Var both[] = {word_embs, pos_embs};
  Var x = concat_rows(both);
  std::vector<Var> pooled;
  pooled.reserve(windows.size());
  for (int w : windows) {
    Var filt = g.param(store.at(prefix + ".w" + std::to_string(w)));
    Var bias = g.param(store.at(prefix + ".b" + std::to_string(w)));
    if (filt.cols() != w * x.rows()) throw ShapeError(prefix + ": filter width mismatch");
    Var maps = relu(add_bias_cols(matmul(filt, unfold(x, w)), bias));
    pooled.push_back(rowwise_max(maps));
  }
  return concat_rows(pooled);
}

void add_attention(ParamStore& store, const std::string& prefix, Eigen::Index query_dim,
                   Eigen::Index key_dim, Eigen::Index attn_dim, Rng& rng) {
  store.add(prefix + ".WD", glorot_matrix(attn_dim, query_dim, rng));
  store.add(prefix + ".WE", glorot_matrix(attn_dim, key_dim, rng));
  store.add(prefix + ".v", glorot_matrix(1, attn_dim, rng));
}

Var project_keys(Graph& g, ParamStore& store, const std::string& prefix, Var keys) {
  return matmul(g.param(store.at(prefix + ".WE")), keys);
}

Attention additive_attention(Graph& g, ParamStore& store, const std::string& prefix, Var query,
                             Var keys, Var projected_keys, std::span<const bool> mask) {
  if (keys.cols() == 0) throw ShapeError(prefix + ": attention over an empty key set");
  Var wd = g.param(store.at(prefix + ".WD"));
  Var v = g.param(store.at(prefix + ".v"));
  Var hidden = tanh(add_bias_cols(projected_keys, matmul(wd, query)));
  Var logits = transpose(matmul(v, hidden));
  Attention out;
  out.logits = logits;
  out.log_probs = log_softmax(logits, mask);
  out.probs = softmax(logits, mask);
  out.context = matmul(keys, out.probs);
  return out;
}

Attention additive_attention(Graph& g, ParamStore& store, const std::string& prefix, Var query,
                             Var keys) {
  if (keys.cols() == 0) throw ShapeError(prefix + ": attention over an empty key set");
  return additive_attention(g, store, prefix, query, keys, project_keys(g, store, prefix, keys));
}

}  // namespace dimac::nn
