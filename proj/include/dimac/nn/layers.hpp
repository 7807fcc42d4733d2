#pragma once

// Parameterized building blocks expressed over Graph operations. Layers are
// addressed by a name prefix inside a ParamStore so that whole sub-networks
// can be copied or frozen by prefix.

#include <span>
#include <string>
#include <vector>

#include "dimac/nn/graph.hpp"
#include "dimac/rng.hpp"

namespace dimac::nn {

inline constexpr double kInitScale = 0.08;

// Recurrent weights use uniform(-0.08, 0.08); feed-forward weights use the
// Glorot uniform range sqrt(6 / (rows + cols)). Biases start at zero.
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = kInitScale);
Matrix glorot_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// ---- Linear: y = W x + b -----------------------------------------------
void add_linear(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                Rng& rng);
Var linear(Graph& g, ParamStore& store, const std::string& prefix, Var x);

// ---- LSTM ----------------------------------------------------------------
// Parameters: <prefix>.W (4H x in), <prefix>.U (4H x H), <prefix>.b (4H x 1).
void add_lstm(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
              Rng& rng);
Eigen::Index lstm_hidden(const ParamStore& store, const std::string& prefix);
Eigen::Index lstm_input(const ParamStore& store, const std::string& prefix);

// One step: returns packed [h'; c'] given input column x and packed state.
Var lstm_step(Graph& g, ParamStore& store, const std::string& prefix, Var x, Var state);
Var state_h(Var packed);
Var state_c(Var packed);
// Packs a hidden vector with a zero cell.
Var pack_state(Graph& g, Var h);

struct BiLstmOutput {
  Var states;  // (2H x L): forward rows on top, backward rows below
  Var end;     // (2H x 1): [last forward h; first backward h]
};

// Bidirectional LSTM over the columns of `inputs` (in x L), L >= 1. Uses
// <prefix>.fwd and <prefix>.bwd.
void add_bilstm(ParamStore& store, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
                Rng& rng);
BiLstmOutput bilstm_encode(Graph& g, ParamStore& store, const std::string& prefix, Var inputs);

// ---- Convolutional sentence encoder ----------------------------------------
// For each window w: <prefix>.w<w> (filters x w*in), <prefix>.b<w> (filters x 1).
// Output: concatenation of per-window max-over-time ReLU feature maps.
void add_conv_sentence(ParamStore& store, const std::string& prefix, Eigen::Index in,
                       std::span<const int> windows, Eigen::Index filters, Rng& rng);
Var conv_sentence_encode(Graph& g, ParamStore& store, const std::string& prefix, Var word_embs,
                         Var pos_embs, std::span<const int> windows);

// ---- Additive attention ------------------------------------------------
// logits_i = v^T tanh(WD q + WE k_i); parameters <prefix>.WD, <prefix>.WE,
// <prefix>.v.
void add_attention(ParamStore& store, const std::string& prefix, Eigen::Index query_dim,
                   Eigen::Index key_dim, Eigen::Index attn_dim, Rng& rng);
// WE K, computed once per key set.
Var project_keys(Graph& g, ParamStore& store, const std::string& prefix, Var keys);

struct Attention {
  Var logits;       // (n x 1)
  Var log_probs;    // (n x 1), -inf on masked entries
  Var probs;        // (n x 1) simplex
  Var context;      // (key_dim x 1)
};

Attention additive_attention(Graph& g, ParamStore& store, const std::string& prefix, Var query,
                             Var keys, Var projected_keys, std::span<const bool> mask = {});
Attention additive_attention(Graph& g, ParamStore& store, const std::string& prefix, Var query,
                             Var keys);

}  // namespace dimac::nn
