#pragma once

// Reverse-mode automatic differentiation over dense double matrices.
//
// A Graph records every value produced during one forward pass. Nodes are
// appended in evaluation order, so walking the tape backwards is a valid
// topological order for backpropagation. Parameters are bound once per graph
// and their accumulated gradients are flushed into Parameter::grad at the end
// of Graph::backward.

#include <Eigen/Dense>

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dimac/error.hpp"

namespace dimac::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
};

// Named parameters with one gradient slot each. Iteration order is the
// lexicographic order of names, which keeps serialization and updates
// deterministic.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(const std::string& name, Matrix value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  std::size_t size() const { return params_.size(); }

  // Names starting with `prefix`.
  std::vector<std::string> names(const std::string& prefix = "") const;

  void zero_grad();
  double grad_norm(const std::string& prefix = "") const;
  std::size_t scalar_count() const;

  // Copies values of every parameter whose name starts with `from_prefix`
  // into the parameter with the prefix replaced by `to_prefix`. Shapes must
  // agree.
  void copy_prefix(const std::string& from_prefix, const std::string& to_prefix);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Parameter> params_;
};

class Graph;

// Lightweight handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

class Graph {
 public:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    std::function<void(Graph&, const Node&)> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Matrix value);
  Var constant_scalar(double value);
  // Binds a parameter; repeated calls with the same parameter return the same
  // node so that gradients are accumulated once.
  Var param(Parameter& p);

  // Appends a computed node. `parents_need_grad` decides whether the node
  // participates in backpropagation at all.
  Var push(Matrix value, bool needs_grad, std::function<void(Graph&, const Node&)> backward);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  bool needs_grad(Var v) const { return node(v.id).needs_grad; }

  // Adds `delta` into the gradient slot of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& delta);
  void accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& delta);

  // Seeds d(loss)/d(loss) = 1 and propagates; `loss` must be 1x1. Parameter
  // gradients are added into Parameter::grad.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  std::unordered_map<Parameter*, int> bound_;
};

// ---------------------------------------------------------------------------
// Operations. All shapes are checked; violations raise ShapeError.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var transpose(Var a);
// M (r x c) + b (r x 1) broadcast over columns.
Var add_bias_cols(Var m, Var b);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var log(Var a);
// log(sigmoid(a)), computed stably.
Var log_sigmoid(Var a);

Var sum(Var a);
// Element (r, c) as a 1x1 node.
Var pick(Var a, Eigen::Index r, Eigen::Index c = 0);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var column(Var a, Eigen::Index c);

// Row-wise maximum over columns: (r x c) -> (r x 1).
Var rowwise_max(Var a);

// Sliding windows of `window` consecutive columns stacked vertically:
// (d x L) -> (window*d x max(L, window) - window + 1). Inputs shorter than the
// window are zero-padded on the right.
Var unfold(Var a, Eigen::Index window);

// Softmax / log-softmax over all entries of a column or row vector.
// `mask[i] == false` excludes entry i; excluded entries get probability 0 and
// log-probability -infinity. At least one entry must remain.
Var softmax(Var logits, std::span<const bool> mask = {});
Var log_softmax(Var logits, std::span<const bool> mask = {});

// Columns of an embedding table (dim x vocab) selected by `ids`; backward
// scatters directly into the table's gradient.
Var embed_columns(Graph& g, Parameter& table, std::span<const int> ids);

// Sums `values` (L x 1) into a (size x 1) vector: out[index[i]] += values[i].
Var scatter_add(Var values, std::span<const int> index, Eigen::Index size);

// Pads a column vector with zero rows to `size`.
Var pad_rows(Var a, Eigen::Index size);

// Fused LSTM cell. `gates_in` is the 4H x 1 input contribution (W x + b),
// `state` is the packed [h; c] (2H x 1), `recurrent` the 4H x H matrix.
// Gate order: input, forget, candidate, output. Returns packed [h'; c'].
Var lstm_cell(Var gates_in, Var state, Var recurrent);

Var elementwise_min(Var a, Var b);

}  // namespace dimac::nn
