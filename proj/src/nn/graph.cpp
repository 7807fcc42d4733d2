#include "dimac/nn/graph.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace dimac::nn {

namespace {

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_of(a.value()) + " vs " +
                     shape_of(b.value()));
  }
}

Graph& graph_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  Graph& g = graph_of(a);
  if (b.graph != a.graph) throw Error("operands belong to different graphs");
  return g;
}

bool any_grad(Graph& g, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (g.needs_grad(v)) return true;
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

ParamStore::ParamStore(const ParamStore& other) : params_(other.params_) {}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) params_ = other.params_;
  return *this;
}

Parameter& ParamStore::add(const std::string& name, Matrix value) {
  if (params_.count(name) > 0) throw Error("duplicate parameter: " + name);
  Parameter p{name, std::move(value), Matrix()};
  p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  return params_.emplace(name, std::move(p)).first->second;
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, p] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(name);
  }
  return out;
}

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.setZero();
}

double ParamStore::grad_norm(const std::string& prefix) const {
  double sq = 0.0;
  for (const auto& [name, p] : params_) {
    if (name.compare(0, prefix.size(), prefix) == 0) sq += p.grad.squaredNorm();
  }
  return std::sqrt(sq);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::copy_prefix(const std::string& from_prefix, const std::string& to_prefix) {
  for (const auto& name : names(from_prefix)) {
    const std::string target = to_prefix + name.substr(from_prefix.size());
    Parameter& dst = at(target);
    const Parameter& src = at(name);
    if (dst.value.rows() != src.value.rows() || dst.value.cols() != src.value.cols()) {
      throw ShapeError("copy_prefix: shape mismatch for " + target);
    }
    dst.value = src.value;
  }
}

// ---------------------------------------------------------------------------
// Graph

const Matrix& Var::value() const { return graph->node(id).value; }

double Var::scalar() const {
  const Matrix& m = value();
  if (m.size() != 1) throw ShapeError("scalar(): node is " + shape_of(m));
  return m(0, 0);
}

Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Graph::constant_scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Var Graph::param(Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Var{this, it->second};
  Var v = push(p.value, true, nullptr);
  nodes_.back().param = &p;
  bound_.emplace(&p, v.id);
  return v;
}

Var Graph::push(Matrix value, bool needs_grad,
                std::function<void(Graph&, const Node&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = needs_grad ? std::move(backward) : nullptr;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = delta;
  } else {
    n.grad += delta;
  }
}

void Graph::accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad.block(row, col, delta.rows(), delta.cols()) += delta;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw Error("backward: loss belongs to another graph");
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be scalar");
  Node& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.needs_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "add");
  return g.push(a.value() + b.value(), any_grad(g, {a, b}), [a, b](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad);
    gr.accumulate(b, n.grad);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "sub");
  return g.push(a.value() - b.value(), any_grad(g, {a, b}), [a, b](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad);
    gr.accumulate(b, -n.grad);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "mul");
  return g.push(a.value().cwiseProduct(b.value()), any_grad(g, {a, b}),
                [a, b](Graph& gr, const Graph::Node& n) {
                  if (gr.needs_grad(a)) gr.accumulate(a, n.grad.cwiseProduct(b.value()));
                  if (gr.needs_grad(b)) gr.accumulate(b, n.grad.cwiseProduct(a.value()));
                });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  return g.push(a.value() * s, g.needs_grad(a),
                [a, s](Graph& gr, const Graph::Node& n) { gr.accumulate(a, n.grad * s); });
}

Var add_scalar(Var a, double s) {
  Graph& g = graph_of(a);
  Matrix v = a.value().array() + s;
  return g.push(std::move(v), g.needs_grad(a),
                [a](Graph& gr, const Graph::Node& n) { gr.accumulate(a, n.grad); });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_of(a.value()) + " * " + shape_of(b.value()));
  }
  return g.push(a.value() * b.value(), any_grad(g, {a, b}), [a, b](Graph& gr, const Graph::Node& n) {
    if (gr.needs_grad(a)) gr.accumulate(a, n.grad * b.value().transpose());
    if (gr.needs_grad(b)) gr.accumulate(b, a.value().transpose() * n.grad);
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  return g.push(a.value().transpose(), g.needs_grad(a),
                [a](Graph& gr, const Graph::Node& n) { gr.accumulate(a, n.grad.transpose()); });
}

Var add_bias_cols(Var m, Var b) {
  Graph& g = graph_of(m, b);
  if (b.cols() != 1 || b.rows() != m.rows()) {
    throw ShapeError("add_bias_cols: " + shape_of(m.value()) + " + " + shape_of(b.value()));
  }
  Matrix v = m.value().colwise() + b.value().col(0);
  return g.push(std::move(v), any_grad(g, {m, b}), [m, b](Graph& gr, const Graph::Node& n) {
    gr.accumulate(m, n.grad);
    if (gr.needs_grad(b)) gr.accumulate(b, n.grad.rowwise().sum());
  });
}

Var tanh(Var a) {
  Graph& g = graph_of(a);
  Matrix v = a.value().array().tanh();
  return g.push(v, g.needs_grad(a), [a, v](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad.array() * (1.0 - v.array().square()));
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Matrix v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return g.push(v, g.needs_grad(a), [a, v](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad.array() * v.array() * (1.0 - v.array()));
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Matrix v = a.value().cwiseMax(0.0);
  return g.push(v, g.needs_grad(a), [a](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, (a.value().array() > 0.0).cast<double>() * n.grad.array());
  });
}

Var log(Var a) {
  Graph& g = graph_of(a);
  Matrix v = a.value().array().log();
  return g.push(std::move(v), g.needs_grad(a), [a](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad.array() / a.value().array());
  });
}

Var log_sigmoid(Var a) {
  Graph& g = graph_of(a);
  const auto& x = a.value().array();
  Matrix v = -((-x).max(0.0) + (-x.abs()).exp().log1p());
  return g.push(std::move(v), g.needs_grad(a), [a](Graph& gr, const Graph::Node& n) {
    // d/dx log sigmoid(x) = sigmoid(-x)
    Matrix s = (1.0 / (1.0 + a.value().array().exp())).matrix();
    gr.accumulate(a, n.grad.cwiseProduct(s));
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return g.push(std::move(v), g.needs_grad(a), [a](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, Matrix::Constant(a.rows(), a.cols(), n.grad(0, 0)));
  });
}

Var pick(Var a, Eigen::Index r, Eigen::Index c) {
  Graph& g = graph_of(a);
  if (r < 0 || r >= a.rows() || c < 0 || c >= a.cols()) {
    throw ShapeError("pick: index out of range for " + shape_of(a.value()));
  }
  Matrix v(1, 1);
  v(0, 0) = a.value()(r, c);
  return g.push(std::move(v), g.needs_grad(a), [a, r, c](Graph& gr, const Graph::Node& n) {
    Matrix d(1, 1);
    d(0, 0) = n.grad(0, 0);
    gr.accumulate_block(a, r, c, d);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].cols();
  bool grad = false;
  for (Var p : parts) {
    graph_of(parts[0], p);
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    rows += p.rows();
    grad = grad || g.needs_grad(p);
  }
  Matrix v(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.push(std::move(v), grad, [saved](Graph& gr, const Graph::Node& n) {
    Eigen::Index off = 0;
    for (Var p : saved) {
      if (gr.needs_grad(p)) gr.accumulate(p, n.grad.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].rows();
  bool grad = false;
  for (Var p : parts) {
    graph_of(parts[0], p);
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += p.cols();
    grad = grad || g.needs_grad(p);
  }
  Matrix v(rows, cols);
  Eigen::Index c = 0;
  for (Var p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return g.push(std::move(v), grad, [saved](Graph& gr, const Graph::Node& n) {
    Eigen::Index off = 0;
    for (Var p : saved) {
      if (gr.needs_grad(p)) gr.accumulate(p, n.grad.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
  Graph& g = graph_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: range out of bounds for " + shape_of(a.value()));
  }
  return g.push(a.value().middleRows(start, count), g.needs_grad(a),
                [a, start](Graph& gr, const Graph::Node& n) {
                  gr.accumulate_block(a, start, 0, n.grad);
                });
}

Var column(Var a, Eigen::Index c) {
  Graph& g = graph_of(a);
  if (c < 0 || c >= a.cols()) throw ShapeError("column: index out of range");
  return g.push(a.value().col(c), g.needs_grad(a), [a, c](Graph& gr, const Graph::Node& n) {
    gr.accumulate_block(a, 0, c, n.grad);
  });
}

Var rowwise_max(Var a) {
  Graph& g = graph_of(a);
  if (a.cols() == 0) throw ShapeError("rowwise_max: no columns");
  const Matrix& x = a.value();
  Matrix v(x.rows(), 1);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Eigen::Index best = 0;
    v(r, 0) = x.row(r).maxCoeff(&best);
    arg[static_cast<std::size_t>(r)] = best;
  }
  return g.push(std::move(v), g.needs_grad(a), [a, arg](Graph& gr, const Graph::Node& n) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < d.rows(); ++r) d(r, arg[static_cast<std::size_t>(r)]) = n.grad(r, 0);
    gr.accumulate(a, d);
  });
}

Var unfold(Var a, Eigen::Index window) {
  Graph& g = graph_of(a);
  if (window < 1) throw ShapeError("unfold: window must be positive");
  const Matrix& x = a.value();
  const Eigen::Index d = x.rows();
  const Eigen::Index len = x.cols();
  const Eigen::Index padded = std::max(len, window);
  const Eigen::Index out_cols = padded - window + 1;
  Matrix v = Matrix::Zero(window * d, out_cols);
  for (Eigen::Index t = 0; t < out_cols; ++t) {
    for (Eigen::Index k = 0; k < window; ++k) {
      if (t + k < len) v.block(k * d, t, d, 1) = x.col(t + k);
    }
  }
  return g.push(std::move(v), g.needs_grad(a),
                [a, window, d, len, out_cols](Graph& gr, const Graph::Node& n) {
                  Matrix dx = Matrix::Zero(d, len);
                  for (Eigen::Index t = 0; t < out_cols; ++t) {
                    for (Eigen::Index k = 0; k < window; ++k) {
                      if (t + k < len) dx.col(t + k) += n.grad.block(k * d, t, d, 1);
                    }
                  }
                  gr.accumulate(a, dx);
                });
}

namespace {

// Probabilities over the unmasked entries of `x` (flattened, column-major).
Matrix masked_softmax_values(const Matrix& x, std::span<const bool> mask) {
  const Eigen::Index size = x.size();
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != size) {
    throw ShapeError("softmax: mask length does not match logits");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < size; ++i) {
    if (mask.empty() || mask[static_cast<std::size_t>(i)]) mx = std::max(mx, x.data()[i]);
  }
  if (!std::isfinite(mx)) throw NumericError("softmax: every entry is masked or non-finite");
  Matrix p(x.rows(), x.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < size; ++i) {
    const bool on = mask.empty() || mask[static_cast<std::size_t>(i)];
    const double e = on ? std::exp(x.data()[i] - mx) : 0.0;
    p.data()[i] = e;
    total += e;
  }
  p /= total;
  return p;
}

}  // namespace

Var softmax(Var logits, std::span<const bool> mask) {
  Graph& g = graph_of(logits);
  Matrix p = masked_softmax_values(logits.value(), mask);
  return g.push(p, g.needs_grad(logits), [logits, p](Graph& gr, const Graph::Node& n) {
    const double dot = n.grad.cwiseProduct(p).sum();
    gr.accumulate(logits, p.cwiseProduct((n.grad.array() - dot).matrix()));
  });
}

Var log_softmax(Var logits, std::span<const bool> mask) {
  Graph& g = graph_of(logits);
  Matrix p = masked_softmax_values(logits.value(), mask);
  std::vector<bool> on(static_cast<std::size_t>(p.size()), true);
  if (!mask.empty()) on.assign(mask.begin(), mask.end());
  Matrix v(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    v.data()[i] = on[static_cast<std::size_t>(i)] ? std::log(p.data()[i])
                                                  : -std::numeric_limits<double>::infinity();
  }
  // Recompute exact log-probabilities where p underflows.
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (on[static_cast<std::size_t>(i)]) mx = std::max(mx, logits.value().data()[i]);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (on[static_cast<std::size_t>(i)]) total += std::exp(logits.value().data()[i] - mx);
  }
  const double lse = mx + std::log(total);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (on[static_cast<std::size_t>(i)]) v.data()[i] = logits.value().data()[i] - lse;
  }
  return g.push(std::move(v), g.needs_grad(logits), [logits, p, on](Graph& gr, const Graph::Node& n) {
    double gsum = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      if (on[static_cast<std::size_t>(i)]) gsum += n.grad.data()[i];
    }
    Matrix d(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      d.data()[i] = on[static_cast<std::size_t>(i)] ? n.grad.data()[i] - p.data()[i] * gsum : 0.0;
    }
    gr.accumulate(logits, d);
  });
}

Var embed_columns(Graph& g, Parameter& table, std::span<const int> ids) {
  Matrix v(table.value.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table.value.cols()) {
      throw ShapeError("embed_columns: id out of range for " + table.name);
    }
    v.col(static_cast<Eigen::Index>(k)) = table.value.col(ids[k]);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  Parameter* p = &table;
  return g.push(std::move(v), true, [p, saved](Graph&, const Graph::Node& n) {
    for (std::size_t k = 0; k < saved.size(); ++k) {
      p->grad.col(saved[k]) += n.grad.col(static_cast<Eigen::Index>(k));
    }
  });
}

Var scatter_add(Var values, std::span<const int> index, Eigen::Index size) {
  Graph& g = graph_of(values);
  if (values.cols() != 1 || values.rows() != static_cast<Eigen::Index>(index.size())) {
    throw ShapeError("scatter_add: values must be a column matching the index");
  }
  Matrix v = Matrix::Zero(size, 1);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= size) throw ShapeError("scatter_add: index out of range");
    v(index[i], 0) += values.value()(static_cast<Eigen::Index>(i), 0);
  }
  std::vector<int> saved(index.begin(), index.end());
  return g.push(std::move(v), g.needs_grad(values), [values, saved](Graph& gr, const Graph::Node& n) {
    Matrix d(static_cast<Eigen::Index>(saved.size()), 1);
    for (std::size_t i = 0; i < saved.size(); ++i) d(static_cast<Eigen::Index>(i), 0) = n.grad(saved[i], 0);
    gr.accumulate(values, d);
  });
}

Var pad_rows(Var a, Eigen::Index size) {
  Graph& g = graph_of(a);
  if (a.cols() != 1 || size < a.rows()) throw ShapeError("pad_rows: invalid target size");
  Matrix v = Matrix::Zero(size, 1);
  v.topRows(a.rows()) = a.value();
  const Eigen::Index rows = a.rows();
  return g.push(std::move(v), g.needs_grad(a), [a, rows](Graph& gr, const Graph::Node& n) {
    gr.accumulate(a, n.grad.topRows(rows));
  });
}

Var lstm_cell(Var gates_in, Var state, Var recurrent) {
  Graph& g = graph_of(gates_in, state);
  graph_of(gates_in, recurrent);
  const Eigen::Index hidden = recurrent.cols();
  if (recurrent.rows() != 4 * hidden || gates_in.rows() != 4 * hidden || gates_in.cols() != 1 ||
      state.rows() != 2 * hidden || state.cols() != 1) {
    throw ShapeError("lstm_cell: inconsistent shapes gates=" + shape_of(gates_in.value()) +
                     " state=" + shape_of(state.value()) + " U=" + shape_of(recurrent.value()));
  }
  const Matrix& s = state.value();
  Vector h = s.col(0).head(hidden);
  Vector c = s.col(0).tail(hidden);
  Vector z = gates_in.value().col(0) + recurrent.value() * h;
  auto sig = [](const Vector& x) -> Vector { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); };
  Vector i = sig(z.segment(0, hidden));
  Vector f = sig(z.segment(hidden, hidden));
  Vector cand = z.segment(2 * hidden, hidden).array().tanh();
  Vector o = sig(z.segment(3 * hidden, hidden));
  Vector c_next = f.cwiseProduct(c) + i.cwiseProduct(cand);
  Vector tc = c_next.array().tanh();
  Vector h_next = o.cwiseProduct(tc);
  Matrix out(2 * hidden, 1);
  out.col(0).head(hidden) = h_next;
  out.col(0).tail(hidden) = c_next;
  const bool grad = any_grad(g, {gates_in, state, recurrent});
  return g.push(std::move(out), grad,
                [gates_in, state, recurrent, hidden, h, c, i, f, cand, o, tc](Graph& gr,
                                                                                const Graph::Node& n) {
                  Vector dh = n.grad.col(0).head(hidden);
                  Vector dc = n.grad.col(0).tail(hidden);
                  Vector d_o = dh.cwiseProduct(tc);
                  Vector dct = dc + dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix());
                  Vector di = dct.cwiseProduct(cand);
                  Vector df = dct.cwiseProduct(c);
                  Vector dg = dct.cwiseProduct(i);
                  Vector dz(4 * hidden);
                  dz.segment(0, hidden) = di.array() * i.array() * (1.0 - i.array());
                  dz.segment(hidden, hidden) = df.array() * f.array() * (1.0 - f.array());
                  dz.segment(2 * hidden, hidden) = dg.array() * (1.0 - cand.array().square());
                  dz.segment(3 * hidden, hidden) = d_o.array() * o.array() * (1.0 - o.array());
                  gr.accumulate(gates_in, dz);
                  if (gr.needs_grad(recurrent)) gr.accumulate(recurrent, dz * h.transpose());
                  if (gr.needs_grad(state)) {
                    Matrix ds(2 * hidden, 1);
                    ds.col(0).head(hidden) = recurrent.value().transpose() * dz;
                    ds.col(0).tail(hidden) = dct.cwiseProduct(f);
                    gr.accumulate(state, ds);
                  }
                });
}

Var elementwise_min(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(a, b, "elementwise_min");
  Matrix v = a.value().cwiseMin(b.value());
  return g.push(std::move(v), any_grad(g, {a, b}), [a, b](Graph& gr, const Graph::Node& n) {
    Matrix take_a = (a.value().array() <= b.value().array()).cast<double>();
    if (gr.needs_grad(a)) gr.accumulate(a, n.grad.cwiseProduct(take_a));
    if (gr.needs_grad(b)) gr.accumulate(b, n.grad.cwiseProduct((1.0 - take_a.array()).matrix()));
  });
}

}  // namespace dimac::nn
