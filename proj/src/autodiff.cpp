#include "bnn/autodiff.hpp"

#include <cmath>

namespace bnn {

namespace {

bool elementwise(Op op) {
  switch (op) {
    case Op::tanh:
    case Op::relu:
    case Op::exp:
    case Op::log:
    case Op::sqrt:
    case Op::softplus:
    case Op::square:
    case Op::abs:
    case Op::scale:
    case Op::shift:
      return true;
    default:
      return false;
  }
}

Tensor row_log_softmax(const Tensor& x) {
  Tensor out = x;
  auto m = out.matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double hi = m.row(r).maxCoeff();
    const double lse = hi + std::log((m.row(r).array() - hi).exp().sum());
    m.row(r).array() -= lse;
  }
  return out;
}

void accumulate(std::vector<Tensor>& adjoints, std::vector<bool>& touched, std::size_t id,
                const Tensor& delta) {
  if (!touched[id]) {
    adjoints[id] = delta;
    touched[id] = true;
  } else {
    adjoints[id].values() += delta.values();
  }
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::constant: return "constant";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::multiply: return "multiply";
    case Op::scale: return "scale";
    case Op::shift: return "shift";
    case Op::broadcast: return "broadcast";
    case Op::tanh: return "tanh";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::sqrt: return "sqrt";
    case Op::softplus: return "softplus";
    case Op::square: return "square";
    case Op::abs: return "abs";
    case Op::log_softmax: return "log_softmax";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
  }
  return "?";
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const Shape& Var::shape() const {
  if (!graph_) throw ContractError("shape() on an empty Var");
  return graph_->shape(*this);
}

std::string Graph::describe(std::size_t id) const {
  const Node& n = nodes_[id];
  std::string s = std::string(op_name(n.op)) + "#" + std::to_string(id);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s;
}

void Graph::check_same_graph(Var v) const {
  if (v.graph() != this || v.id() >= nodes_.size())
    throw ContractError("Var does not belong to this graph");
}

Var Graph::leaf(const std::string& name, Shape shape, bool trainable) {
  if (name.empty()) throw ContractError("leaves must be named");
  if (leaves_.count(name)) throw ContractError("duplicate leaf name '" + name + "'");
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("leaf '" + name + "' has a zero extent");
  Node n;
  n.op = Op::leaf;
  n.shape = std::move(shape);
  n.name = name;
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  leaves_[name] = nodes_.size() - 1;
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite constant in graph");
  Node n;
  n.op = Op::constant;
  n.shape = value.shape();
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::find_leaf(const std::string& name) {
  auto it = leaves_.find(name);
  if (it == leaves_.end()) throw ContractError("no leaf named '" + name + "'");
  return Var(this, it->second);
}

std::vector<std::string> Graph::leaf_names(bool trainable_only) const {
  std::vector<std::string> names;
  for (const Node& n : nodes_)
    if (n.op == Op::leaf && (!trainable_only || n.trainable)) names.push_back(n.name);
  return names;
}

Var Graph::add_node(Op op, Var a, Var b, double scalar, Shape target) {
  check_same_graph(a);
  Node n;
  n.op = op;
  n.lhs = a.id();
  n.arity = 1;
  n.scalar = scalar;
  const Shape& sa = nodes_[a.id()].shape;
  const std::string where = std::string(op_name(op)) + "#" + std::to_string(nodes_.size());
  auto mismatch = [&](const Shape& sb) {
    return DimensionError(where + ": incompatible shapes " + to_string(sa) + " and " +
                          to_string(sb));
  };

  switch (op) {
    case Op::matmul: {
      check_same_graph(b);
      const Shape& sb = nodes_[b.id()].shape;
      if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) throw mismatch(sb);
      n.shape = {sa[0], sb[1]};
      break;
    }
    case Op::add:
    case Op::sub:
    case Op::multiply: {
      check_same_graph(b);
      const Shape& sb = nodes_[b.id()].shape;
      if (sa != sb) throw mismatch(sb);
      n.shape = sa;
      break;
    }
    case Op::transpose:
      if (sa.size() != 2) throw DimensionError(where + ": transpose needs a matrix, got " + to_string(sa));
      n.shape = {sa[1], sa[0]};
      break;
    case Op::broadcast: {
      const bool from_scalar = numel(sa) == 1 && sa.size() <= 1;
      const bool row_bias = sa.size() == 1 && target.size() == 2 && target[1] == sa[0];
      if (!(from_scalar || row_bias || sa == target))
        throw DimensionError(where + ": cannot broadcast " + to_string(sa) + " to " + to_string(target));
      for (std::size_t e : target)
        if (e == 0) throw DimensionError(where + ": zero extent in target");
      n.shape = std::move(target);
      break;
    }
    case Op::log_softmax:
      if (sa.size() != 2 || sa[1] < 2)
        throw DimensionError(where + ": log_softmax needs rows of width >= 2, got " + to_string(sa));
      n.shape = sa;
      break;
    case Op::sum:
    case Op::mean:
      n.shape = {};
      break;
    default:
      if (!elementwise(op)) throw ContractError(where + ": not a composite op");
      n.shape = sa;
  }
  if (op == Op::matmul || op == Op::add || op == Op::sub || op == Op::multiply) {
    n.rhs = b.id();
    n.arity = 2;
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Evaluation Graph::evaluate(const Bindings& bindings) const {
  Evaluation ev;
  ev.values_.resize(nodes_.size());
  auto& v = ev.values_;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::leaf: {
        auto it = bindings.find(n.name);
        if (it == bindings.end()) throw ContractError("leaf '" + n.name + "' is not bound");
        if (it->second.shape() != n.shape)
          throw DimensionError("leaf '" + n.name + "' expects shape " + to_string(n.shape) +
                               ", bound " + to_string(it->second.shape()));
        v[i] = it->second;
        break;
      }
      case Op::constant:
        v[i] = n.value;
        break;
      case Op::matmul: {
        Tensor out(n.shape);
        out.matrix().noalias() = v[n.lhs].matrix() * v[n.rhs].matrix();
        v[i] = std::move(out);
        break;
      }
      case Op::transpose: {
        Tensor out(n.shape);
        out.matrix() = v[n.lhs].matrix().transpose();
        v[i] = std::move(out);
        break;
      }
      case Op::add:
        v[i] = Tensor(n.shape, v[n.lhs].values() + v[n.rhs].values());
        break;
      case Op::sub:
        v[i] = Tensor(n.shape, v[n.lhs].values() - v[n.rhs].values());
        break;
      case Op::multiply:
        v[i] = Tensor(n.shape, v[n.lhs].array() * v[n.rhs].array());
        break;
      case Op::scale:
        v[i] = Tensor(n.shape, v[n.lhs].values() * n.scalar);
        break;
      case Op::shift:
        v[i] = Tensor(n.shape, v[n.lhs].array() + n.scalar);
        break;
      case Op::broadcast: {
        const Tensor& src = v[n.lhs];
        if (src.shape() == n.shape) {
          v[i] = src;
        } else if (src.size() == 1) {
          v[i] = Tensor(n.shape, src[0]);
        } else {
          Tensor out(n.shape);
          out.matrix().rowwise() = src.matrix().row(0);
          v[i] = std::move(out);
        }
        break;
      }
      case Op::tanh:
        v[i] = Tensor(n.shape, v[n.lhs].array().tanh());
        break;
      case Op::relu:
        v[i] = Tensor(n.shape, v[n.lhs].array().max(0.0));
        break;
      case Op::exp:
        v[i] = Tensor(n.shape, v[n.lhs].array().exp());
        break;
      case Op::log:
        v[i] = Tensor(n.shape, v[n.lhs].array().log());
        break;
      case Op::sqrt:
        v[i] = Tensor(n.shape, v[n.lhs].array().sqrt());
        break;
      case Op::softplus:
        v[i] = Tensor(n.shape, v[n.lhs].array().unaryExpr([](double x) { return softplus(x); }));
        break;
      case Op::square:
        v[i] = Tensor(n.shape, v[n.lhs].array().square());
        break;
      case Op::abs:
        v[i] = Tensor(n.shape, v[n.lhs].array().abs());
        break;
      case Op::log_softmax:
        v[i] = row_log_softmax(v[n.lhs]);
        break;
      case Op::sum:
        v[i] = Tensor::scalar(v[n.lhs].values().sum());
        break;
      case Op::mean:
        v[i] = Tensor::scalar(v[n.lhs].values().mean());
        break;
    }
    if (!v[i].all_finite()) throw NumericError("non-finite value at " + describe(i));
  }
  return ev;
}

Gradients Graph::backward(Var output, const Evaluation& evaluation) const {
  check_same_graph(output);
  if (numel(nodes_[output.id()].shape) != 1 || nodes_[output.id()].shape.size() > 1)
    throw ContractError("backward needs a scalar output, got shape " +
                        to_string(nodes_[output.id()].shape) + " at " + describe(output.id()));
  const auto& v = evaluation.values_;
  if (v.size() != nodes_.size()) throw ContractError("evaluation does not match graph");

  std::vector<Tensor> adj(nodes_.size());
  std::vector<bool> touched(nodes_.size(), false);
  adj[output.id()] = Tensor(nodes_[output.id()].shape, 1.0);
  touched[output.id()] = true;

  for (std::size_t k = output.id() + 1; k-- > 0;) {
    if (!touched[k]) continue;
    const Node& n = nodes_[k];
    const Tensor& g = adj[k];
    const Tensor& y = v[k];
    switch (n.op) {
      case Op::leaf:
      case Op::constant:
        break;
      case Op::matmul: {
        Tensor da(nodes_[n.lhs].shape), db(nodes_[n.rhs].shape);
        da.matrix().noalias() = g.matrix() * v[n.rhs].matrix().transpose();
        db.matrix().noalias() = v[n.lhs].matrix().transpose() * g.matrix();
        accumulate(adj, touched, n.lhs, da);
        accumulate(adj, touched, n.rhs, db);
        break;
      }
      case Op::transpose: {
        Tensor da(nodes_[n.lhs].shape);
        da.matrix() = g.matrix().transpose();
        accumulate(adj, touched, n.lhs, da);
        break;
      }
      case Op::add:
        accumulate(adj, touched, n.lhs, g);
        accumulate(adj, touched, n.rhs, g);
        break;
      case Op::sub:
        accumulate(adj, touched, n.lhs, g);
        accumulate(adj, touched, n.rhs, Tensor(g.shape(), -g.values()));
        break;
      case Op::multiply:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.array() * v[n.rhs].array()));
        accumulate(adj, touched, n.rhs, Tensor(g.shape(), g.array() * v[n.lhs].array()));
        break;
      case Op::scale:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.values() * n.scalar));
        break;
      case Op::shift:
        accumulate(adj, touched, n.lhs, g);
        break;
      case Op::broadcast: {
        const Shape& src = nodes_[n.lhs].shape;
        if (src == n.shape) {
          accumulate(adj, touched, n.lhs, g);
        } else if (numel(src) == 1) {
          accumulate(adj, touched, n.lhs, Tensor(src, g.values().sum()));
        } else {
          Tensor da(src);
          da.matrix() = g.matrix().colwise().sum();
          accumulate(adj, touched, n.lhs, da);
        }
        break;
      }
      case Op::tanh:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.array() * (1.0 - y.array().square())));
        break;
      case Op::relu:
        accumulate(adj, touched, n.lhs,
                   Tensor(g.shape(), (v[n.lhs].array() > 0.0).select(g.array(), 0.0)));
        break;
      case Op::exp:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.array() * y.array()));
        break;
      case Op::log:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.array() / v[n.lhs].array()));
        break;
      case Op::sqrt:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), 0.5 * g.array() / y.array()));
        break;
      case Op::softplus:
        accumulate(adj, touched, n.lhs,
                   Tensor(g.shape(), g.array() * v[n.lhs].array().unaryExpr(
                                                     [](double x) { return sigmoid(x); })));
        break;
      case Op::square:
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), 2.0 * g.array() * v[n.lhs].array()));
        break;
      case Op::abs: {
        const auto& x = v[n.lhs].array();
        auto sign = (x > 0.0).cast<double>() - (x < 0.0).cast<double>();
        accumulate(adj, touched, n.lhs, Tensor(g.shape(), g.array() * sign));
        break;
      }
      case Op::log_softmax: {
        Tensor da(g.shape());
        auto gm = g.matrix();
        auto ym = y.matrix();
        auto dm = da.matrix();
        for (Eigen::Index r = 0; r < gm.rows(); ++r)
          dm.row(r) = gm.row(r) - ym.row(r).array().exp().matrix() * gm.row(r).sum();
        accumulate(adj, touched, n.lhs, da);
        break;
      }
      case Op::sum:
        accumulate(adj, touched, n.lhs, Tensor(nodes_[n.lhs].shape, g.item()));
        break;
      case Op::mean: {
        const double count = static_cast<double>(numel(nodes_[n.lhs].shape));
        accumulate(adj, touched, n.lhs, Tensor(nodes_[n.lhs].shape, g.item() / count));
        break;
      }
    }
  }

  Gradients grads;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.op != Op::leaf || !n.trainable) continue;
    grads.emplace(n.name, touched[i] ? adj[i] : Tensor(n.shape));
  }
  return grads;
}

Var matmul(Var a, Var b) { return a.graph()->add_node(Op::matmul, a, b); }
Var transpose(Var a) { return a.graph()->add_node(Op::transpose, a); }
Var operator+(Var a, Var b) { return a.graph()->add_node(Op::add, a, b); }
Var operator-(Var a, Var b) { return a.graph()->add_node(Op::sub, a, b); }
Var operator*(Var a, Var b) { return a.graph()->add_node(Op::multiply, a, b); }
Var operator*(Var a, double c) { return a.graph()->add_node(Op::scale, a, {}, c); }
Var operator*(double c, Var a) { return a * c; }
Var operator+(Var a, double c) { return a.graph()->add_node(Op::shift, a, {}, c); }
Var operator-(Var a) { return a * -1.0; }
Var broadcast(Var a, Shape target) { return a.graph()->add_node(Op::broadcast, a, {}, 0.0, std::move(target)); }
Var tanh(Var a) { return a.graph()->add_node(Op::tanh, a); }
Var relu(Var a) { return a.graph()->add_node(Op::relu, a); }
Var exp(Var a) { return a.graph()->add_node(Op::exp, a); }
Var log(Var a) { return a.graph()->add_node(Op::log, a); }
Var sqrt(Var a) { return a.graph()->add_node(Op::sqrt, a); }
Var softplus(Var a) { return a.graph()->add_node(Op::softplus, a); }
Var square(Var a) { return a.graph()->add_node(Op::square, a); }
Var abs(Var a) { return a.graph()->add_node(Op::abs, a); }
Var log_softmax(Var a) { return a.graph()->add_node(Op::log_softmax, a); }
Var sum(Var a) { return a.graph()->add_node(Op::sum, a); }
Var mean(Var a) { return a.graph()->add_node(Op::mean, a); }

std::map<std::string, Tensor> forward_eval(const Graph& graph, const Bindings& bindings,
                                           const std::map<std::string, Var>& outputs) {
  const Evaluation ev = graph.evaluate(bindings);
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : outputs) out.emplace(name, ev.value(var));
  return out;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& point, double step) {
  if (!(step > 0.0)) throw ContractError("finite-difference step must be positive");
  Tensor grad = Tensor::zeros_like(point);
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + step;
    const double up = f(probe);
    probe[i] = point[i] - step;
    const double down = f(probe);
    probe[i] = point[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

}  // namespace bnn
