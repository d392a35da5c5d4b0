#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "bnn/tensor.hpp"

namespace bnn {

class Graph;

// Handle to a node in a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph* graph() const noexcept { return graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Shape& shape() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

enum class Op {
  leaf,
  constant,
  matmul,
  transpose,
  add,
  sub,
  multiply,
  scale,
  shift,
  broadcast,
  tanh,
  relu,
  exp,
  log,
  sqrt,
  softplus,
  square,
  abs,
  log_softmax,
  sum,
  mean,
};

const char* op_name(Op op);

using Bindings = std::unordered_map<std::string, Tensor>;
// Ordered so that iteration (and anything derived from it) is deterministic.
using Gradients = std::map<std::string, Tensor>;

class Evaluation {
 public:
  const Tensor& value(Var v) const { return values_.at(v.id()); }
  double scalar(Var v) const { return values_.at(v.id()).item(); }

 private:
  friend class Graph;
  std::vector<Tensor> values_;
};

// Symbolic computation graph with reverse-mode differentiation.
//
// Nodes are appended in topological order; leaves are named placeholders that
// are bound at evaluation time, constants are embedded. Evaluation never
// mutates the graph, so one graph can be replayed under different bindings.
// Shapes are checked when nodes are added.
class Graph {
 public:
  Var leaf(const std::string& name, Shape shape, bool trainable = true);
  Var constant(Tensor value);
  Var constant(double value) { return constant(Tensor::scalar(value)); }

  Var add_node(Op op, Var a, Var b = {}, double scalar = 0.0, Shape target = {});

  Evaluation evaluate(const Bindings& bindings) const;

  // Gradients of a scalar output w.r.t. every trainable leaf. Leaves that the
  // output does not depend on get zero tensors.
  Gradients backward(Var output, const Evaluation& evaluation) const;
  Gradients backward(Var output, const Bindings& bindings) const {
    return backward(output, evaluate(bindings));
  }

  const Shape& shape(Var v) const { return nodes_.at(v.id()).shape; }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool has_leaf(const std::string& name) const { return leaves_.count(name) > 0; }
  Var find_leaf(const std::string& name);
  std::vector<std::string> leaf_names(bool trainable_only = false) const;

 private:
  struct Node {
    Op op = Op::leaf;
    std::size_t lhs = 0;
    std::size_t rhs = 0;
    int arity = 0;
    double scalar = 0.0;
    Shape shape;
    std::string name;
    bool trainable = false;
    Tensor value;  // constants only
  };

  std::string describe(std::size_t id) const;
  void check_same_graph(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> leaves_;
};

// Expression-building free functions.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator+(Var a, double c);
Var operator-(Var a);
Var broadcast(Var a, Shape target);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var softplus(Var a);
Var square(Var a);
Var abs(Var a);
Var log_softmax(Var a);
Var sum(Var a);
Var mean(Var a);

// Values of the requested output nodes under the bindings.
std::map<std::string, Tensor> forward_eval(const Graph& graph, const Bindings& bindings,
                                           const std::map<std::string, Var>& outputs);

// Central-difference gradient estimate of a scalar function, element-wise.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& point, double step);

// Numerically stable elementwise helpers shared with the distributions.
double softplus(double x);
double sigmoid(double x);

}  // namespace bnn
