#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dip/param_store.hpp"
#include "dip/tensor.hpp"

namespace dip {

class Graph;

/// Handle to a node recorded on a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape over tensor-valued operations.
///
/// Nodes are appended in evaluation order, so replaying them backwards is a
/// valid topological order. A graph built with `record == false` keeps values
/// only; it is used for teacher passes and finite-difference probes.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);

  // Leaf bound to `store[name]`. Repeated calls return the same node. When
  // `trainable` is false the leaf is a constant and never receives gradient.
  Var param(const ParamStore& store, const std::string& name, bool trainable = true);

  // Appends an operation result. `backward` is dropped when no input needs a
  // gradient or the graph is not recording.
  Var push(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward, const char* op);
  Var push(Tensor value, const std::vector<Var>& inputs, BackwardFn backward, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator of a node, zero-initialized on first access.
  Tensor& grad_ref(std::size_t id);
  const Tensor& grad_of(std::size_t id) const;  // output gradient inside a backward fn

  // Runs reverse accumulation from a one-element root.
  void backward(Var root);

  // Gradient reached by a node after backward(); zero tensor if unreached.
  Tensor grad(Var v) const;

  // Adds leaf gradients into the bound store's gradient slots.
  void accumulate_param_grads(ParamStore& store) const;

  // (store index, gradient) for every trainable leaf reached by backward().
  std::vector<std::pair<std::size_t, Tensor>> param_grads() const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    std::ptrdiff_t param_index = -1;
  };

  bool record_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  const ParamStore* bound_store_ = nullptr;
  std::unordered_map<std::string, std::size_t> param_nodes_;
};

namespace ad {

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
// x * W + b with b broadcast over rows; `bias` may be omitted.
Var linear(Var x, Var weight, std::optional<Var> bias);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var scale_by(Var a, Var s);  // s is a one-element tensor

Var exp(Var a);
Var reciprocal(Var a);
Var relu(Var a);
Var gelu(Var a);

Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var row_normalize(Var a);

Var sum(Var a);
Var mean(Var a);
Var row_sum(Var a);          // n x 1
Var div_rows(Var a, Var d);  // a(i,j) / d(i), d is n x 1

Var gather_rows(Var a, std::vector<std::size_t> rows);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice(Var a, std::size_t row0, std::size_t col0, std::size_t nrows, std::size_t ncols);
// Places `a` at (row0, col0) inside a zero matrix of the given size.
Var embed(Var a, std::size_t rows, std::size_t cols, std::size_t row0, std::size_t col0);

// Output row g reduces the input rows listed in groups[g].
enum class Reduce { kMean, kMax };
Var group_reduce(Var a, const std::vector<std::vector<std::size_t>>& groups, Reduce mode);

// out(i,j) = sum_k w(k) * (a(i,k) - a(j,k))^2, with w = 1 when omitted.
Var pairwise_sqdist(Var a, std::optional<Var> weights);

struct AttentionGroup {
  std::vector<std::size_t> query_rows;
  std::vector<std::size_t> key_rows;
};

// Multi-head scaled dot-product attention evaluated independently per group:
// softmax(Q_g K_g^T * scale + bias) V_g with heads splitting the columns.
// `bias` (|query_rows| x |key_rows|) is added to every head and group. Query
// rows outside all groups produce zero rows.
Var attention(Var q, Var k, Var v, std::size_t heads, const std::vector<AttentionGroup>& groups,
              std::optional<Var> bias, double scale);

}  // namespace ad
}  // namespace dip
