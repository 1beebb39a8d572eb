#pragma once

#include "sisrnn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sisrnn {

struct NodeId {
    int32_t v = -1;
    bool valid() const { return v >= 0; }
    friend bool operator==(NodeId a, NodeId b) { return a.v == b.v; }
};

enum class Op : uint8_t {
    kInput,
    kParam,
    kConst,
    kMatMul,
    kAdd,
    kMul,
    kScale,          // multiply by build-time constant
    kAddBias,        // [m x n] + [n], bias broadcast over rows
    kScalarMul,      // rank-0 node * tensor
    kConcat,         // along last axis
    kSlice,          // column range [lo, hi)
    kSigmoid,
    kTanh,
    kSoftplus,
    kLogSoftplus,    // log(softplus(x)), stable for very negative x
    kExp,
    kLog,
    kSumAll,         // -> scalar
    kRowSum,         // [m x n] -> [m x 1]
    kLogSumExpRows,  // [m x n] -> [m x 1], stable log-sum-exp per row
};

const char* op_name(Op op);

struct Node {
    Op op;
    std::vector<NodeId> in;
    double c = 0.0;          // kScale factor
    Index lo = 0, hi = 0;    // kSlice column range
    std::string name;        // inputs/params only
    std::vector<Index> declared_shape;  // params only
};

/// A computation over named inputs and named parameter leaves. Structure is
/// append-only and immutable once built; construction order is the
/// topological order. Values live in Evaluation, never here, so one graph
/// can serve many concurrent evaluations.
class Graph {
public:
    NodeId input(std::string name);
    NodeId param(std::string name, std::vector<Index> shape);
    NodeId constant(Tensor value);

    NodeId append(Node n);

    size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id.v)]; }
    const Tensor& const_value(NodeId id) const;

    /// Id of an input or parameter; invalid NodeId if absent.
    NodeId find(std::string_view name) const;
    const std::vector<NodeId>& param_ids() const { return param_ids_; }
    const std::vector<NodeId>& input_ids() const { return input_ids_; }

    std::string describe(NodeId id) const;

private:
    std::vector<Node> nodes_;
    std::unordered_map<std::string, NodeId> named_;
    std::unordered_map<int32_t, Tensor> const_values_;
    std::vector<NodeId> param_ids_;
    std::vector<NodeId> input_ids_;
};

// Builders. Each appends one node and returns its id.
NodeId matmul(Graph& g, NodeId a, NodeId b);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double c);
NodeId add_bias(Graph& g, NodeId a, NodeId bias);
NodeId scalar_mul(Graph& g, NodeId s, NodeId a);
NodeId concat(Graph& g, std::span<const NodeId> parts);
NodeId concat(Graph& g, std::initializer_list<NodeId> parts);
NodeId slice(Graph& g, NodeId a, Index lo, Index hi);
NodeId sigmoid(Graph& g, NodeId a);
NodeId tanh(Graph& g, NodeId a);
NodeId softplus(Graph& g, NodeId a);
NodeId log_softplus(Graph& g, NodeId a);
NodeId exp(Graph& g, NodeId a);
NodeId log(Graph& g, NodeId a);
NodeId sum_all(Graph& g, NodeId a);
NodeId row_sum(Graph& g, NodeId a);
NodeId logsumexp_rows(Graph& g, NodeId a);

using GradMap = std::map<std::string, Tensor>;

/// Mutable workspace for one binding of a graph: bound leaves, forward
/// values, adjoints. Reusable across bindings; buffers are recycled when
/// shapes repeat. Distinct Evaluations of the same Graph are independent.
class Evaluation {
public:
    explicit Evaluation(const Graph& g);

    void bind(NodeId leaf, Tensor v);
    void bind(std::string_view name, Tensor v);

    /// Computes every node value in topological order. Pure in the graph and
    /// bindings: identical bindings give bit-identical values.
    void forward();

    const Tensor& value(NodeId id) const;
    const Tensor& value(std::string_view name) const;

    /// Reverse-mode gradients of a scalar output with respect to every
    /// parameter leaf. Parameters the output does not depend on get zero
    /// gradients of their declared shape. Requires forward() on the current
    /// bindings.
    GradMap backward(NodeId output);

    const Graph& graph() const { return *g_; }

private:
    void check_bound_leaves() const;
    void compute(size_t i);

    const Graph* g_;
    std::vector<Tensor> values_;
    std::vector<char> bound_;
    std::vector<Tensor> adjoints_;
    std::vector<char> reached_;
    bool forwarded_ = false;
};

/// One-shot forward pass; returns the full evaluation for value queries.
Evaluation forward_eval(const Graph& g, const std::vector<std::pair<std::string, Tensor>>& inputs);

/// One-shot gradient pass on a fresh forward of the same bindings.
GradMap backward_grad(const Graph& g, const std::vector<std::pair<std::string, Tensor>>& inputs, NodeId output);

/// Max relative error between analytic gradients and central differences:
///   max over entries of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
/// `loss` must be a deterministic map from the parameter set to a scalar.
double finite_difference_check(const std::function<double(const GradMap&)>& loss,
                               const GradMap& params,
                               const GradMap& analytic_grads,
                               double step);

}  // namespace sisrnn
