#include "sisrnn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sisrnn {

namespace {

double sigmoid_stable(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_stable(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double log_softplus_stable(double x) {
    // For x << 0, softplus(x) ~ exp(x) underflows before log(softplus) loses
    // accuracy; the asymptote is exact to double precision below -30.
    if (x < -30.0) return x;
    return std::log(softplus_stable(x));
}

double dlog_softplus(double x) {
    if (x < -30.0) return 1.0;
    return sigmoid_stable(x) / softplus_stable(x);
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kInput: return "input";
        case Op::kParam: return "param";
        case Op::kConst: return "const";
        case Op::kMatMul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kAddBias: return "add_bias";
        case Op::kScalarMul: return "scalar_mul";
        case Op::kConcat: return "concat";
        case Op::kSlice: return "slice";
        case Op::kSigmoid: return "sigmoid";
        case Op::kTanh: return "tanh";
        case Op::kSoftplus: return "softplus";
        case Op::kLogSoftplus: return "log_softplus";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kSumAll: return "sum";
        case Op::kRowSum: return "row_sum";
        case Op::kLogSumExpRows: return "logsumexp_rows";
    }
    return "?";
}

NodeId Graph::input(std::string name) {
    if (auto it = named_.find(name); it != named_.end()) {
        if (node(it->second).op != Op::kInput)
            throw std::invalid_argument("graph: name '" + name + "' already used by a parameter");
        return it->second;
    }
    Node n;
    n.op = Op::kInput;
    n.name = name;
    NodeId id = append(std::move(n));
    named_.emplace(std::move(name), id);
    input_ids_.push_back(id);
    return id;
}

NodeId Graph::param(std::string name, std::vector<Index> shape) {
    if (auto it = named_.find(name); it != named_.end()) {
        const Node& existing = node(it->second);
        if (existing.op != Op::kParam || existing.declared_shape != shape)
            throw std::invalid_argument("graph: conflicting declaration for '" + name + "'");
        return it->second;
    }
    Node n;
    n.op = Op::kParam;
    n.name = name;
    n.declared_shape = std::move(shape);
    NodeId id = append(std::move(n));
    named_.emplace(std::move(name), id);
    param_ids_.push_back(id);
    return id;
}

NodeId Graph::constant(Tensor value) {
    Node n;
    n.op = Op::kConst;
    NodeId id = append(std::move(n));
    const_values_.emplace(id.v, std::move(value));
    return id;
}

NodeId Graph::append(Node n) {
    const auto next = static_cast<int32_t>(nodes_.size());
    for (NodeId in : n.in)
        if (!in.valid() || in.v >= next)
            throw std::invalid_argument("graph: node input out of range (graph must be built in topological order)");
    nodes_.push_back(std::move(n));
    return NodeId{next};
}

const Tensor& Graph::const_value(NodeId id) const {
    auto it = const_values_.find(id.v);
    if (it == const_values_.end()) throw std::invalid_argument("graph: not a const node");
    return it->second;
}

NodeId Graph::find(std::string_view name) const {
    auto it = named_.find(std::string(name));
    return it == named_.end() ? NodeId{} : it->second;
}

std::string Graph::describe(NodeId id) const {
    const Node& n = node(id);
    std::string s = "node #" + std::to_string(id.v);
    if (!n.name.empty()) s += " '" + n.name + "'";
    s += " (";
    s += op_name(n.op);
    s += ")";
    return s;
}

namespace {
NodeId unary(Graph& g, Op op, NodeId a) {
    Node n;
    n.op = op;
    n.in = {a};
    return g.append(std::move(n));
}
NodeId binary(Graph& g, Op op, NodeId a, NodeId b) {
    Node n;
    n.op = op;
    n.in = {a, b};
    return g.append(std::move(n));
}
}  // namespace

NodeId matmul(Graph& g, NodeId a, NodeId b) { return binary(g, Op::kMatMul, a, b); }
NodeId add(Graph& g, NodeId a, NodeId b) { return binary(g, Op::kAdd, a, b); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return add(g, a, scale(g, b, -1.0)); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return binary(g, Op::kMul, a, b); }

NodeId scale(Graph& g, NodeId a, double c) {
    Node n;
    n.op = Op::kScale;
    n.in = {a};
    n.c = c;
    return g.append(std::move(n));
}

NodeId add_bias(Graph& g, NodeId a, NodeId bias) { return binary(g, Op::kAddBias, a, bias); }
NodeId scalar_mul(Graph& g, NodeId s, NodeId a) { return binary(g, Op::kScalarMul, s, a); }

NodeId concat(Graph& g, std::span<const NodeId> parts) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Node n;
    n.op = Op::kConcat;
    n.in.assign(parts.begin(), parts.end());
    return g.append(std::move(n));
}

NodeId concat(Graph& g, std::initializer_list<NodeId> parts) {
    return concat(g, std::span<const NodeId>(parts.begin(), parts.size()));
}

NodeId slice(Graph& g, NodeId a, Index lo, Index hi) {
    if (lo < 0 || hi < lo) throw std::invalid_argument("slice: bad column range");
    Node n;
    n.op = Op::kSlice;
    n.in = {a};
    n.lo = lo;
    n.hi = hi;
    return g.append(std::move(n));
}

NodeId sigmoid(Graph& g, NodeId a) { return unary(g, Op::kSigmoid, a); }
NodeId tanh(Graph& g, NodeId a) { return unary(g, Op::kTanh, a); }
NodeId softplus(Graph& g, NodeId a) { return unary(g, Op::kSoftplus, a); }
NodeId log_softplus(Graph& g, NodeId a) { return unary(g, Op::kLogSoftplus, a); }
NodeId exp(Graph& g, NodeId a) { return unary(g, Op::kExp, a); }
NodeId log(Graph& g, NodeId a) { return unary(g, Op::kLog, a); }
NodeId sum_all(Graph& g, NodeId a) { return unary(g, Op::kSumAll, a); }
NodeId row_sum(Graph& g, NodeId a) { return unary(g, Op::kRowSum, a); }
NodeId logsumexp_rows(Graph& g, NodeId a) { return unary(g, Op::kLogSumExpRows, a); }

Evaluation::Evaluation(const Graph& g) : g_(&g) {
    values_.resize(g.size());
    bound_.assign(g.size(), 0);
    adjoints_.resize(g.size());
    reached_.assign(g.size(), 0);
    for (size_t i = 0; i < g.size(); ++i) {
        if (g.node(NodeId{static_cast<int32_t>(i)}).op == Op::kConst) {
            values_[i] = g.const_value(NodeId{static_cast<int32_t>(i)});
            bound_[i] = 1;
        }
    }
}

void Evaluation::bind(NodeId leaf, Tensor v) {
    const Node& n = g_->node(leaf);
    if (n.op != Op::kInput && n.op != Op::kParam)
        throw std::invalid_argument("bind: " + g_->describe(leaf) + " is not an input or parameter");
    if (n.op == Op::kParam && v.shape() != n.declared_shape)
        throw std::invalid_argument("bind: " + g_->describe(leaf) + " declared shape does not match bound value " + v.shape_str());
    values_[static_cast<size_t>(leaf.v)] = std::move(v);
    bound_[static_cast<size_t>(leaf.v)] = 1;
    forwarded_ = false;
}

void Evaluation::bind(std::string_view name, Tensor v) {
    NodeId id = g_->find(name);
    if (!id.valid()) throw std::invalid_argument("bind: no input or parameter named '" + std::string(name) + "'");
    bind(id, std::move(v));
}

void Evaluation::check_bound_leaves() const {
    for (size_t i = 0; i < g_->size(); ++i) {
        const Node& n = g_->node(NodeId{static_cast<int32_t>(i)});
        if ((n.op == Op::kInput || n.op == Op::kParam) && !bound_[i])
            throw std::invalid_argument("forward: unbound " + std::string(op_name(n.op)) + " '" + n.name + "'");
    }
}

void Evaluation::forward() {
    check_bound_leaves();
    for (size_t i = 0; i < g_->size(); ++i) {
        const Op op = g_->node(NodeId{static_cast<int32_t>(i)}).op;
        if (op == Op::kInput || op == Op::kParam || op == Op::kConst) continue;
        compute(i);
    }
    forwarded_ = true;
}

void Evaluation::compute(size_t i) {
    const NodeId id{static_cast<int32_t>(i)};
    const Node& n = g_->node(id);
    auto in = [&](size_t k) -> const Tensor& { return values_[static_cast<size_t>(n.in[k].v)]; };
    auto fail = [&](const std::string& msg) -> void {
        throw std::invalid_argument("forward: " + g_->describe(id) + ": " + msg);
    };
    Tensor& out = values_[i];

    switch (n.op) {
        case Op::kInput:
        case Op::kParam:
        case Op::kConst:
            return;
        case Op::kMatMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (b.rank() != 2) fail("right operand must be rank 2, got " + b.shape_str());
            if (a.rank() == 0) fail("left operand must be rank 1 or 2");
            if (a.cols() != b.rows())
                fail("inner dimensions differ: " + a.shape_str() + " x " + b.shape_str());
            if (a.rank() == 1) out = Tensor::row_vector(a.mat() * b.mat());
            else out = Tensor::matrix(a.mat() * b.mat());
            return;
        }
        case Op::kAdd: {
            if (!in(0).same_shape(in(1)))
                fail("shape mismatch: " + in(0).shape_str() + " vs " + in(1).shape_str());
            out = in(0);
            out.mat() += in(1).mat();
            return;
        }
        case Op::kMul: {
            if (!in(0).same_shape(in(1)))
                fail("shape mismatch: " + in(0).shape_str() + " vs " + in(1).shape_str());
            out = in(0);
            out.mat().array() *= in(1).mat().array();
            return;
        }
        case Op::kScale: {
            out = in(0);
            out.mat() *= n.c;
            return;
        }
        case Op::kAddBias: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            if (b.rank() != 1 || b.cols() != a.cols())
                fail("bias must be rank 1 of width " + std::to_string(a.cols()) + ", got " + b.shape_str());
            if (a.rank() == 1) {
                out = a;
                out.mat() += b.mat();
            } else if (a.rank() == 2) {
                out = a;
                out.mat().rowwise() += b.mat().row(0);
            } else {
                fail("left operand must be rank 1 or 2");
            }
            return;
        }
        case Op::kScalarMul: {
            if (in(0).size() != 1) fail("scalar operand has shape " + in(0).shape_str());
            out = in(1);
            out.mat() *= in(0).mat()(0, 0);
            return;
        }
        case Op::kConcat: {
            const int rank = in(0).rank();
            if (rank == 0) fail("cannot concat scalars");
            Index rows = in(0).rows();
            Index total = 0;
            for (size_t k = 0; k < n.in.size(); ++k) {
                if (in(k).rank() != rank || in(k).rows() != rows)
                    fail("operand " + std::to_string(k) + " has shape " + in(k).shape_str() +
                         ", expected rank " + std::to_string(rank) + " with " + std::to_string(rows) + " rows");
                total += in(k).cols();
            }
            Mat m(rows, total);
            Index at = 0;
            for (size_t k = 0; k < n.in.size(); ++k) {
                m.middleCols(at, in(k).cols()) = in(k).mat();
                at += in(k).cols();
            }
            out = rank == 1 ? Tensor::row_vector(std::move(m)) : Tensor::matrix(std::move(m));
            return;
        }
        case Op::kSlice: {
            const Tensor& a = in(0);
            if (a.rank() == 0) fail("cannot slice a scalar");
            if (n.hi > a.cols())
                fail("column range [" + std::to_string(n.lo) + "," + std::to_string(n.hi) +
                     ") exceeds width " + std::to_string(a.cols()));
            Mat m = a.mat().middleCols(n.lo, n.hi - n.lo);
            out = a.rank() == 1 ? Tensor::row_vector(std::move(m)) : Tensor::matrix(std::move(m));
            return;
        }
        case Op::kSigmoid: {
            out = in(0);
            out.mat() = out.mat().unaryExpr([](double x) { return sigmoid_stable(x); });
            return;
        }
        case Op::kTanh: {
            out = in(0);
            out.mat() = out.mat().array().tanh();
            return;
        }
        case Op::kSoftplus: {
            out = in(0);
            out.mat() = out.mat().unaryExpr([](double x) { return softplus_stable(x); });
            return;
        }
        case Op::kLogSoftplus: {
            out = in(0);
            out.mat() = out.mat().unaryExpr([](double x) { return log_softplus_stable(x); });
            return;
        }
        case Op::kExp: {
            out = in(0);
            out.mat() = out.mat().array().exp();
            return;
        }
        case Op::kLog: {
            out = in(0);
            out.mat() = out.mat().array().log();
            return;
        }
        case Op::kSumAll: {
            out = Tensor::scalar(in(0).mat().sum());
            return;
        }
        case Op::kRowSum: {
            const Tensor& a = in(0);
            if (a.rank() != 2) fail("row_sum expects rank 2, got " + a.shape_str());
            out = Tensor::matrix(a.mat().rowwise().sum());
            return;
        }
        case Op::kLogSumExpRows: {
            const Tensor& a = in(0);
            if (a.rank() != 2 || a.cols() == 0) fail("logsumexp_rows expects rank 2 with >= 1 column, got " + a.shape_str());
            Mat m(a.rows(), 1);
            for (Index r = 0; r < a.rows(); ++r) {
                const double mx = a.mat().row(r).maxCoeff();
                m(r, 0) = mx + std::log((a.mat().row(r).array() - mx).exp().sum());
            }
            out = Tensor::matrix(std::move(m));
            return;
        }
    }
}

const Tensor& Evaluation::value(NodeId id) const {
    if (!forwarded_ && g_->node(id).op != Op::kConst)
        throw std::invalid_argument("value: forward() has not been run for the current bindings");
    return values_[static_cast<size_t>(id.v)];
}

const Tensor& Evaluation::value(std::string_view name) const {
    NodeId id = g_->find(name);
    if (!id.valid()) throw std::invalid_argument("value: no node named '" + std::string(name) + "'");
    return value(id);
}

GradMap Evaluation::backward(NodeId output) {
    if (!forwarded_) throw std::invalid_argument("backward: forward() has not been run for the current bindings");
    if (values_[static_cast<size_t>(output.v)].size() != 1)
        throw std::invalid_argument("backward: " + g_->describe(output) + " is not scalar, shape " +
                                    values_[static_cast<size_t>(output.v)].shape_str());

    // Ancestors of the output, found by a reverse sweep (inputs precede users).
    std::fill(reached_.begin(), reached_.end(), 0);
    reached_[static_cast<size_t>(output.v)] = 1;
    for (int32_t i = output.v; i >= 0; --i) {
        if (!reached_[static_cast<size_t>(i)]) continue;
        for (NodeId in : g_->node(NodeId{i}).in) reached_[static_cast<size_t>(in.v)] = 1;
    }

    for (size_t i = 0; i < g_->size(); ++i) {
        if (!reached_[i]) continue;
        Tensor& adj = adjoints_[i];
        const Tensor& v = values_[i];
        if (!adj.same_shape(v)) adj = Tensor::zeros(v.shape());
        else adj.mat().setZero();
    }
    adjoints_[static_cast<size_t>(output.v)].mat().setConstant(1.0);

    for (int32_t i = output.v; i >= 0; --i) {
        if (!reached_[static_cast<size_t>(i)]) continue;
        const Node& n = g_->node(NodeId{i});
        if (n.op == Op::kInput || n.op == Op::kParam || n.op == Op::kConst) continue;
        const Tensor& g = adjoints_[static_cast<size_t>(i)];
        const Tensor& y = values_[static_cast<size_t>(i)];
        auto in_val = [&](size_t k) -> const Tensor& { return values_[static_cast<size_t>(n.in[k].v)]; };
        auto in_adj = [&](size_t k) -> Tensor& { return adjoints_[static_cast<size_t>(n.in[k].v)]; };

        switch (n.op) {
            case Op::kMatMul: {
                const Tensor& a = in_val(0);
                const Tensor& b = in_val(1);
                in_adj(0).mat().noalias() += g.mat() * b.mat().transpose();
                in_adj(1).mat().noalias() += a.mat().transpose() * g.mat();
                break;
            }
            case Op::kAdd:
                in_adj(0).mat() += g.mat();
                in_adj(1).mat() += g.mat();
                break;
            case Op::kMul:
                in_adj(0).mat().array() += g.mat().array() * in_val(1).mat().array();
                in_adj(1).mat().array() += g.mat().array() * in_val(0).mat().array();
                break;
            case Op::kScale:
                in_adj(0).mat() += n.c * g.mat();
                break;
            case Op::kAddBias:
                in_adj(0).mat() += g.mat();
                if (in_val(0).rank() == 2) in_adj(1).mat().row(0) += g.mat().colwise().sum();
                else in_adj(1).mat() += g.mat();
                break;
            case Op::kScalarMul:
                in_adj(0).mat()(0, 0) += (g.mat().array() * in_val(1).mat().array()).sum();
                in_adj(1).mat() += in_val(0).mat()(0, 0) * g.mat();
                break;
            case Op::kConcat: {
                Index at = 0;
                for (size_t k = 0; k < n.in.size(); ++k) {
                    const Index w = in_val(k).cols();
                    in_adj(k).mat() += g.mat().middleCols(at, w);
                    at += w;
                }
                break;
            }
            case Op::kSlice:
                in_adj(0).mat().middleCols(n.lo, n.hi - n.lo) += g.mat();
                break;
            case Op::kSigmoid:
                in_adj(0).mat().array() += g.mat().array() * y.mat().array() * (1.0 - y.mat().array());
                break;
            case Op::kTanh:
                in_adj(0).mat().array() += g.mat().array() * (1.0 - y.mat().array().square());
                break;
            case Op::kSoftplus:
                in_adj(0).mat().array() +=
                    g.mat().array() * in_val(0).mat().unaryExpr([](double x) { return sigmoid_stable(x); }).array();
                break;
            case Op::kLogSoftplus:
                in_adj(0).mat().array() +=
                    g.mat().array() * in_val(0).mat().unaryExpr([](double x) { return dlog_softplus(x); }).array();
                break;
            case Op::kExp:
                in_adj(0).mat().array() += g.mat().array() * y.mat().array();
                break;
            case Op::kLog:
                in_adj(0).mat().array() += g.mat().array() / in_val(0).mat().array();
                break;
            case Op::kSumAll:
                in_adj(0).mat().array() += g.mat()(0, 0);
                break;
            case Op::kRowSum:
                in_adj(0).mat().colwise() += g.mat().col(0);
                break;
            case Op::kLogSumExpRows: {
                const Mat& a = in_val(0).mat();
                Mat& adj = in_adj(0).mat();
                for (Index r = 0; r < a.rows(); ++r)
                    adj.row(r).array() += g.mat()(r, 0) * (a.row(r).array() - y.mat()(r, 0)).exp();
                break;
            }
            case Op::kInput:
            case Op::kParam:
            case Op::kConst:
                break;
        }
    }

    GradMap grads;
    for (NodeId p : g_->param_ids()) {
        const Node& pn = g_->node(p);
        if (reached_[static_cast<size_t>(p.v)]) grads[pn.name] = adjoints_[static_cast<size_t>(p.v)];
        else grads[pn.name] = Tensor::zeros(pn.declared_shape);
    }
    return grads;
}

Evaluation forward_eval(const Graph& g, const std::vector<std::pair<std::string, Tensor>>& inputs) {
    Evaluation ev(g);
    for (const auto& [name, v] : inputs) ev.bind(name, v);
    ev.forward();
    return ev;
}

GradMap backward_grad(const Graph& g, const std::vector<std::pair<std::string, Tensor>>& inputs, NodeId output) {
    Evaluation ev = forward_eval(g, inputs);
    return ev.backward(output);
}

double finite_difference_check(const std::function<double(const GradMap&)>& loss,
                               const GradMap& params,
                               const GradMap& analytic_grads,
                               double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_difference_check: step must be positive");
    GradMap work = params;
    double worst = 0.0;
    for (auto& [name, p] : work) {
        auto git = analytic_grads.find(name);
        if (git == analytic_grads.end())
            throw std::invalid_argument("finite_difference_check: no analytic gradient for '" + name + "'");
        if (!git->second.same_shape(p))
            throw std::invalid_argument("finite_difference_check: gradient shape mismatch for '" + name + "'");
        for (Index i = 0; i < p.size(); ++i) {
            double* x = p.mat().data() + i;
            const double saved = *x;
            *x = saved + step;
            const double up = loss(work);
            *x = saved - step;
            const double down = loss(work);
            *x = saved;
            if (!std::isfinite(up) || !std::isfinite(down))
                throw std::runtime_error("finite_difference_check: non-finite loss while perturbing '" + name + "'");
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = git->second.mat().data()[i];
            const double err = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-12});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace sisrnn
