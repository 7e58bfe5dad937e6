// Reverse-mode autodiff over a tape of scalar/small-vector nodes.
//
// Nodes are evaluated eagerly as they are recorded, so the primal value of
// any expression is available while the graph is being built (this is what
// lets e.g. the Laplace CDF pick its numerically stable branch per sample).
// backward() walks the tape once in reverse insertion order, which fixes the
// accumulation order and makes gradients bitwise reproducible.
#pragma once

#include <cassert>
#include <cstring>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "srvol/common.hpp"

namespace srvol::ad {

// -------------------------------------------------------------- parameters

// Flat store of named parameter segments with a parallel gradient buffer.
class ParameterStore {
public:
    struct Segment {
        std::string name;
        std::size_t offset = 0;
        std::size_t size = 0;
    };

    std::size_t add_segment(const std::string& name, std::size_t size) {
        if (index_.count(name))
            throw SpecError("duplicate parameter segment: " + name);
        Segment seg{name, values_.size(), size};
        values_.resize(values_.size() + size, 0.0);
        grads_.resize(values_.size(), 0.0);
        segments_.push_back(seg);
        index_[name] = segments_.size() - 1;
        return segments_.size() - 1;
    }

    std::size_t segment_id(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw SpecError("unknown parameter segment: " + name);
        return it->second;
    }
    bool has_segment(const std::string& name) const { return index_.count(name) != 0; }

    const Segment& segment(std::size_t id) const { return segments_.at(id); }
    std::size_t segment_count() const { return segments_.size(); }

    std::span<double> values(std::size_t id) {
        const Segment& s = segments_.at(id);
        return {values_.data() + s.offset, s.size};
    }
    std::span<const double> values(std::size_t id) const {
        const Segment& s = segments_.at(id);
        return {values_.data() + s.offset, s.size};
    }
    std::span<double> grads(std::size_t id) {
        const Segment& s = segments_.at(id);
        return {grads_.data() + s.offset, s.size};
    }

    std::vector<double>& raw_values() { return values_; }
    const std::vector<double>& raw_values() const { return values_; }
    std::vector<double>& raw_grads() { return grads_; }
    std::size_t size() const { return values_.size(); }

    void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

private:
    std::vector<double> values_, grads_;
    std::vector<Segment> segments_;
    std::unordered_map<std::string, std::size_t> index_;
};

// -------------------------------------------------------------- tape

enum class Op : std::uint8_t {
    Input, Const, Param,
    Add, Sub, Mul, Div, Pow, Min, Max,
    Neg, Exp, Log, Sqrt, Sin, Cos, Tanh, Relu, Softplus, Sigmoid, Abs,
    Dot, Sum, MatVec, Concat, Slice,
};

class Tape;

// Handle to a node on a tape. Length-1 nodes act as scalars; binary
// elementwise ops broadcast a length-1 operand against a longer one.
struct Value {
    Tape* tape = nullptr;
    int idx = -1;
    bool valid() const { return tape != nullptr && idx >= 0; }
};

namespace detail {
inline double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}
inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace detail

class Tape {
public:
    explicit Tape(ParameterStore* params = nullptr) : params_(params) {}

    ParameterStore* params() { return params_; }

    void clear() {
        nodes_.clear();
        arena_.clear();
        adjoint_.clear();
        evaluated_ = false;
    }

    std::size_t node_count() const { return nodes_.size(); }

    // ---- leaves

    Value input(std::span<const double> v) {
        Value out = alloc(Op::Input, -1, -1, std::uint32_t(v.size()));
        std::copy(v.begin(), v.end(), slot(out));
        check_finite(out.idx);
        evaluated_ = true;
        return out;
    }
    Value input(double x) { return input(std::span<const double>(&x, 1)); }

    Value constant(double x) {
        Value out = alloc(Op::Const, -1, -1, 1);
        slot(out)[0] = x;
        return out;
    }
    Value constant(std::span<const double> v) {
        Value out = alloc(Op::Const, -1, -1, std::uint32_t(v.size()));
        std::copy(v.begin(), v.end(), slot(out));
        return out;
    }

    // View of a parameter segment (or a sub-range of it).
    Value param(std::size_t segment_id, std::size_t offset = 0, std::size_t len = SIZE_MAX) {
        const auto& seg = params_->segment(segment_id);
        if (len == SIZE_MAX) len = seg.size - offset;
        if (offset + len > seg.size) throw SpecError("param view out of range");
        Value out = alloc(Op::Param, -1, -1, std::uint32_t(len));
        nodes_[out.idx].aux = std::uint32_t(seg.offset + offset);
        refresh_param(out.idx);
        evaluated_ = true;
        return out;
    }

    // ---- graph re-evaluation with current inputs/params

    void set_input(Value v, std::span<const double> data) {
        Node& n = nodes_.at(v.idx);
        if (n.op != Op::Input || n.len != data.size())
            throw SpecError("set_input: not an input node of matching length");
        std::copy(data.begin(), data.end(), arena_.data() + n.off);
        evaluated_ = false;
    }

    void invalidate() { evaluated_ = false; }

    // Recompute every node's primal in insertion (topological) order.
    void forward() {
        for (int i = 0; i < int(nodes_.size()); ++i) {
            eval_node(i);
            check_finite(i);
        }
        evaluated_ = true;
    }

    // ---- backward

    // Accumulates parameter gradients into `param_grads` (defaults to the
    // store's own gradient buffer) and leaves node adjoints readable.
    void backward(Value out, std::span<const double> seed, std::span<double> param_grads = {}) {
        if (!evaluated_ || nodes_.empty())
            throw StateError("backward called before forward evaluation");
        if (param_grads.empty() && params_ != nullptr)
            param_grads = {params_->raw_grads().data(), params_->raw_grads().size()};
        const Node& on = nodes_.at(out.idx);
        if (seed.size() != on.len)
            throw SpecError("backward: seed length does not match output arity");
        adjoint_.assign(arena_.size(), 0.0);
        double* adj = adjoint_.data();
        for (std::size_t k = 0; k < seed.size(); ++k) adj[on.off + k] = seed[k];
        for (int i = out.idx; i >= 0; --i) backprop_node(i, param_grads);
    }

    void backward(Value out, double seed = 1.0, std::span<double> param_grads = {}) {
        backward(out, std::span<const double>(&seed, 1), param_grads);
    }

    // ---- reads

    std::span<const double> values_of(Value v) const {
        const Node& n = nodes_.at(v.idx);
        return {arena_.data() + n.off, n.len};
    }
    double value_of(Value v) const {
        const Node& n = nodes_.at(v.idx);
        return arena_[n.off];
    }
    std::span<const double> adjoint_of(Value v) const {
        const Node& n = nodes_.at(v.idx);
        if (adjoint_.size() != arena_.size())
            throw StateError("adjoint read before backward");
        return {adjoint_.data() + n.off, n.len};
    }
    std::size_t length_of(Value v) const { return nodes_.at(v.idx).len; }

    // ---- elementwise ops (broadcast a length-1 operand)

    Value add(Value a, Value b) { return binary(Op::Add, a, b); }
    Value sub(Value a, Value b) { return binary(Op::Sub, a, b); }
    Value mul(Value a, Value b) { return binary(Op::Mul, a, b); }
    Value div(Value a, Value b) { return binary(Op::Div, a, b); }
    Value pow(Value a, Value b) { return binary(Op::Pow, a, b); }
    Value min(Value a, Value b) { return binary(Op::Min, a, b); }
    Value max(Value a, Value b) { return binary(Op::Max, a, b); }

    Value neg(Value a) { return unary(Op::Neg, a); }
    Value exp(Value a) { return unary(Op::Exp, a); }
    Value log(Value a) { return unary(Op::Log, a); }
    Value sqrt(Value a) { return unary(Op::Sqrt, a); }
    Value sin(Value a) { return unary(Op::Sin, a); }
    Value cos(Value a) { return unary(Op::Cos, a); }
    Value tanh(Value a) { return unary(Op::Tanh, a); }
    Value relu(Value a) { return unary(Op::Relu, a); }
    Value softplus(Value a) { return unary(Op::Softplus, a); }
    Value sigmoid(Value a) { return unary(Op::Sigmoid, a); }
    Value abs(Value a) { return unary(Op::Abs, a); }

    // ---- reductions / structure

    Value dot(Value a, Value b) {
        if (len(a) != len(b)) throw SpecError("dot: length mismatch");
        Value out = alloc(Op::Dot, a.idx, b.idx, 1);
        eval_node(out.idx);
        check_finite(out.idx);
        return out;
    }

    Value sum(Value a) {
        Value out = alloc(Op::Sum, a.idx, -1, 1);
        eval_node(out.idx);
        check_finite(out.idx);
        return out;
    }

    // y = W x, W a (rows x cols) row-major view into a parameter segment.
    Value matvec(std::size_t segment_id, std::size_t rows, std::size_t cols, Value x) {
        const auto& seg = params_->segment(segment_id);
        if (seg.size != rows * cols) throw SpecError("matvec: segment size != rows*cols");
        if (len(x) != cols) throw SpecError("matvec: vector length != cols");
        Value out = alloc(Op::MatVec, x.idx, -1, std::uint32_t(rows));
        nodes_[out.idx].aux = std::uint32_t(seg.offset);
        eval_node(out.idx);
        check_finite(out.idx);
        return out;
    }

    Value concat(Value a, Value b) {
        Value out = alloc(Op::Concat, a.idx, b.idx, std::uint32_t(len(a) + len(b)));
        eval_node(out.idx);
        return out;
    }

    Value slice(Value a, std::size_t start, std::size_t count) {
        if (start + count > len(a)) throw SpecError("slice out of range");
        Value out = alloc(Op::Slice, a.idx, -1, std::uint32_t(count));
        nodes_[out.idx].aux = std::uint32_t(start);
        eval_node(out.idx);
        return out;
    }

private:
    struct Node {
        Op op;
        int a = -1, b = -1;
        std::uint32_t off = 0;
        std::uint32_t len = 0;
        std::uint32_t aux = 0;  // param store offset, or slice start
    };

    std::size_t len(Value v) const { return nodes_.at(v.idx).len; }
    double* slot(Value v) { return arena_.data() + nodes_[v.idx].off; }

    Value alloc(Op op, int a, int b, std::uint32_t n) {
        Node node;
        node.op = op;
        node.a = a;
        node.b = b;
        node.off = std::uint32_t(arena_.size());
        node.len = n;
        arena_.resize(arena_.size() + n, 0.0);
        nodes_.push_back(node);
        return Value{this, int(nodes_.size() - 1)};
    }

    Value binary(Op op, Value a, Value b) {
        const std::size_t la = len(a), lb = len(b);
        if (la != lb && la != 1 && lb != 1)
            throw SpecError("elementwise op: incompatible lengths");
        Value out = alloc(op, a.idx, b.idx, std::uint32_t(std::max(la, lb)));
        eval_node(out.idx);
        check_finite(out.idx);
        return out;
    }

    Value unary(Op op, Value a) {
        Value out = alloc(op, a.idx, -1, std::uint32_t(len(a)));
        eval_node(out.idx);
        check_finite(out.idx);
        return out;
    }

    void refresh_param(int i) {
        Node& n = nodes_[i];
        const double* src = params_->raw_values().data() + n.aux;
        std::copy(src, src + n.len, arena_.data() + n.off);
    }

    void check_finite(int i) {
        const Node& n = nodes_[i];
        const double* v = arena_.data() + n.off;
        for (std::uint32_t k = 0; k < n.len; ++k)
            if (!std::isfinite(v[k]))
                throw NonFiniteValue("non-finite value at tape node " + std::to_string(i), i);
    }

    void eval_node(int i) {
        Node& n = nodes_[i];
        double* out = arena_.data() + n.off;
        const double* va = n.a >= 0 ? arena_.data() + nodes_[n.a].off : nullptr;
        const double* vb = n.b >= 0 ? arena_.data() + nodes_[n.b].off : nullptr;
        const std::size_t la = n.a >= 0 ? nodes_[n.a].len : 0;
        const std::size_t lb = n.b >= 0 ? nodes_[n.b].len : 0;
        auto A = [&](std::size_t k) { return va[la == 1 ? 0 : k]; };
        auto B = [&](std::size_t k) { return vb[lb == 1 ? 0 : k]; };

        switch (n.op) {
            case Op::Input:
            case Op::Const:
                break;  // leaf values persist in the arena
            case Op::Param:
                refresh_param(i);
                break;
            case Op::Add: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) + B(k); break;
            case Op::Sub: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) - B(k); break;
            case Op::Mul: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) * B(k); break;
            case Op::Div: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) / B(k); break;
            case Op::Pow: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::pow(A(k), B(k)); break;
            case Op::Min: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) <= B(k) ? A(k) : B(k); break;
            case Op::Max: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = A(k) >= B(k) ? A(k) : B(k); break;
            case Op::Neg: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = -va[k]; break;
            case Op::Exp: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::exp(va[k]); break;
            case Op::Log: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::log(va[k]); break;
            case Op::Sqrt: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::sqrt(va[k]); break;
            case Op::Sin: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::sin(va[k]); break;
            case Op::Cos: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::cos(va[k]); break;
            case Op::Tanh: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::tanh(va[k]); break;
            case Op::Relu: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = va[k] > 0.0 ? va[k] : 0.0; break;
            case Op::Softplus: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = detail::stable_softplus(va[k]); break;
            case Op::Sigmoid: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = detail::stable_sigmoid(va[k]); break;
            case Op::Abs: for (std::uint32_t k = 0; k < n.len; ++k) out[k] = std::abs(va[k]); break;
            case Op::Dot: {
                double s = 0.0;
                for (std::size_t k = 0; k < la; ++k) s += va[k] * vb[k];
                out[0] = s;
                break;
            }
            case Op::Sum: {
                double s = 0.0;
                for (std::size_t k = 0; k < la; ++k) s += va[k];
                out[0] = s;
                break;
            }
            case Op::MatVec: {
                const double* W = params_->raw_values().data() + n.aux;
                const std::size_t cols = la;
                for (std::uint32_t r = 0; r < n.len; ++r) {
                    const double* row = W + std::size_t(r) * cols;
                    double s = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) s += row[c] * va[c];
                    out[r] = s;
                }
                break;
            }
            case Op::Concat:
                std::copy(va, va + la, out);
                std::copy(vb, vb + lb, out + la);
                break;
            case Op::Slice:
                std::copy(va + n.aux, va + n.aux + n.len, out);
                break;
        }
    }

    // Skip adjoint pushes into constants (their value can sit outside a
    // primitive's differentiable domain, e.g. pow exponents).
    bool differentiable(int i) const { return nodes_[i].op != Op::Const; }

    void backprop_node(int i, std::span<double> param_grads) {
        const Node& n = nodes_[i];
        const double* adj = adjoint_.data() + n.off;
        bool any = false;
        for (std::uint32_t k = 0; k < n.len && !any; ++k) any = adj[k] != 0.0;
        if (!any) return;

        const double* out = arena_.data() + n.off;
        double* aa = n.a >= 0 ? adjoint_.data() + nodes_[n.a].off : nullptr;
        double* ab = n.b >= 0 ? adjoint_.data() + nodes_[n.b].off : nullptr;
        const double* va = n.a >= 0 ? arena_.data() + nodes_[n.a].off : nullptr;
        const double* vb = n.b >= 0 ? arena_.data() + nodes_[n.b].off : nullptr;
        const std::size_t la = n.a >= 0 ? nodes_[n.a].len : 0;
        const std::size_t lb = n.b >= 0 ? nodes_[n.b].len : 0;
        const bool da = n.a >= 0 && differentiable(n.a);
        const bool db = n.b >= 0 && differentiable(n.b);
        auto A = [&](std::size_t k) { return va[la == 1 ? 0 : k]; };
        auto B = [&](std::size_t k) { return vb[lb == 1 ? 0 : k]; };
        auto acc_a = [&](std::size_t k, double g) { aa[la == 1 ? 0 : k] += g; };
        auto acc_b = [&](std::size_t k, double g) { ab[lb == 1 ? 0 : k] += g; };

        switch (n.op) {
            case Op::Input:
            case Op::Const:
                break;
            case Op::Param: {
                for (std::uint32_t k = 0; k < n.len; ++k) param_grads[n.aux + k] += adj[k];
                break;
            }
            case Op::Add:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (da) acc_a(k, adj[k]);
                    if (db) acc_b(k, adj[k]);
                }
                break;
            case Op::Sub:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (da) acc_a(k, adj[k]);
                    if (db) acc_b(k, -adj[k]);
                }
                break;
            case Op::Mul:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (da) acc_a(k, adj[k] * B(k));
                    if (db) acc_b(k, adj[k] * A(k));
                }
                break;
            case Op::Div:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (da) acc_a(k, adj[k] / B(k));
                    if (db) acc_b(k, -adj[k] * out[k] / B(k));
                }
                break;
            case Op::Pow:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (da) acc_a(k, adj[k] * B(k) * std::pow(A(k), B(k) - 1.0));
                    if (db) acc_b(k, adj[k] * out[k] * std::log(A(k)));
                }
                break;
            case Op::Min:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (A(k) <= B(k)) { if (da) acc_a(k, adj[k]); }
                    else { if (db) acc_b(k, adj[k]); }
                }
                break;
            case Op::Max:
                for (std::uint32_t k = 0; k < n.len; ++k) {
                    if (A(k) >= B(k)) { if (da) acc_a(k, adj[k]); }
                    else { if (db) acc_b(k, adj[k]); }
                }
                break;
            case Op::Neg: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] -= adj[k]; break;
            case Op::Exp: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * out[k]; break;
            case Op::Log: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] / va[k]; break;
            case Op::Sqrt: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * 0.5 / out[k]; break;
            case Op::Sin: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * std::cos(va[k]); break;
            case Op::Cos: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] -= adj[k] * std::sin(va[k]); break;
            case Op::Tanh: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * (1.0 - out[k] * out[k]); break;
            case Op::Relu: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += va[k] > 0.0 ? adj[k] : 0.0; break;
            case Op::Softplus: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * detail::stable_sigmoid(va[k]); break;
            case Op::Sigmoid: if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[k] += adj[k] * out[k] * (1.0 - out[k]); break;
            case Op::Abs:
                if (da) for (std::uint32_t k = 0; k < n.len; ++k)
                    aa[k] += va[k] > 0.0 ? adj[k] : (va[k] < 0.0 ? -adj[k] : 0.0);
                break;
            case Op::Dot: {
                const double g = adj[0];
                if (da) for (std::size_t k = 0; k < la; ++k) aa[k] += g * vb[k];
                if (db) for (std::size_t k = 0; k < lb; ++k) ab[k] += g * va[k];
                break;
            }
            case Op::Sum: {
                const double g = adj[0];
                if (da) for (std::size_t k = 0; k < la; ++k) aa[k] += g;
                break;
            }
            case Op::MatVec: {
                const double* W = params_->raw_values().data() + n.aux;
                const std::size_t cols = la;
                for (std::uint32_t r = 0; r < n.len; ++r) {
                    const double g = adj[r];
                    if (g == 0.0) continue;
                    const double* row = W + std::size_t(r) * cols;
                    double* grow = param_grads.data() + n.aux + std::size_t(r) * cols;
                    for (std::size_t c = 0; c < cols; ++c) {
                        if (da) aa[c] += g * row[c];
                        grow[c] += g * va[c];
                    }
                }
                break;
            }
            case Op::Concat:
                if (da) for (std::size_t k = 0; k < la; ++k) aa[k] += adj[k];
                if (db) for (std::size_t k = 0; k < lb; ++k) ab[k] += adj[la + k];
                break;
            case Op::Slice:
                if (da) for (std::uint32_t k = 0; k < n.len; ++k) aa[n.aux + k] += adj[k];
                break;
        }
    }

    ParameterStore* params_;
    std::vector<Node> nodes_;
    std::vector<double> arena_;
    std::vector<double> adjoint_;
    bool evaluated_ = false;
};

// -------------------------------------------------------------- operators

inline Value operator+(Value a, Value b) { return a.tape->add(a, b); }
inline Value operator-(Value a, Value b) { return a.tape->sub(a, b); }
inline Value operator*(Value a, Value b) { return a.tape->mul(a, b); }
inline Value operator/(Value a, Value b) { return a.tape->div(a, b); }
inline Value operator-(Value a) { return a.tape->neg(a); }
inline Value operator+(Value a, double b) { return a + a.tape->constant(b); }
inline Value operator+(double a, Value b) { return b.tape->constant(a) + b; }
inline Value operator-(Value a, double b) { return a - a.tape->constant(b); }
inline Value operator-(double a, Value b) { return b.tape->constant(a) - b; }
inline Value operator*(Value a, double b) { return a * a.tape->constant(b); }
inline Value operator*(double a, Value b) { return b.tape->constant(a) * b; }
inline Value operator/(Value a, double b) { return a / a.tape->constant(b); }
inline Value operator/(double a, Value b) { return b.tape->constant(a) / b; }

inline Value exp(Value a) { return a.tape->exp(a); }
inline Value log(Value a) { return a.tape->log(a); }
inline Value sqrt(Value a) { return a.tape->sqrt(a); }
inline Value sin(Value a) { return a.tape->sin(a); }
inline Value cos(Value a) { return a.tape->cos(a); }
inline Value tanh(Value a) { return a.tape->tanh(a); }
inline Value relu(Value a) { return a.tape->relu(a); }
inline Value softplus(Value a) { return a.tape->softplus(a); }
inline Value sigmoid(Value a) { return a.tape->sigmoid(a); }
inline Value abs(Value a) { return a.tape->abs(a); }
inline Value pow(Value a, Value b) { return a.tape->pow(a, b); }
inline Value pow(Value a, double b) { return a.tape->pow(a, a.tape->constant(b)); }
inline Value min(Value a, Value b) { return a.tape->min(a, b); }
inline Value max(Value a, Value b) { return a.tape->max(a, b); }
inline Value min(Value a, double b) { return a.tape->min(a, a.tape->constant(b)); }
inline Value max(Value a, double b) { return a.tape->max(a, a.tape->constant(b)); }
inline Value dot(Value a, Value b) { return a.tape->dot(a, b); }
inline Value sum(Value a) { return a.tape->sum(a); }
inline Value concat(Value a, Value b) { return a.tape->concat(a, b); }
inline Value slice(Value a, std::size_t start, std::size_t count) { return a.tape->slice(a, start, count); }

inline double value_of(Value v) { return v.tape->value_of(v); }
inline double value_of(double v) { return v; }

// 3-vector of scalar tape values, for geometry built op-by-op.
using Vec3v = Vec3t<Value>;

inline Vec3v make_vec3(Tape& t, const Vec3& v) {
    return {t.constant(v.x), t.constant(v.y), t.constant(v.z)};
}

// -------------------------------------------------------------- checking

// Max relative error between backward() gradients and central finite
// differences, swept over every parameter in the store. The graph is
// re-evaluated with forward() for each probe.
inline double gradient_check(Tape& tape, Value output, ParameterStore& params, double eps) {
    if (eps <= 0.0) throw SpecError("gradient_check: eps must be positive");
    tape.forward();
    params.zero_grads();
    tape.backward(output, 1.0);
    std::vector<double> analytic = params.raw_grads();

    double max_err = 0.0;
    std::vector<double>& vals = params.raw_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const double saved = vals[i];
        vals[i] = saved + eps;
        tape.forward();
        const double fp = tape.value_of(output);
        vals[i] = saved - eps;
        tape.forward();
        const double fm = tape.value_of(output);
        vals[i] = saved;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic[i] - numeric) /
                           std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        if (err > max_err) max_err = err;
    }
    tape.forward();
    return max_err;
}

}  // namespace srvol::ad
