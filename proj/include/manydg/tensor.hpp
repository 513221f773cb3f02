#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace manydg {

class Tape;

// Dense row-major 64-bit float tensor. Values are immutable once constructed;
// copies share storage. A tensor optionally carries a handle into the tape
// that recorded it, which is what backward() walks.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);

    bool defined() const { return data_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const;

    // rank-2 helpers
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& values() const&;
    std::vector<double> values() &&;  // rvalue access copies; no dangling refs
    double at(std::size_t i) const;
    double at(std::size_t i, std::size_t j) const;
    double scalar_value() const;

    bool tracked() const { return node_ >= 0; }
    int node() const { return node_; }
    Tape* tape() const { return tape_; }

private:
    std::vector<std::size_t> shape_;
    std::shared_ptr<const std::vector<double>> data_;
    Tape* tape_ = nullptr;
    int node_ = -1;

    friend class Tape;
};

// Gradients keyed by tape node handle. Every reachable tracked node is
// present after Tape::backward; gradient shapes equal the node values'.
class GradientMap {
public:
    bool has(const Tensor& t) const;
    const Tensor& grad(const Tensor& t) const;

private:
    std::vector<Tensor> grads_;
    const Tape* tape_ = nullptr;

    friend class Tape;
};

// Records primitives in execution order, which is topological by
// construction: inputs are always recorded before their consumers.
// Single-owner; not shared across threads.
class Tape {
public:
    // Receives the gradient of the loss w.r.t. this node's output and
    // returns the gradient contribution for each parent, in parent order.
    // A default-constructed (undefined) entry means "no contribution".
    using BackwardFn = std::function<std::vector<Tensor>(const Tensor&)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf from the tensor's values (detached from any history).
    Tensor leaf(const Tensor& value);

    // Appends one record. Parent id -1 marks an untracked input.
    Tensor record(Tensor value, std::vector<int> parents, BackwardFn back);

    // Reverse sweep from a tracked scalar, accumulating into every leaf.
    GradientMap backward(const Tensor& loss) const;

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> parents;
        BackwardFn back;
        std::vector<std::size_t> shape;
    };
    std::vector<Node> nodes_;
    mutable bool in_backward_ = false;
};

// ---- primitives -----------------------------------------------------------
// Every primitive checks its output for NaN/Inf and throws std::runtime_error
// on a non-finite result.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& a);

// a: [m x n], b: [n]; adds b to every row of a.
Tensor add_rowvec(const Tensor& a, const Tensor& b);
// Concatenates two matrices with equal row counts along columns.
Tensor concat_cols(const Tensor& a, const Tensor& b);
// Gathers rows of a [k x d] table; backward scatter-adds into the table.
Tensor embed_rows(const Tensor& table, const std::vector<int>& rows);
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);

// Reductions. mean_rows averages a [m x n] matrix over the batch axis into
// [n]; l2_norm is sqrt(<a,a>) over all entries; inner_product takes equal
// shapes and returns the scalar <a,b>; sum_all sums all entries.
Tensor mean_rows(const Tensor& a);
Tensor l2_norm(const Tensor& a);
Tensor inner_product(const Tensor& a, const Tensor& b);
Tensor sum_all(const Tensor& a);

// Row-wise forms used by batched cosine/projection pipelines.
Tensor rowwise_inner(const Tensor& a, const Tensor& b);  // [m x d],[m x d] -> [m]
Tensor norm_rows(const Tensor& a);                       // [m x d] -> [m]
Tensor scale_rows(const Tensor& a, const Tensor& s);     // [m x d],[m] -> [m x d]

// Per-row log-softmax with max subtraction; rows exponentiate to a simplex.
Tensor log_softmax_rows(const Tensor& a);

// Identical value, no gradient into ancestors.
Tensor stop_gradient(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- verification harness --------------------------------------------------

// A deterministic function from tracked parameters to a tracked scalar.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Central-difference check of backward() for f at the given parameters.
// Returns the worst per-coordinate relative error, with denominator
// max(|analytic|, |numeric|, 1e-8).
double finite_difference_check(const ScalarFn& f, const std::vector<Tensor>& params,
                               double step = 1e-4);

}  // namespace manydg
