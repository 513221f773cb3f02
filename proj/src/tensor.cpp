#include "manydg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace manydg {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw std::runtime_error(std::string(op) + ": non-finite value in result");
        }
    }
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tape* common_tape(const Tensor& a, const Tensor& b) {
    if (a.tracked() && b.tracked() && a.tape() != b.tape()) {
        throw std::invalid_argument("operands are tracked on different tapes");
    }
    if (a.tracked()) return a.tape();
    if (b.tracked()) return b.tape();
    return nullptr;
}

// Finishes a primitive: validates the result and records it when any input
// is tracked.
Tensor emit(const char* op, Tape* tape, std::vector<std::size_t> shape,
            std::vector<double> values, std::vector<int> parents,
            Tape::BackwardFn back) {
    check_finite(op, values);
    Tensor out(std::move(shape), std::move(values));
    bool any_tracked = false;
    for (int p : parents) any_tracked |= (p >= 0);
    if (tape == nullptr || !any_tracked) return out;
    return tape->record(std::move(out), std::move(parents), std::move(back));
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<const std::vector<double>>(std::move(values))) {
    require(!shape_.empty(), "tensor shape must be non-empty");
    for (std::size_t d : shape_) require(d > 0, "tensor dimensions must be positive");
    require(data_->size() == product(shape_),
            "tensor data length " + std::to_string(data_->size()) +
                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    std::size_t n = product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::numel() const { return data_ ? data_->size() : 0; }

std::size_t Tensor::rows() const {
    require(rank() == 2, "rows(): tensor is not rank-2");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require(rank() == 2, "cols(): tensor is not rank-2");
    return shape_[1];
}

const std::vector<double>& Tensor::values() const& {
    if (!data_) throw std::logic_error("values(): tensor is undefined");
    return *data_;
}

std::vector<double> Tensor::values() && { return static_cast<const Tensor&>(*this).values(); }

double Tensor::at(std::size_t i) const { return values().at(i); }

double Tensor::at(std::size_t i, std::size_t j) const {
    require(rank() == 2, "at(i,j): tensor is not rank-2");
    return values().at(i * shape_[1] + j);
}

double Tensor::scalar_value() const {
    require(numel() == 1, "scalar_value(): tensor has " + std::to_string(numel()) + " elements");
    return values()[0];
}

// ---- GradientMap --------------------------------------------------------------

bool GradientMap::has(const Tensor& t) const {
    return t.tracked() && t.tape() == tape_ && t.node() >= 0 &&
           static_cast<std::size_t>(t.node()) < grads_.size() && grads_[t.node()].defined();
}

const Tensor& GradientMap::grad(const Tensor& t) const {
    if (!t.tracked() || t.tape() != tape_) {
        throw std::invalid_argument("grad(): tensor is not tracked on this tape");
    }
    if (!has(t)) {
        throw std::invalid_argument("grad(): no gradient reached node " + std::to_string(t.node()));
    }
    return grads_[t.node()];
}

// ---- Tape ---------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
    Tensor out(value.shape(), value.values());
    return record(std::move(out), {}, nullptr);
}

Tensor Tape::record(Tensor value, std::vector<int> parents, BackwardFn back) {
    if (in_backward_) {
        throw std::logic_error("record(): backward rules must operate on detached values");
    }
    for (int p : parents) {
        if (p >= static_cast<int>(nodes_.size())) {
            throw std::invalid_argument("record(): parent id out of range");
        }
    }
    Node node;
    node.parents = std::move(parents);
    node.back = std::move(back);
    node.shape = value.shape();
    nodes_.push_back(std::move(node));
    value.tape_ = this;
    value.node_ = static_cast<int>(nodes_.size()) - 1;
    return value;
}

GradientMap Tape::backward(const Tensor& loss) const {
    if (!loss.tracked() || loss.tape() != this) {
        throw std::invalid_argument("backward(): loss is not tracked on this tape");
    }
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward(): loss must be a scalar");
    }
    GradientMap gm;
    gm.tape_ = this;
    gm.grads_.resize(nodes_.size());
    gm.grads_[loss.node()] = Tensor::full(loss.shape(), 1.0);

    in_backward_ = true;
    struct Unlock {
        const Tape* t;
        ~Unlock() { t->in_backward_ = false; }
    } unlock{this};

    for (int id = loss.node(); id >= 0; --id) {
        if (!gm.grads_[id].defined()) continue;
        const Node& node = nodes_[id];
        if (!node.back) continue;  // leaf
        std::vector<Tensor> parent_grads = node.back(gm.grads_[id]);
        if (parent_grads.size() != node.parents.size()) {
            throw std::logic_error("backward rule returned wrong number of gradients");
        }
        for (std::size_t k = 0; k < node.parents.size(); ++k) {
            int p = node.parents[k];
            if (p < 0 || !parent_grads[k].defined()) continue;
            if (parent_grads[k].shape() != nodes_[p].shape) {
                throw std::logic_error("backward rule produced gradient of wrong shape");
            }
            if (!gm.grads_[p].defined()) {
                gm.grads_[p] = std::move(parent_grads[k]);
            } else {
                const std::vector<double>& acc = gm.grads_[p].values();
                const std::vector<double>& inc = parent_grads[k].values();
                std::vector<double> sum(acc.size());
                for (std::size_t i = 0; i < acc.size(); ++i) sum[i] = acc[i] + inc[i];
                gm.grads_[p] = Tensor(gm.grads_[p].shape(), std::move(sum));
            }
        }
    }
    return gm;
}

// ---- primitives ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
    require(a.cols() == b.rows(), "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            if (aik == 0.0) continue;
            const double* brow = bv.data() + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
        }
    }
    Tape* tape = common_tape(a, b);
    const bool need_a = a.tracked(), need_b = b.tracked();
    // Detached copies: backward rules must never record onto the tape.
    Tensor av_d(a.shape(), a.values());
    Tensor bv_d(b.shape(), b.values());
    return emit("matmul", tape, {m, n}, std::move(out), {a.node(), b.node()},
                [av_d, bv_d, need_a, need_b](const Tensor& g) {
                    std::vector<Tensor> grads(2);
                    if (need_a) grads[0] = matmul(g, transpose(bv_d));
                    if (need_b) grads[1] = matmul(transpose(av_d), g);
                    return grads;
                });
}

Tensor transpose(const Tensor& a) {
    require(a.rank() == 2, "transpose: operand must be rank-2");
    const std::size_t m = a.rows(), n = a.cols();
    const std::vector<double>& av = a.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return emit("transpose", a.tape(), {n, m}, std::move(out), {a.node()},
                [](const Tensor& g) { return std::vector<Tensor>{transpose(g)}; });
}

namespace {

template <typename Fwd, typename BackA, typename BackB>
Tensor binary_pointwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BackA back_a,
                        BackB back_b) {
    require(a.shape() == b.shape(), std::string(op) + ": shapes differ, " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return emit(op, common_tape(a, b), a.shape(), std::move(out), {a.node(), b.node()},
                [a, b, back_a, back_b](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    const std::vector<double>& av2 = a.values();
                    const std::vector<double>& bv2 = b.values();
                    std::vector<double> ga(gv.size()), gb(gv.size());
                    for (std::size_t i = 0; i < gv.size(); ++i) {
                        ga[i] = back_a(gv[i], av2[i], bv2[i]);
                        gb[i] = back_b(gv[i], av2[i], bv2[i]);
                    }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga)),
                                               Tensor(b.shape(), std::move(gb))};
                });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_pointwise(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double g, double, double y) { return g / y; },
        [](double g, double x, double y) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& a, double c) {
    const std::vector<double>& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return emit("scale", a.tape(), a.shape(), std::move(out), {a.node()},
                [c](const Tensor& g) { return std::vector<Tensor>{scale(g, c)}; });
}

Tensor relu(const Tensor& a) {
    const std::vector<double>& av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    return emit("relu", a.tape(), a.shape(), std::move(out), {a.node()},
                [a](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    const std::vector<double>& av2 = a.values();
                    std::vector<double> ga(gv.size());
                    // gradient at exactly 0 input is 0
                    for (std::size_t i = 0; i < gv.size(); ++i)
                        ga[i] = av2[i] > 0.0 ? gv[i] : 0.0;
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga))};
                });
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 1, "add_rowvec: expects matrix and vector");
    require(a.cols() == b.shape()[0], "add_rowvec: row width mismatch");
    const std::size_t m = a.rows(), n = a.cols();
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
    return emit("add_rowvec", common_tape(a, b), {m, n}, std::move(out), {a.node(), b.node()},
                [m, n](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    std::vector<double> gb(n, 0.0);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) gb[j] += gv[i * n + j];
                    return std::vector<Tensor>{g, Tensor({n}, std::move(gb))};
                });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "concat_cols: operands must be rank-2");
    require(a.rows() == b.rows(), "concat_cols: row counts differ");
    const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(m * (p + q));
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(av.begin() + i * p, av.begin() + (i + 1) * p, out.begin() + i * (p + q));
        std::copy(bv.begin() + i * q, bv.begin() + (i + 1) * q, out.begin() + i * (p + q) + p);
    }
    return emit("concat_cols", common_tape(a, b), {m, p + q}, std::move(out), {a.node(), b.node()},
                [m, p, q](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    std::vector<double> ga(m * p), gb(m * q);
                    for (std::size_t i = 0; i < m; ++i) {
                        std::copy(gv.begin() + i * (p + q), gv.begin() + i * (p + q) + p,
                                  ga.begin() + i * p);
                        std::copy(gv.begin() + i * (p + q) + p, gv.begin() + (i + 1) * (p + q),
                                  gb.begin() + i * q);
                    }
                    return std::vector<Tensor>{Tensor({m, p}, std::move(ga)),
                                               Tensor({m, q}, std::move(gb))};
                });
}

Tensor embed_rows(const Tensor& table, const std::vector<int>& rows) {
    require(table.rank() == 2, "embed_rows: table must be rank-2");
    const std::size_t k = table.rows(), d = table.cols(), m = rows.size();
    require(m > 0, "embed_rows: empty row list");
    for (int r : rows) {
        require(r >= 0 && static_cast<std::size_t>(r) < k,
                "embed_rows: row index " + std::to_string(r) + " out of range");
    }
    const std::vector<double>& tv = table.values();
    std::vector<double> out(m * d);
    for (std::size_t i = 0; i < m; ++i) {
        std::copy(tv.begin() + rows[i] * d, tv.begin() + (rows[i] + 1) * d, out.begin() + i * d);
    }
    return emit("embed_rows", table.tape(), {m, d}, std::move(out), {table.node()},
                [k, d, rows](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    std::vector<double> gt(k * d, 0.0);
                    for (std::size_t i = 0; i < rows.size(); ++i)
                        for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += gv[i * d + j];
                    return std::vector<Tensor>{Tensor({k, d}, std::move(gt))};
                });
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    std::size_t n = product(shape);
    require(n == a.numel(), "reshape: element count mismatch");
    std::vector<std::size_t> original = a.shape();
    return emit("reshape", a.tape(), std::move(shape), a.values(), {a.node()},
                [original](const Tensor& g) {
                    return std::vector<Tensor>{reshape(g, original)};
                });
}

Tensor mean_rows(const Tensor& a) {
    require(a.rank() == 2, "mean_rows: operand must be a matrix");
    const std::size_t m = a.rows(), n = a.cols();
    const std::vector<double>& av = a.values();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
    for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
    return emit("mean_rows", a.tape(), {n}, std::move(out), {a.node()},
                [m, n](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    std::vector<double> ga(m * n);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j)
                            ga[i * n + j] = gv[j] / static_cast<double>(m);
                    return std::vector<Tensor>{Tensor({m, n}, std::move(ga))};
                });
}

Tensor l2_norm(const Tensor& a) {
    const std::vector<double>& av = a.values();
    double sq = 0.0;
    for (double v : av) sq += v * v;
    double norm = std::sqrt(sq);
    return emit("l2_norm", a.tape(), {1}, {norm}, {a.node()},
                [a, norm](const Tensor& g) {
                    const double gs = g.scalar_value();
                    const std::vector<double>& av2 = a.values();
                    std::vector<double> ga(av2.size(), 0.0);
                    // subgradient 0 at the zero vector
                    if (norm > 0.0) {
                        for (std::size_t i = 0; i < av2.size(); ++i) ga[i] = gs * av2[i] / norm;
                    }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga))};
                });
}

Tensor inner_product(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "inner_product: shapes differ");
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    double dot = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) dot += av[i] * bv[i];
    return emit("inner_product", common_tape(a, b), {1}, {dot}, {a.node(), b.node()},
                [a, b](const Tensor& g) {
                    const double gs = g.scalar_value();
                    const std::vector<double>& av2 = a.values();
                    const std::vector<double>& bv2 = b.values();
                    std::vector<double> ga(av2.size()), gb(av2.size());
                    for (std::size_t i = 0; i < av2.size(); ++i) {
                        ga[i] = gs * bv2[i];
                        gb[i] = gs * av2[i];
                    }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga)),
                                               Tensor(b.shape(), std::move(gb))};
                });
}

Tensor sum_all(const Tensor& a) {
    const std::vector<double>& av = a.values();
    double s = 0.0;
    for (double v : av) s += v;
    std::vector<std::size_t> shape = a.shape();
    return emit("sum_all", a.tape(), {1}, {s}, {a.node()},
                [shape](const Tensor& g) {
                    return std::vector<Tensor>{Tensor::full(shape, g.scalar_value())};
                });
}

Tensor rowwise_inner(const Tensor& a, const Tensor& b) {
    require(a.rank() == 2 && b.rank() == 2, "rowwise_inner: operands must be rank-2");
    require(a.shape() == b.shape(), "rowwise_inner: shapes differ");
    const std::size_t m = a.rows(), d = a.cols();
    const std::vector<double>& av = a.values();
    const std::vector<double>& bv = b.values();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i] += av[i * d + j] * bv[i * d + j];
    return emit("rowwise_inner", common_tape(a, b), {m}, std::move(out), {a.node(), b.node()},
                [a, b, m, d](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    const std::vector<double>& av2 = a.values();
                    const std::vector<double>& bv2 = b.values();
                    std::vector<double> ga(m * d), gb(m * d);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < d; ++j) {
                            ga[i * d + j] = gv[i] * bv2[i * d + j];
                            gb[i * d + j] = gv[i] * av2[i * d + j];
                        }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga)),
                                               Tensor(b.shape(), std::move(gb))};
                });
}

Tensor norm_rows(const Tensor& a) {
    require(a.rank() == 2, "norm_rows: operand must be rank-2");
    const std::size_t m = a.rows(), d = a.cols();
    const std::vector<double>& av = a.values();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) sq += av[i * d + j] * av[i * d + j];
        out[i] = std::sqrt(sq);
    }
    std::vector<double> norms = out;
    return emit("norm_rows", a.tape(), {m}, std::move(out), {a.node()},
                [a, m, d, norms](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    const std::vector<double>& av2 = a.values();
                    std::vector<double> ga(m * d, 0.0);
                    for (std::size_t i = 0; i < m; ++i) {
                        if (norms[i] == 0.0) continue;  // subgradient 0 at zero rows
                        for (std::size_t j = 0; j < d; ++j)
                            ga[i * d + j] = gv[i] * av2[i * d + j] / norms[i];
                    }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga))};
                });
}

Tensor scale_rows(const Tensor& a, const Tensor& s) {
    require(a.rank() == 2 && s.rank() == 1, "scale_rows: expects matrix and vector");
    require(a.rows() == s.shape()[0], "scale_rows: row count mismatch");
    const std::size_t m = a.rows(), d = a.cols();
    const std::vector<double>& av = a.values();
    const std::vector<double>& sv = s.values();
    std::vector<double> out(m * d);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = av[i * d + j] * sv[i];
    return emit("scale_rows", common_tape(a, s), {m, d}, std::move(out), {a.node(), s.node()},
                [a, s, m, d](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    const std::vector<double>& av2 = a.values();
                    const std::vector<double>& sv2 = s.values();
                    std::vector<double> ga(m * d);
                    std::vector<double> gs(m, 0.0);
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < d; ++j) {
                            ga[i * d + j] = gv[i * d + j] * sv2[i];
                            gs[i] += gv[i * d + j] * av2[i * d + j];
                        }
                    return std::vector<Tensor>{Tensor(a.shape(), std::move(ga)),
                                               Tensor({m}, std::move(gs))};
                });
}

Tensor log_softmax_rows(const Tensor& a) {
    require(a.rank() == 2, "log_softmax_rows: operand must be rank-2");
    const std::size_t m = a.rows(), k = a.cols();
    const std::vector<double>& av = a.values();
    std::vector<double> out(m * k);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = av[i * k];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, av[i * k + j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < k; ++j) sum += std::exp(av[i * k + j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] = av[i * k + j] - lse;
    }
    std::vector<double> soft(m * k);
    for (std::size_t i = 0; i < m * k; ++i) soft[i] = std::exp(out[i]);
    return emit("log_softmax_rows", a.tape(), {m, k}, std::move(out), {a.node()},
                [m, k, soft](const Tensor& g) {
                    const std::vector<double>& gv = g.values();
                    std::vector<double> ga(m * k);
                    for (std::size_t i = 0; i < m; ++i) {
                        double gsum = 0.0;
                        for (std::size_t j = 0; j < k; ++j) gsum += gv[i * k + j];
                        for (std::size_t j = 0; j < k; ++j)
                            ga[i * k + j] = gv[i * k + j] - soft[i * k + j] * gsum;
                    }
                    return std::vector<Tensor>{Tensor({m, k}, std::move(ga))};
                });
}

namespace {

// finite_difference_check support: the numeric oracle must treat detached
// values as the constants backward() sees, so the base pass records every
// stop_gradient output and perturbed passes replay them in call order.
struct DetachLog {
    std::vector<Tensor> captured;
    std::size_t cursor = 0;
    bool recording = false;
    bool replaying = false;
};
thread_local DetachLog* g_detach_log = nullptr;

}  // namespace

Tensor stop_gradient(const Tensor& a) {
    if (g_detach_log != nullptr) {
        DetachLog& log = *g_detach_log;
        if (log.replaying) {
            if (log.cursor >= log.captured.size()) {
                throw std::logic_error(
                    "finite_difference_check: stop_gradient call pattern changed between "
                    "evaluations; f must be deterministic");
            }
            return log.captured[log.cursor++];
        }
        if (log.recording) {
            Tensor frozen(a.shape(), a.values());
            log.captured.push_back(frozen);
            return frozen;
        }
    }
    return Tensor(a.shape(), a.values());
}

// ---- finite differences ----------------------------------------------------------

double finite_difference_check(const ScalarFn& f, const std::vector<Tensor>& params,
                               double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be > 0");

    DetachLog log;
    g_detach_log = &log;
    struct Restore {
        ~Restore() { g_detach_log = nullptr; }
    } restore;

    log.recording = true;
    Tape tape;
    std::vector<Tensor> tracked;
    tracked.reserve(params.size());
    for (const Tensor& p : params) tracked.push_back(tape.leaf(p));
    Tensor loss = f(tape, tracked);
    GradientMap gm = tape.backward(loss);
    log.recording = false;
    log.replaying = true;

    auto eval_at = [&](std::size_t pi, std::size_t coord, double delta) {
        std::vector<Tensor> shifted = params;
        std::vector<double> vals = params[pi].values();
        vals[coord] += delta;
        shifted[pi] = Tensor(params[pi].shape(), std::move(vals));
        log.cursor = 0;
        Tape t;
        std::vector<Tensor> tr;
        tr.reserve(shifted.size());
        for (const Tensor& p : shifted) tr.push_back(t.leaf(p));
        return f(t, tr).scalar_value();
    };

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const bool reached = gm.has(tracked[pi]);
        for (std::size_t c = 0; c < params[pi].numel(); ++c) {
            const double analytic = reached ? gm.grad(tracked[pi]).at(c) : 0.0;
            const double numeric = (eval_at(pi, c, step) - eval_at(pi, c, -step)) / (2.0 * step);
            const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            worst = std::max(worst, std::fabs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace manydg
