#include "manydg/nn.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace manydg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, Rng& rng) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor(std::move(shape), std::move(v));
}

}  // namespace

LinearLayer make_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    require(in > 0 && out > 0, "make_linear: dimensions must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    LinearLayer layer;
    layer.weight = uniform_tensor({out, in}, bound, rng);
    if (with_bias) layer.bias = uniform_tensor({out}, bound, rng);
    return layer;
}

Mlp3 make_mlp3(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    Mlp3 net;
    net.l1 = make_linear(in, hidden, true, rng);
    net.l2 = make_linear(hidden, hidden, true, rng);
    net.l3 = make_linear(hidden, out, true, rng);
    return net;
}

PrototypeHead make_prototype_head(std::size_t num_classes, std::size_t dim, double temperature,
                                  Rng& rng) {
    require(num_classes >= 2, "make_prototype_head: need at least 2 classes");
    require(temperature > 0.0, "make_prototype_head: temperature must be > 0");
    PrototypeHead head;
    head.prototypes = uniform_tensor({num_classes, dim}, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
    head.temperature = temperature;
    return head;
}

Backbone make_backbone(std::size_t input_dim, std::size_t hidden_dim, std::size_t depth, Rng& rng) {
    require(depth >= 1, "make_backbone: depth must be >= 1");
    Backbone net;
    std::size_t in = input_dim;
    for (std::size_t i = 0; i < depth; ++i) {
        net.layers.push_back(make_linear(in, hidden_dim, true, rng));
        in = hidden_dim;
    }
    return net;
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) {
    require(x.rank() == 2, "linear_forward: input must be [batch x in]");
    require(x.cols() == layer.in_dim(), "linear_forward: input dim " + std::to_string(x.cols()) +
                                            " does not match layer in dim " +
                                            std::to_string(layer.in_dim()));
    Tensor y = matmul(x, transpose(layer.weight));
    if (layer.has_bias()) y = add_rowvec(y, layer.bias);
    return y;
}

Tensor mlp3_forward(const Mlp3& net, const Tensor& x) {
    Tensor h = relu(linear_forward(net.l1, x));
    h = relu(linear_forward(net.l2, h));
    return linear_forward(net.l3, h);
}

Tensor backbone_forward(const Backbone& net, const Tensor& x) {
    // EXPERIMENT: per-sample input centering
    Tensor ones_col({x.cols(), 1}, std::vector<double>(x.cols(), 1.0));
    Tensor row_means = scale(matmul(x, ones_col), 1.0 / static_cast<double>(x.cols()));
    std::vector<double> neg(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) neg[i] = 1.0;
    Tensor h = sub(x, scale_rows(matmul(row_means, transpose(ones_col)), Tensor({x.rows()}, neg)));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        h = linear_forward(net.layers[i], h);
        if (i + 1 < net.layers.size()) h = relu(h);
    }
    return h;
}

Tensor prototype_logits(const PrototypeHead& head, const Tensor& v) {
    require(head.temperature > 0.0, "prototype_logits: temperature must be > 0");
    require(v.rank() == 2 && v.cols() == head.dim(), "prototype_logits: input dim mismatch");
    return scale(matmul(v, transpose(head.prototypes)), 1.0 / head.temperature);
}

Tensor prototype_log_probs(const PrototypeHead& head, const Tensor& v) {
    return log_softmax_rows(prototype_logits(head, v));
}

Tensor prototype_probs(const PrototypeHead& head, const Tensor& v) {
    Tensor lp = prototype_log_probs(head, v);
    std::vector<double> p(lp.numel());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp.values()[i]);
    return Tensor(lp.shape(), std::move(p));
}

// ---- parameter plumbing ---------------------------------------------------------

void collect_params(LinearLayer& layer, const std::string& prefix, std::vector<NamedParam>& out) {
    out.emplace_back(prefix + ".weight", &layer.weight);
    if (layer.has_bias()) out.emplace_back(prefix + ".bias", &layer.bias);
}

void collect_params(Mlp3& net, const std::string& prefix, std::vector<NamedParam>& out) {
    collect_params(net.l1, prefix + ".l1", out);
    collect_params(net.l2, prefix + ".l2", out);
    collect_params(net.l3, prefix + ".l3", out);
}

void collect_params(PrototypeHead& head, const std::string& prefix, std::vector<NamedParam>& out) {
    out.emplace_back(prefix + ".prototypes", &head.prototypes);
}

void collect_params(Backbone& net, const std::string& prefix, std::vector<NamedParam>& out) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        collect_params(net.layers[i], prefix + ".l" + std::to_string(i), out);
    }
}

LinearLayer track(const LinearLayer& layer, Tape& tape) {
    LinearLayer t;
    t.weight = tape.leaf(layer.weight);
    if (layer.has_bias()) t.bias = tape.leaf(layer.bias);
    return t;
}

Mlp3 track(const Mlp3& net, Tape& tape) {
    return Mlp3{track(net.l1, tape), track(net.l2, tape), track(net.l3, tape)};
}

PrototypeHead track(const PrototypeHead& head, Tape& tape) {
    return PrototypeHead{tape.leaf(head.prototypes), head.temperature};
}

Backbone track(const Backbone& net, Tape& tape) {
    Backbone t;
    for (const auto& l : net.layers) t.layers.push_back(track(l, tape));
    return t;
}

// ---- optimizer -------------------------------------------------------------------

void Adam::step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) {
        throw std::invalid_argument("Adam::step: params/grads size mismatch");
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].second->numel(), 0.0);
            v_[i].assign(params[i].second->numel(), 0.0);
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i].second;
        if (!grads[i].defined()) continue;  // parameter unreached this step
        if (grads[i].shape() != p.shape()) {
            throw std::invalid_argument("Adam::step: gradient shape mismatch for " +
                                        params[i].first);
        }
        const std::vector<double>& g = grads[i].values();
        std::vector<double> next = p.values();
        for (std::size_t j = 0; j < next.size(); ++j) {
            const double gj = g[j] + weight_decay_ * next[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            next[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
        p = Tensor(p.shape(), std::move(next));
    }
}

void Adam::reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
}

// ---- checkpoints -------------------------------------------------------------------

void save_params(const std::string& path, const std::vector<NamedParam>& params) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    out << "manydg-params 1\n" << params.size() << "\n";
    char buf[40];
    for (const auto& [name, tensor] : params) {
        out << name << " " << tensor->rank();
        for (auto d : tensor->shape()) out << " " << d;
        out << "\n";
        const std::vector<double>& v = tensor->values();
        for (std::size_t i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%a", v[i]);
            if (i) out << ' ';
            out << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

void load_params(const std::string& path, const std::vector<NamedParam>& params) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    std::string magic;
    int version = 0;
    in >> magic >> version;
    if (magic != "manydg-params" || version != 1) {
        throw std::runtime_error("load_params: " + path + " is not a parameter file");
    }
    std::size_t count = 0;
    in >> count;
    if (count != params.size()) {
        throw std::runtime_error("load_params: file has " + std::to_string(count) +
                                 " arrays, model expects " + std::to_string(params.size()));
    }
    for (const auto& [name, tensor] : params) {
        std::string fname;
        std::size_t rank = 0;
        in >> fname >> rank;
        if (fname != name) {
            throw std::runtime_error("load_params: expected array '" + name + "', file has '" +
                                     fname + "'");
        }
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) in >> d;
        if (shape != tensor->shape()) {
            throw std::runtime_error("load_params: shape mismatch for '" + name + "'");
        }
        std::vector<double> values(tensor->numel());
        for (auto& x : values) {
            std::string tok;
            in >> tok;
            x = std::strtod(tok.c_str(), nullptr);
        }
        if (!in) throw std::runtime_error("load_params: truncated file " + path);
        *tensor = Tensor(tensor->shape(), std::move(values));
    }
}

}  // namespace manydg
