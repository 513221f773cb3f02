#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "manydg/rng.hpp"
#include "manydg/tensor.hpp"

namespace manydg {

// Fully connected layer, weight [out x in], optional bias [out].
struct LinearLayer {
    Tensor weight;
    Tensor bias;  // undefined when the layer is bias-free

    bool has_bias() const { return bias.defined(); }
    std::size_t in_dim() const { return weight.cols(); }
    std::size_t out_dim() const { return weight.rows(); }
};

// Three linear layers with ReLU between 1-2 and 2-3.
struct Mlp3 {
    LinearLayer l1, l2, l3;
};

// Class prototypes [K x d] scored against inputs by temperature-scaled
// inner products; no bias term.
struct PrototypeHead {
    Tensor prototypes;
    double temperature = 0.5;

    std::size_t num_classes() const { return prototypes.rows(); }
    std::size_t dim() const { return prototypes.cols(); }
};

// MLP feature extractor: flattened input -> hidden d (ReLU between layers).
struct Backbone {
    std::vector<LinearLayer> layers;

    std::size_t in_dim() const { return layers.front().in_dim(); }
    std::size_t out_dim() const { return layers.back().out_dim(); }
};

// Uniform fan-in initialization in [-1/sqrt(in), +1/sqrt(in)], deterministic
// per generator state.
LinearLayer make_linear(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
Mlp3 make_mlp3(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
PrototypeHead make_prototype_head(std::size_t num_classes, std::size_t dim, double temperature,
                                  Rng& rng);
Backbone make_backbone(std::size_t input_dim, std::size_t hidden_dim, std::size_t depth, Rng& rng);

Tensor linear_forward(const LinearLayer& layer, const Tensor& x);
Tensor mlp3_forward(const Mlp3& net, const Tensor& x);
Tensor backbone_forward(const Backbone& net, const Tensor& x);

// logits [batch x K] = <w_k, v>/tau rows; probs exponentiate the log-softmax.
Tensor prototype_logits(const PrototypeHead& head, const Tensor& v);
Tensor prototype_log_probs(const PrototypeHead& head, const Tensor& v);
Tensor prototype_probs(const PrototypeHead& head, const Tensor& v);

// ---- parameter plumbing -----------------------------------------------------

using NamedParam = std::pair<std::string, Tensor*>;

void collect_params(LinearLayer& layer, const std::string& prefix, std::vector<NamedParam>& out);
void collect_params(Mlp3& net, const std::string& prefix, std::vector<NamedParam>& out);
void collect_params(PrototypeHead& head, const std::string& prefix, std::vector<NamedParam>& out);
void collect_params(Backbone& net, const std::string& prefix, std::vector<NamedParam>& out);

LinearLayer track(const LinearLayer& layer, Tape& tape);
Mlp3 track(const Mlp3& net, Tape& tape);
PrototypeHead track(const PrototypeHead& head, Tape& tape);
Backbone track(const Backbone& net, Tape& tape);

// Adaptive moment estimation; L2 weight decay is folded into the gradient.
class Adam {
public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8)
        : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // params and grads must be aligned and keep stable order across calls.
    void step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads);

    void reset();

private:
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---- checkpoints --------------------------------------------------------------
// Text format, one named array per record:
//   manydg-params 1
//   <count>
//   <name> <rank> <dims...>
//   <hexfloat values, space separated>
// Hexfloat keeps round-trips bit-exact.

void save_params(const std::string& path, const std::vector<NamedParam>& params);
void load_params(const std::string& path, const std::vector<NamedParam>& params);

}  // namespace manydg
