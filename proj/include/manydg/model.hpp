#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manydg/label.hpp"
#include "manydg/nn.hpp"
#include "manydg/tensor.hpp"

namespace manydg {

// Norm guard shared by the normalized losses and the projection.
inline constexpr double kNormEpsilon = 1e-8;

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 128;  // d; features v and domain factors z share it
    std::size_t num_classes = 0;
    std::size_t backbone_depth = 2;
    double tau = 0.5;
    double lambda1 = 1.0;  // weight of the embedding-alignment term
    double lambda2 = 1.0;  // weight of the mutual-reconstruction term
    double lambda3 = 1.0;  // weight of the domain-factor similarity term

    void validate() const;
};

// Backbone -> domain encoder -> decoder over concat(z, prototype) -> prototype
// head. The four parameter groups are trained jointly.
struct ManyDgModel {
    ModelConfig config;
    Backbone backbone;   // x -> v
    Mlp3 encoder;        // v -> z
    Mlp3 decoder;        // concat(z, w_y) -> reconstructed feature
    PrototypeHead head;  // v_perp -> class scores
};

ManyDgModel make_manydg_model(const ModelConfig& config, std::uint64_t seed);
ManyDgModel track(const ManyDgModel& model, Tape& tape);
std::vector<NamedParam> named_params(ManyDgModel& model);

// ERM baseline: the same backbone plus a non-linear prediction head
// (hidden layer, ReLU, linear to K), trained with cross-entropy only.
struct BaseModel {
    ModelConfig config;
    Backbone backbone;
    LinearLayer fc1;
    LinearLayer fc2;
};

BaseModel make_base_model(const ModelConfig& config, std::uint64_t seed);
BaseModel track(const BaseModel& model, Tape& tape);
std::vector<NamedParam> named_params(BaseModel& model);

// ---- the method --------------------------------------------------------------

// v split into the component parallel to z and the orthogonal remainder.
// Inputs may be single vectors [d] or batches [m x d].
struct ProjectionResult {
    Tensor v_par;
    Tensor v_perp;
};

// v_par = z <v,z>/||z||^2 row-wise; rows with ||z|| < kNormEpsilon fall back
// to v_par = 0, v_perp = v.
ProjectionResult orthogonal_project(const Tensor& v, const Tensor& z);

// Reconstructs features from domain factors and class labels via the decoder
// over concat(z, w_y). Gradients reach the decoder, z's ancestors, and the
// looked-up prototype rows.
Tensor decode_reconstruct(const ManyDgModel& model, const Tensor& z,
                          const std::vector<int>& labels);

// Negative cosine losses; every normalization is guarded so near-zero-norm
// rows contribute zero rather than NaN. Batch inputs average over rows.
Tensor loss_rec(const Tensor& v, const Tensor& v_hat, const Tensor& v_prime,
                const Tensor& v_hat_prime);
Tensor loss_sim(const Tensor& z, const Tensor& z_prime);

// ||mean(z) - mean(v)||^2 / ||sg(mean(v))||^2; the denominator is detached.
// A degenerate batch with ||mean(v)|| < kNormEpsilon returns 0 and warns.
Tensor loss_mmd(const Tensor& batch_z, const Tensor& batch_v);

// Mean negative log-likelihood over log-probability rows. Vote labels spread
// the target mass uniformly over the valid vote set.
Tensor loss_sup(const Tensor& log_probs, const std::vector<VoteLabel>& labels);

struct LossBreakdown {
    double sup = 0.0;
    double mmd = 0.0;
    double rec = 0.0;
    double sim = 0.0;
    double total = 0.0;
};

Tensor combined_loss(const Tensor& sup, const Tensor& mmd, const Tensor& rec, const Tensor& sim,
                     double lambda1, double lambda2, double lambda3);

// Index-aligned sample pair; every index shares a domain across sides.
struct PairedBatch {
    Tensor xs;        // [m x input_dim], side A
    Tensor xs_prime;  // [m x input_dim], side B
    std::vector<VoteLabel> ys, ys_prime;
    std::vector<int> domains, domains_prime;

    std::size_t size() const { return ys.size(); }
    void validate() const;
};

// Full Siamese forward pass and objective on one paired batch. When the model
// holds tracked parameters the result is differentiable end to end.
Tensor manydg_paired_loss(const ManyDgModel& model, const PairedBatch& batch,
                          LossBreakdown* parts = nullptr);

// One Siamese update of all four parameter groups. Returns the loss values
// measured before the update.
LossBreakdown manydg_train_step(ManyDgModel& model, const PairedBatch& batch, Adam& optimizer);

// One cross-entropy ERM update.
double base_train_step(BaseModel& model, const Tensor& xs, const std::vector<VoteLabel>& ys,
                       Adam& optimizer);

// Inference: backbone, domain encoding, projection, prototype probabilities.
Tensor predict(const ManyDgModel& model, const Tensor& xs);
Tensor predict(const BaseModel& model, const Tensor& xs);

// The intermediate vectors predict() flows through, for analysis dumps.
struct EmbeddingBatch {
    Tensor v, z, v_par, v_perp;
};
EmbeddingBatch embed(const ManyDgModel& model, const Tensor& xs);

}  // namespace manydg
