#include "manydg/model.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace manydg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tensor as_matrix(const Tensor& t) {
    if (t.rank() == 1) return reshape(t, {1, t.shape()[0]});
    require(t.rank() == 2, "expected a vector or a matrix");
    return t;
}

// Row mask that is 1 where every listed row norm clears the guard.
Tensor finite_norm_mask(std::initializer_list<const Tensor*> norm_vectors) {
    std::size_t m = (*norm_vectors.begin())->numel();
    std::vector<double> mask(m, 1.0);
    for (const Tensor* n : norm_vectors) {
        for (std::size_t i = 0; i < m; ++i) {
            if (n->values()[i] < kNormEpsilon) mask[i] = 0.0;
        }
    }
    return Tensor({m}, std::move(mask));
}

// Per-row cosine similarity with the norm guard applied: guarded rows
// contribute exactly zero value and zero gradient.
Tensor cosine_rows(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "cosine_rows: shapes differ");
    Tensor na = norm_rows(a);
    Tensor nb = norm_rows(b);
    Tensor mask = finite_norm_mask({&na, &nb});
    std::vector<double> bump(mask.numel());
    for (std::size_t i = 0; i < bump.size(); ++i) bump[i] = 1.0 - mask.values()[i];
    Tensor safe_denom = add(mul(na, nb), Tensor({mask.numel()}, std::move(bump)));
    return mul(div(rowwise_inner(a, b), safe_denom), mask);
}

Tensor mean_of_vector(const Tensor& rows_vector) {
    return scale(sum_all(rows_vector), 1.0 / static_cast<double>(rows_vector.numel()));
}

std::vector<int> primary_classes(const std::vector<VoteLabel>& labels) {
    std::vector<int> out;
    out.reserve(labels.size());
    for (const VoteLabel& l : labels) out.push_back(l.primary_class());
    return out;
}

}  // namespace

// ---- model construction -----------------------------------------------------

void ModelConfig::validate() const {
    require(input_dim > 0, "ModelConfig: input_dim must be positive");
    require(hidden_dim > 0, "ModelConfig: hidden_dim must be positive");
    require(num_classes >= 2, "ModelConfig: need at least 2 classes");
    require(backbone_depth >= 1, "ModelConfig: backbone_depth must be >= 1");
    require(tau > 0.0, "ModelConfig: tau must be > 0");
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
            "ModelConfig: loss weights must be >= 0");
}

ManyDgModel make_manydg_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x6d616e79ULL));
    ManyDgModel model;
    model.config = config;
    const std::size_t d = config.hidden_dim;
    model.backbone = make_backbone(config.input_dim, d, config.backbone_depth, rng);
    model.encoder = make_mlp3(d, d, d, rng);
    model.decoder = make_mlp3(2 * d, d, d, rng);
    model.head = make_prototype_head(config.num_classes, d, config.tau, rng);
    return model;
}

ManyDgModel track(const ManyDgModel& model, Tape& tape) {
    ManyDgModel t;
    t.config = model.config;
    t.backbone = track(model.backbone, tape);
    t.encoder = track(model.encoder, tape);
    t.decoder = track(model.decoder, tape);
    t.head = track(model.head, tape);
    return t;
}

std::vector<NamedParam> named_params(ManyDgModel& model) {
    std::vector<NamedParam> out;
    collect_params(model.backbone, "backbone", out);
    collect_params(model.encoder, "encoder", out);
    collect_params(model.decoder, "decoder", out);
    collect_params(model.head, "head", out);
    return out;
}

BaseModel make_base_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(mix_seed(seed, 0x62617365ULL));
    BaseModel model;
    model.config = config;
    const std::size_t d = config.hidden_dim;
    model.backbone = make_backbone(config.input_dim, d, config.backbone_depth, rng);
    model.fc1 = make_linear(d, d, true, rng);
    model.fc2 = make_linear(d, config.num_classes, true, rng);
    return model;
}

BaseModel track(const BaseModel& model, Tape& tape) {
    BaseModel t;
    t.config = model.config;
    t.backbone = track(model.backbone, tape);
    t.fc1 = track(model.fc1, tape);
    t.fc2 = track(model.fc2, tape);
    return t;
}

std::vector<NamedParam> named_params(BaseModel& model) {
    std::vector<NamedParam> out;
    collect_params(model.backbone, "backbone", out);
    collect_params(model.fc1, "head.l1", out);
    collect_params(model.fc2, "head.l2", out);
    return out;
}

// ---- projection ---------------------------------------------------------------

ProjectionResult orthogonal_project(const Tensor& v, const Tensor& z) {
    require(v.shape() == z.shape(), "orthogonal_project: v and z shapes differ");
    const bool was_vector = v.rank() == 1;
    Tensor vm = as_matrix(v);
    Tensor zm = as_matrix(z);

    Tensor dots = rowwise_inner(vm, zm);
    Tensor zz = rowwise_inner(zm, zm);

    const std::size_t m = vm.rows();
    std::vector<double> mask(m), bump(m);
    for (std::size_t i = 0; i < m; ++i) {
        const bool degenerate = zz.values()[i] < kNormEpsilon * kNormEpsilon;
        mask[i] = degenerate ? 0.0 : 1.0;
        bump[i] = degenerate ? 1.0 : 0.0;
    }
    Tensor safe = add(zz, Tensor({m}, std::move(bump)));
    Tensor coef = mul(div(dots, safe), Tensor({m}, std::move(mask)));

    ProjectionResult out;
    out.v_par = scale_rows(zm, coef);
    out.v_perp = sub(vm, out.v_par);
    if (was_vector) {
        out.v_par = reshape(out.v_par, v.shape());
        out.v_perp = reshape(out.v_perp, v.shape());
    }
    return out;
}

// ---- reconstruction and losses ---------------------------------------------------

Tensor decode_reconstruct(const ManyDgModel& model, const Tensor& z,
                          const std::vector<int>& labels) {
    const bool was_vector = z.rank() == 1;
    Tensor zm = as_matrix(z);
    require(zm.cols() == model.config.hidden_dim, "decode_reconstruct: z dim mismatch");
    require(labels.size() == zm.rows(), "decode_reconstruct: one label per row required");
    for (int y : labels) {
        require(y >= 0 && static_cast<std::size_t>(y) < model.config.num_classes,
                "decode_reconstruct: class index " + std::to_string(y) + " out of range");
    }
    Tensor prototypes = embed_rows(model.head.prototypes, labels);
    Tensor decoded = mlp3_forward(model.decoder, concat_cols(zm, prototypes));
    return was_vector ? reshape(decoded, z.shape()) : decoded;
}

Tensor loss_rec(const Tensor& v, const Tensor& v_hat, const Tensor& v_prime,
                const Tensor& v_hat_prime) {
    Tensor a = as_matrix(v), ah = as_matrix(v_hat);
    Tensor b = as_matrix(v_prime), bh = as_matrix(v_hat_prime);
    Tensor side_a = mean_of_vector(cosine_rows(a, ah));
    Tensor side_b = mean_of_vector(cosine_rows(b, bh));
    return scale(add(side_a, side_b), -1.0);
}

Tensor loss_sim(const Tensor& z, const Tensor& z_prime) {
    return scale(mean_of_vector(cosine_rows(as_matrix(z), as_matrix(z_prime))), -1.0);
}

Tensor loss_mmd(const Tensor& batch_z, const Tensor& batch_v) {
    require(batch_z.shape() == batch_v.shape(), "loss_mmd: batch shapes differ");
    Tensor z_mu = mean_rows(as_matrix(batch_z));
    Tensor v_mu = mean_rows(as_matrix(batch_v));
    Tensor v_mu_detached = stop_gradient(v_mu);
    Tensor denom = inner_product(v_mu_detached, v_mu_detached);
    if (denom.scalar_value() < kNormEpsilon * kNormEpsilon) {
        std::cerr << "loss_mmd: degenerate batch, ||mean(v)|| below guard; returning 0\n";
        return Tensor::scalar(0.0);
    }
    Tensor diff = sub(z_mu, v_mu);
    return div(inner_product(diff, diff), denom);
}

Tensor loss_sup(const Tensor& log_probs, const std::vector<VoteLabel>& labels) {
    require(log_probs.rank() == 2, "loss_sup: log_probs must be [batch x K]");
    const std::size_t m = log_probs.rows(), k = log_probs.cols();
    require(labels.size() == m, "loss_sup: one label per row required");
    std::vector<double> mask(m * k, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<int> valid = labels[i].valid_set();
        for (int cls : valid) {
            require(cls >= 0 && static_cast<std::size_t>(cls) < k,
                    "loss_sup: class index out of range");
            mask[i * k + cls] = 1.0 / static_cast<double>(valid.size());
        }
    }
    Tensor weights({m, k}, std::move(mask));
    return scale(sum_all(mul(log_probs, weights)), -1.0 / static_cast<double>(m));
}

Tensor combined_loss(const Tensor& sup, const Tensor& mmd, const Tensor& rec, const Tensor& sim,
                     double lambda1, double lambda2, double lambda3) {
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0,
            "combined_loss: weights must be >= 0");
    return add(sup, add(scale(mmd, lambda1), add(scale(rec, lambda2), scale(sim, lambda3))));
}

// ---- training steps ---------------------------------------------------------------

void PairedBatch::validate() const {
    std::size_t m = ys.size();
    if (ys_prime.size() != m || domains.size() != m || domains_prime.size() != m ||
        xs.rows() != m || xs_prime.rows() != m) {
        throw std::invalid_argument("PairedBatch: side lengths differ");
    }
    for (std::size_t i = 0; i < m; ++i) {
        if (domains[i] != domains_prime[i]) {
            throw std::invalid_argument("PairedBatch: pair " + std::to_string(i) +
                                        " mixes domains " + std::to_string(domains[i]) + " and " +
                                        std::to_string(domains_prime[i]));
        }
    }
}

Tensor manydg_paired_loss(const ManyDgModel& model, const PairedBatch& batch,
                          LossBreakdown* parts) {
    batch.validate();

    Tensor v = backbone_forward(model.backbone, batch.xs);
    Tensor v_prime = backbone_forward(model.backbone, batch.xs_prime);
    Tensor z = mlp3_forward(model.encoder, v);
    Tensor z_prime = mlp3_forward(model.encoder, v_prime);

    // mutual reconstruction: this side's domain factor, the other side's label
    Tensor v_hat_prime = decode_reconstruct(model, z, primary_classes(batch.ys_prime));
    Tensor v_hat = decode_reconstruct(model, z_prime, primary_classes(batch.ys));

    Tensor rec = loss_rec(v, v_hat, v_prime, v_hat_prime);
    Tensor sim = loss_sim(z, z_prime);
    Tensor mmd = scale(add(loss_mmd(z, v), loss_mmd(z_prime, v_prime)), 0.5);

    Tensor log_probs = prototype_log_probs(model.head, orthogonal_project(v, z).v_perp);
    Tensor log_probs_prime =
        prototype_log_probs(model.head, orthogonal_project(v_prime, z_prime).v_perp);
    Tensor sup =
        scale(add(loss_sup(log_probs, batch.ys), loss_sup(log_probs_prime, batch.ys_prime)), 0.5);

    Tensor total = combined_loss(sup, mmd, rec, sim, model.config.lambda1, model.config.lambda2,
                                 model.config.lambda3);
    if (parts != nullptr) {
        *parts = LossBreakdown{sup.scalar_value(), mmd.scalar_value(), rec.scalar_value(),
                               sim.scalar_value(), total.scalar_value()};
    }
    return total;
}

LossBreakdown manydg_train_step(ManyDgModel& model, const PairedBatch& batch, Adam& optimizer) {
    Tape tape;
    ManyDgModel tracked = track(model, tape);
    LossBreakdown parts;
    Tensor total = manydg_paired_loss(tracked, batch, &parts);
    GradientMap gm = tape.backward(total);

    std::vector<NamedParam> params = named_params(model);
    std::vector<NamedParam> tracked_params = named_params(tracked);
    std::vector<Tensor> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (gm.has(*tracked_params[i].second)) grads[i] = gm.grad(*tracked_params[i].second);
    }
    optimizer.step(params, grads);
    return parts;
}

double base_train_step(BaseModel& model, const Tensor& xs, const std::vector<VoteLabel>& ys,
                       Adam& optimizer) {
    Tape tape;
    BaseModel tracked = track(model, tape);
    Tensor v = backbone_forward(tracked.backbone, xs);
    Tensor h = relu(linear_forward(tracked.fc1, v));
    Tensor log_probs = log_softmax_rows(linear_forward(tracked.fc2, h));
    Tensor loss = loss_sup(log_probs, ys);
    GradientMap gm = tape.backward(loss);

    std::vector<NamedParam> params = named_params(model);
    std::vector<NamedParam> tracked_params = named_params(tracked);
    std::vector<Tensor> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (gm.has(*tracked_params[i].second)) grads[i] = gm.grad(*tracked_params[i].second);
    }
    optimizer.step(params, grads);
    return loss.scalar_value();
}

// ---- inference ----------------------------------------------------------------------

EmbeddingBatch embed(const ManyDgModel& model, const Tensor& xs) {
    EmbeddingBatch out;
    out.v = backbone_forward(model.backbone, xs);
    out.z = mlp3_forward(model.encoder, out.v);
    ProjectionResult proj = orthogonal_project(out.v, out.z);
    out.v_par = proj.v_par;
    out.v_perp = proj.v_perp;
    return out;
}

Tensor predict(const ManyDgModel& model, const Tensor& xs) {
    return prototype_probs(model.head, embed(model, xs).v_perp);
}

Tensor predict(const BaseModel& model, const Tensor& xs) {
    Tensor v = backbone_forward(model.backbone, xs);
    Tensor h = relu(linear_forward(model.fc1, v));
    Tensor lp = log_softmax_rows(linear_forward(model.fc2, h));
    std::vector<double> p(lp.numel());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(lp.values()[i]);
    return Tensor(lp.shape(), std::move(p));
}

}  // namespace manydg
