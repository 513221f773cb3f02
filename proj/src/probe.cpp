#include "manydg/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "manydg/rng.hpp"

namespace manydg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return dot / (na * nb);
}

Split parse_split(const std::string& name) {
    for (Split s : {Split::train, Split::val, Split::test}) {
        if (name == split_name(s)) return s;
    }
    throw std::runtime_error("embedding dump: unknown split '" + name + "'");
}

}  // namespace

// ---- dump io ---------------------------------------------------------------------

void save_dump(const std::string& path, const EmbeddingDump& dump) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dump: cannot open " + path);
    out << "id,domain,label,split";
    const char* blocks[4] = {"v", "z", "par", "perp"};
    for (const char* b : blocks) {
        for (std::size_t j = 0; j < dump.dim; ++j) out << "," << b << j;
    }
    out << "\n";
    char buf[32];
    for (const EmbeddingRow& row : dump.rows) {
        out << row.id << "," << row.domain << "," << row.label << "," << split_name(row.split);
        for (const std::vector<double>* vec : {&row.v, &row.z, &row.v_par, &row.v_perp}) {
            if (vec->size() != dump.dim) {
                throw std::invalid_argument("save_dump: row vector dim mismatch");
            }
            for (double x : *vec) {
                std::snprintf(buf, sizeof(buf), "%.17g", x);
                out << "," << buf;
            }
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("save_dump: write failed for " + path);
}

EmbeddingDump load_dump(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dump: cannot open " + path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("load_dump: empty file " + path);

    std::size_t columns = 1;
    for (char c : header) columns += c == ',';
    if (columns < 8 || (columns - 4) % 4 != 0) {
        throw std::runtime_error("load_dump: malformed header in " + path);
    }
    EmbeddingDump dump;
    dump.dim = (columns - 4) / 4;

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string tok;
        EmbeddingRow row;
        std::getline(ss, tok, ',');
        row.id = std::stoi(tok);
        std::getline(ss, tok, ',');
        row.domain = std::stoi(tok);
        std::getline(ss, tok, ',');
        row.label = std::stoi(tok);
        std::getline(ss, tok, ',');
        row.split = parse_split(tok);
        for (std::vector<double>* vec : {&row.v, &row.z, &row.v_par, &row.v_perp}) {
            vec->resize(dump.dim);
            for (std::size_t j = 0; j < dump.dim; ++j) {
                if (!std::getline(ss, tok, ',')) {
                    throw std::runtime_error("load_dump: truncated row in " + path);
                }
                (*vec)[j] = std::strtod(tok.c_str(), nullptr);
            }
        }
        dump.rows.push_back(std::move(row));
    }
    return dump;
}

// ---- linear probe -----------------------------------------------------------------

std::vector<std::vector<double>> fit_linear_probe(const std::vector<std::vector<double>>& inputs,
                                                  const std::vector<int>& targets,
                                                  const ProbeConfig& config) {
    require(!inputs.empty(), "fit_linear_probe: no inputs");
    require(inputs.size() == targets.size(), "fit_linear_probe: inputs/targets size mismatch");
    const std::size_t n = inputs.size();
    const std::size_t d = inputs[0].size();

    std::vector<int> classes(targets);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    require(classes.size() >= 2, "fit_linear_probe: need at least 2 target classes");
    const std::size_t c = classes.size();
    std::map<int, std::size_t> class_index;
    for (std::size_t i = 0; i < c; ++i) class_index[classes[i]] = i;

    // dimension-wise std normalization; dead dimensions are zeroed
    std::vector<double> mean(d, 0.0), sq(d, 0.0);
    for (const auto& row : inputs) {
        require(row.size() == d, "fit_linear_probe: ragged input rows");
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += row[j];
            sq[j] += row[j] * row[j];
        }
    }
    std::vector<double> scale(d);
    for (std::size_t j = 0; j < d; ++j) {
        mean[j] /= static_cast<double>(n);
        const double var = std::max(0.0, sq[j] / static_cast<double>(n) - mean[j] * mean[j]);
        const double sd = std::sqrt(var);
        scale[j] = sd < config.std_eps ? 0.0 : 1.0 / sd;
    }

    // standardized design matrix with an intercept column
    std::vector<double> x(n * (d + 1));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) x[i * (d + 1) + j] = inputs[i][j] * scale[j];
        x[i * (d + 1) + d] = 1.0;
    }

    std::vector<double> w(c * (d + 1), 0.0);
    std::vector<double> logits(c), probs(c), grad(c * (d + 1));
    for (int step = 0; step < config.steps; ++step) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const double* xi = x.data() + i * (d + 1);
            double mx = -1e300;
            for (std::size_t k = 0; k < c; ++k) {
                double s = 0.0;
                const double* wk = w.data() + k * (d + 1);
                for (std::size_t j = 0; j <= d; ++j) s += wk[j] * xi[j];
                logits[k] = s;
                mx = std::max(mx, s);
            }
            double sum = 0.0;
            for (std::size_t k = 0; k < c; ++k) {
                probs[k] = std::exp(logits[k] - mx);
                sum += probs[k];
            }
            const std::size_t yi = class_index.at(targets[i]);
            for (std::size_t k = 0; k < c; ++k) {
                const double residual = probs[k] / sum - (k == yi ? 1.0 : 0.0);
                double* gk = grad.data() + k * (d + 1);
                for (std::size_t j = 0; j <= d; ++j) gk[j] += residual * xi[j];
            }
        }
        const double step_size = config.lr / static_cast<double>(n);
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= step_size * grad[j];
    }

    std::vector<std::vector<double>> weights(c, std::vector<double>(d));
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t j = 0; j < d; ++j) weights[k][j] = w[k * (d + 1) + j];
    }
    return weights;
}

// ---- reports ----------------------------------------------------------------------

namespace {

double matched_class_cosine(const std::vector<std::vector<double>>& a,
                            const std::vector<std::vector<double>>& b) {
    require(a.size() == b.size(), "probe report: weight matrices have different class counts");
    double sum = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) sum += cosine(a[k], b[k]);
    return sum / static_cast<double>(a.size());
}

double all_pairs_cosine(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
    double sum = 0.0;
    for (const auto& wa : a)
        for (const auto& wb : b) sum += cosine(wa, wb);
    return sum / static_cast<double>(a.size() * b.size());
}

}  // namespace

ProbeReport weight_cosine_report(const EmbeddingDump& dump, const ProbeConfig& config) {
    std::vector<const EmbeddingRow*> rows;
    for (const EmbeddingRow& r : dump.rows) {
        if (r.split == Split::train) rows.push_back(&r);
    }
    require(!rows.empty(), "weight_cosine_report: dump has no train rows");

    if (config.max_rows > 0 && rows.size() > config.max_rows) {
        Rng rng(mix_seed(config.seed, 12));
        rng.shuffle(rows);
        rows.resize(config.max_rows);
    }

    std::set<int> labels, domains;
    for (const EmbeddingRow* r : rows) {
        labels.insert(r->label);
        domains.insert(r->domain);
    }
    require(labels.size() >= 2, "weight_cosine_report: need at least 2 label classes");
    require(domains.size() >= 2, "weight_cosine_report: need at least 2 domains");

    auto collect = [&](const std::vector<double> EmbeddingRow::*field) {
        std::vector<std::vector<double>> out;
        out.reserve(rows.size());
        for (const EmbeddingRow* r : rows) out.push_back(r->*field);
        return out;
    };
    std::vector<std::vector<double>> v = collect(&EmbeddingRow::v);
    std::vector<std::vector<double>> v_par = collect(&EmbeddingRow::v_par);
    std::vector<std::vector<double>> v_perp = collect(&EmbeddingRow::v_perp);
    std::vector<int> label_targets, domain_targets;
    for (const EmbeddingRow* r : rows) {
        label_targets.push_back(r->label);
        domain_targets.push_back(r->domain);
    }

    std::vector<std::vector<double>> w_lab_v = fit_linear_probe(v, label_targets, config);
    std::vector<std::vector<double>> w_lab_vperp = fit_linear_probe(v_perp, label_targets, config);
    std::vector<std::vector<double>> w_lab_vpar = fit_linear_probe(v_par, label_targets, config);
    std::vector<std::vector<double>> w_dom_v = fit_linear_probe(v, domain_targets, config);
    std::vector<std::vector<double>> w_dom_vpar = fit_linear_probe(v_par, domain_targets, config);

    ProbeReport report;
    report.labels_v_vs_vperp = matched_class_cosine(w_lab_v, w_lab_vperp);
    report.domains_v_vs_vpar = matched_class_cosine(w_dom_v, w_dom_vpar);
    report.labels_vs_domains = all_pairs_cosine(w_lab_v, w_dom_v);
    report.labels_v_vs_vpar = matched_class_cosine(w_lab_v, w_lab_vpar);
    return report;
}

std::pair<double, double> z_similarity(const EmbeddingDump& dump, std::size_t pair_cap,
                                       std::uint64_t seed) {
    std::map<int, std::vector<const EmbeddingRow*>> groups;
    for (const EmbeddingRow& r : dump.rows) groups[r.domain].push_back(&r);
    require(groups.size() >= 2, "z_similarity: need at least 2 domains");

    Rng rng(mix_seed(seed, 13));

    // within-domain pairs, subsampled per domain past a proportional budget
    double within_sum = 0.0;
    std::size_t within_count = 0;
    const std::size_t per_domain_budget = std::max<std::size_t>(1, pair_cap / groups.size());
    bool any_multi = false;
    for (auto& [domain, members] : groups) {
        const std::size_t m = members.size();
        if (m < 2) continue;
        any_multi = true;
        const std::size_t all_pairs = m * (m - 1) / 2;
        if (all_pairs <= per_domain_budget) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = i + 1; j < m; ++j) {
                    within_sum += cosine(members[i]->z, members[j]->z);
                    ++within_count;
                }
        } else {
            for (std::size_t t = 0; t < per_domain_budget; ++t) {
                std::size_t i = rng.uniform_index(m);
                std::size_t j = rng.uniform_index(m - 1);
                if (j >= i) ++j;
                within_sum += cosine(members[i]->z, members[j]->z);
                ++within_count;
            }
        }
    }
    require(any_multi, "z_similarity: no domain has 2 or more samples");

    // cross-domain pairs, subsampled globally
    double cross_sum = 0.0;
    std::size_t cross_count = 0;
    std::size_t total_cross = 0;
    std::vector<const std::vector<const EmbeddingRow*>*> group_list;
    for (auto& [domain, members] : groups) group_list.push_back(&members);
    for (std::size_t a = 0; a < group_list.size(); ++a)
        for (std::size_t b = a + 1; b < group_list.size(); ++b)
            total_cross += group_list[a]->size() * group_list[b]->size();
    if (total_cross <= pair_cap) {
        for (std::size_t a = 0; a < group_list.size(); ++a)
            for (std::size_t b = a + 1; b < group_list.size(); ++b)
                for (const EmbeddingRow* ra : *group_list[a])
                    for (const EmbeddingRow* rb : *group_list[b]) {
                        cross_sum += cosine(ra->z, rb->z);
                        ++cross_count;
                    }
    } else {
        while (cross_count < pair_cap) {
            std::size_t a = rng.uniform_index(group_list.size());
            std::size_t b = rng.uniform_index(group_list.size());
            if (a == b) continue;
            const EmbeddingRow* ra = (*group_list[a])[rng.uniform_index(group_list[a]->size())];
            const EmbeddingRow* rb = (*group_list[b])[rng.uniform_index(group_list[b]->size())];
            cross_sum += cosine(ra->z, rb->z);
            ++cross_count;
        }
    }

    return {within_sum / static_cast<double>(within_count),
            cross_sum / static_cast<double>(cross_count)};
}

std::vector<NormRow> norm_scatter(const EmbeddingDump& dump) {
    std::vector<NormRow> out;
    out.reserve(dump.rows.size());
    for (const EmbeddingRow& r : dump.rows) {
        NormRow row;
        row.split = r.split;
        for (double x : r.v_perp) row.perp_norm += x * x;
        for (double x : r.v_par) row.par_norm += x * x;
        row.perp_norm = std::sqrt(row.perp_norm);
        row.par_norm = std::sqrt(row.par_norm);
        out.push_back(row);
    }
    return out;
}

}  // namespace manydg
