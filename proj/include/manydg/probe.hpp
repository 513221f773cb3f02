#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "manydg/data.hpp"

namespace manydg {

struct EmbeddingRow {
    int id = 0;
    int domain = 0;
    int label = 0;
    Split split = Split::train;
    std::vector<double> v, z, v_par, v_perp;
};

struct EmbeddingDump {
    std::size_t dim = 0;
    std::vector<EmbeddingRow> rows;
};

// Delimiter-separated text: header id,domain,label,split then d columns per
// vector block (v, z, par, perp). Values print with full precision so
// re-exports are byte-identical.
void save_dump(const std::string& path, const EmbeddingDump& dump);
EmbeddingDump load_dump(const std::string& path);

struct ProbeConfig {
    int steps = 500;         // full-batch gradient steps
    double lr = 0.1;
    double std_eps = 1e-8;   // dimensions with std below this are zeroed
    std::size_t max_rows = 4000;  // probe inputs are subsampled past this
    std::uint64_t seed = 0;
};

// Multinomial logistic regression on std-normalized inputs, zero-initialized,
// trained by full-batch gradient descent for a fixed budget. Returns the
// class-by-dimension weight matrix (intercept excluded). Target values are
// remapped to contiguous ids by sorted order.
std::vector<std::vector<double>> fit_linear_probe(const std::vector<std::vector<double>>& inputs,
                                                  const std::vector<int>& targets,
                                                  const ProbeConfig& config);

// Mean cosine similarities between linear-probe weights, one value per row of
// the four-row layout:
//   1. weight(v -> labels)  vs weight(v_perp -> labels)
//   2. weight(v -> domains) vs weight(v_par  -> domains)
//   3. weight(v -> labels)  vs weight(v -> domains), all class pairs
//   4. weight(v -> labels)  vs weight(v_par  -> labels)
struct ProbeReport {
    double labels_v_vs_vperp = 0.0;
    double domains_v_vs_vpar = 0.0;
    double labels_vs_domains = 0.0;
    double labels_v_vs_vpar = 0.0;
};

// Trains the probes on the dump's train rows.
ProbeReport weight_cosine_report(const EmbeddingDump& dump, const ProbeConfig& config);

// Mean pairwise cosine of z within domains vs across domains; pair counts
// beyond the cap are subsampled deterministically.
std::pair<double, double> z_similarity(const EmbeddingDump& dump, std::size_t pair_cap = 200000,
                                       std::uint64_t seed = 0);

struct NormRow {
    double perp_norm = 0.0;
    double par_norm = 0.0;
    Split split = Split::train;
};

// One row per dumped sample, for external plotting.
std::vector<NormRow> norm_scatter(const EmbeddingDump& dump);

}  // namespace manydg
