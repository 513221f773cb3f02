#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "manydg/label.hpp"
#include "manydg/tensor.hpp"

namespace manydg {

enum class Split { train, val, test };
const char* split_name(Split s);

struct Sample {
    std::vector<double> pixels;  // H*W values in [0,1], row-major
    VoteLabel label;
    int domain = 0;
};

// One split of a domain-keyed dataset.
struct DomainDataset {
    std::size_t height = 0, width = 0;
    std::size_t num_classes = 0;
    Split tag = Split::train;
    std::vector<Sample> samples;

    std::size_t input_dim() const { return height * width; }
    std::vector<int> distinct_domains() const;  // ascending
};

struct DataBundle {
    DomainDataset train, val, test;
};

// Batch assembly helpers.
Tensor gather_pixels(const DomainDataset& ds, const std::vector<std::size_t>& indices);
std::vector<VoteLabel> gather_labels(const DomainDataset& ds,
                                     const std::vector<std::size_t>& indices);
std::vector<int> gather_domains(const DomainDataset& ds, const std::vector<std::size_t>& indices);

// ---- IDX container ------------------------------------------------------------
// Big-endian headers: images magic 2051 with dims (count, H, W), labels magic
// 2049 with a matching count; pixel bytes rescale to [0,1]. The sidecar
// domain file is one integer per line, aligned with the samples.

DomainDataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const DomainDataset& ds, const std::string& images_path,
              const std::string& labels_path);
void load_domain_sidecar(DomainDataset& ds, const std::string& path);
void save_domain_sidecar(const DomainDataset& ds, const std::string& path);

// ---- synthetic digit corpus ------------------------------------------------------

// Glyph-template digits with sub-pixel placement jitter, intensity jitter,
// and light pixel noise. Labels are 0..9; all domains start at 0.
DataBundle make_synthetic_digits(std::size_t train_count, std::size_t test_count,
                                 std::size_t height, std::size_t width, std::uint64_t seed);

// ---- covariate-shift machinery -----------------------------------------------------

// Sine/cosine positional-encoding style waves, one per prospective domain.
struct NoiseBank {
    std::size_t height = 0, width = 0;
    double amplitude = 0.5;
    std::vector<std::vector<double>> waves;  // each H*W, values in [-1,1]

    std::size_t size() const { return waves.size(); }
};

NoiseBank make_noise_bank(std::size_t height, std::size_t width, std::size_t num_waves,
                          double amplitude, std::uint64_t seed);

enum class ShiftScenario {
    original,
    all_shift,
    stepped,
    opposite_stepped,
    half_all,
    random_shift,
    train_only,
    test_only,
};

const char* scenario_name(ShiftScenario s);
ShiftScenario parse_scenario(const std::string& name);
const std::vector<ShiftScenario>& all_scenarios();

// Applies per-label shift probabilities to each split. A shifted sample gets
// clip(x + amplitude * wave, 0, 1) with a bank wave drawn uniformly, and its
// domain becomes 1 + wave index; unshifted samples keep domain 0 and stay
// bit-identical. Stepped scenarios require exactly 10 classes.
DataBundle apply_scenario(const DataBundle& clean, ShiftScenario scenario, const NoiseBank& bank,
                          std::uint64_t seed);

// Moves whole train domains into a validation split (10% of domains rounded,
// at least one, never all). A single-domain train set falls back to a
// within-domain sample split.
DataBundle split_validation(const DataBundle& bundle, double fraction, std::uint64_t seed);

// ---- the Siamese double loader -----------------------------------------------------

// Two parallel global index lists; position i on both sides shares a domain.
struct EpochPairing {
    std::vector<std::size_t> a, b;
    std::size_t batch_size = 0;

    std::size_t num_pairs() const { return a.size(); }
    std::size_t num_batches() const {
        return batch_size == 0 ? 0 : (a.size() + batch_size - 1) / batch_size;
    }
    // [first, last) into a/b for the given batch.
    std::pair<std::size_t, std::size_t> batch_range(std::size_t batch) const;
};

// Per epoch: shuffle within each domain, fold each domain list into two
// half-lists appended domain-by-domain, then shuffle pair order jointly.
// An odd domain's leftover pairs with a random already-used sample from the
// same domain; a single-sample domain pairs with itself.
EpochPairing build_double_loader(const DomainDataset& ds, std::size_t batch_size,
                                 std::uint64_t epoch_seed);

// ---- small-data and continual-learning splitters --------------------------------------

// Keeps n randomly chosen domains of the given split.
DomainDataset limit_domains(const DomainDataset& ds, std::size_t n, std::uint64_t seed);

// Schedule of training sets: index 0 is the pretrain set (first `pretrain`
// domains by ascending id); each later step adds the next `step_size` domains'
// full data plus `replay_k` random samples from every previously seen domain.
std::vector<DomainDataset> continual_splits(const DomainDataset& ds, std::size_t pretrain,
                                            std::size_t step_size, std::size_t steps,
                                            std::size_t replay_k, std::uint64_t seed);

}  // namespace manydg
