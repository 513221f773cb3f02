#include "manydg/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "manydg/rng.hpp"

namespace manydg {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

std::map<int, std::vector<std::size_t>> indices_by_domain(const DomainDataset& ds) {
    std::map<int, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        groups[ds.samples[i].domain].push_back(i);
    }
    return groups;
}

}  // namespace

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

std::vector<int> DomainDataset::distinct_domains() const {
    std::set<int> ids;
    for (const Sample& s : samples) ids.insert(s.domain);
    return std::vector<int>(ids.begin(), ids.end());
}

Tensor gather_pixels(const DomainDataset& ds, const std::vector<std::size_t>& indices) {
    const std::size_t dim = ds.input_dim();
    std::vector<double> out(indices.size() * dim);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::vector<double>& px = ds.samples.at(indices[i]).pixels;
        std::copy(px.begin(), px.end(), out.begin() + i * dim);
    }
    return Tensor({indices.size(), dim}, std::move(out));
}

std::vector<VoteLabel> gather_labels(const DomainDataset& ds,
                                     const std::vector<std::size_t>& indices) {
    std::vector<VoteLabel> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(ds.samples.at(i).label);
    return out;
}

std::vector<int> gather_domains(const DomainDataset& ds, const std::vector<std::size_t>& indices) {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(ds.samples.at(i).domain);
    return out;
}

// ---- IDX container ----------------------------------------------------------------

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("idx: truncated file " + path);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

DomainDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot open " + images_path);
    std::uint32_t magic = read_u32_be(img, images_path);
    if (magic != kImagesMagic) {
        throw std::runtime_error("idx: bad image magic " + std::to_string(magic) + " in " +
                                 images_path);
    }
    const std::uint32_t count = read_u32_be(img, images_path);
    const std::uint32_t height = read_u32_be(img, images_path);
    const std::uint32_t width = read_u32_be(img, images_path);

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);
    std::uint32_t lmagic = read_u32_be(lab, labels_path);
    if (lmagic != kLabelsMagic) {
        throw std::runtime_error("idx: bad label magic " + std::to_string(lmagic) + " in " +
                                 labels_path);
    }
    const std::uint32_t lcount = read_u32_be(lab, labels_path);
    if (lcount != count) {
        throw std::runtime_error("idx: " + std::to_string(count) + " images vs " +
                                 std::to_string(lcount) + " labels");
    }

    DomainDataset ds;
    ds.height = height;
    ds.width = width;
    ds.samples.resize(count);
    const std::size_t dim = static_cast<std::size_t>(height) * width;
    std::vector<unsigned char> row(dim);
    int max_label = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        img.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(dim));
        if (!img) throw std::runtime_error("idx: truncated image data in " + images_path);
        Sample& s = ds.samples[i];
        s.pixels.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) s.pixels[j] = row[j] / 255.0;
        unsigned char y = 0;
        lab.read(reinterpret_cast<char*>(&y), 1);
        if (!lab) throw std::runtime_error("idx: truncated label data in " + labels_path);
        s.label = VoteLabel(static_cast<int>(y));
        max_label = std::max(max_label, static_cast<int>(y));
    }
    ds.num_classes = static_cast<std::size_t>(max_label) + 1;
    return ds;
}

void save_idx(const DomainDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot open " + images_path + " for writing");
    write_u32_be(img, kImagesMagic);
    write_u32_be(img, static_cast<std::uint32_t>(ds.samples.size()));
    write_u32_be(img, static_cast<std::uint32_t>(ds.height));
    write_u32_be(img, static_cast<std::uint32_t>(ds.width));
    for (const Sample& s : ds.samples) {
        for (double p : s.pixels) {
            double clipped = std::min(1.0, std::max(0.0, p));
            unsigned char b = static_cast<unsigned char>(std::lround(clipped * 255.0));
            img.write(reinterpret_cast<char*>(&b), 1);
        }
    }
    if (!img) throw std::runtime_error("idx: write failed for " + images_path);

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + labels_path + " for writing");
    write_u32_be(lab, kLabelsMagic);
    write_u32_be(lab, static_cast<std::uint32_t>(ds.samples.size()));
    for (const Sample& s : ds.samples) {
        unsigned char y = static_cast<unsigned char>(s.label.primary_class());
        lab.write(reinterpret_cast<char*>(&y), 1);
    }
    if (!lab) throw std::runtime_error("idx: write failed for " + labels_path);
}

void load_domain_sidecar(DomainDataset& ds, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("domain sidecar: cannot open " + path);
    for (Sample& s : ds.samples) {
        if (!(in >> s.domain)) {
            throw std::runtime_error("domain sidecar: " + path + " has fewer entries than samples");
        }
    }
}

void save_domain_sidecar(const DomainDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("domain sidecar: cannot open " + path + " for writing");
    for (const Sample& s : ds.samples) out << s.domain << "\n";
    if (!out) throw std::runtime_error("domain sidecar: write failed for " + path);
}

// ---- synthetic digit corpus -----------------------------------------------------------

namespace {

// 5x7 digit glyphs, row-major bit strings.
const char* const kGlyphs[10] = {
    "01110" "10001" "10011" "10101" "11001" "10001" "01110",  // 0
    "00100" "01100" "00100" "00100" "00100" "00100" "01110",  // 1
    "01110" "10001" "00001" "00010" "00100" "01000" "11111",  // 2
    "11111" "00010" "00100" "00010" "00001" "10001" "01110",  // 3
    "00010" "00110" "01010" "10010" "11111" "00010" "00010",  // 4
    "11111" "10000" "11110" "00001" "00001" "10001" "01110",  // 5
    "00110" "01000" "10000" "11110" "10001" "10001" "01110",  // 6
    "11111" "00001" "00010" "00100" "01000" "01000" "01000",  // 7
    "01110" "10001" "10001" "01110" "10001" "10001" "01110",  // 8
    "01110" "10001" "10001" "01111" "00001" "00010" "01100",  // 9
};

double glyph_at(int digit, double gx, double gy) {
    // bilinear sample with zero outside the 5x7 cell grid
    auto cell = [digit](int cx, int cy) -> double {
        if (cx < 0 || cx >= 5 || cy < 0 || cy >= 7) return 0.0;
        return kGlyphs[digit][cy * 5 + cx] == '1' ? 1.0 : 0.0;
    };
    int x0 = static_cast<int>(std::floor(gx));
    int y0 = static_cast<int>(std::floor(gy));
    double fx = gx - x0, fy = gy - y0;
    double top = cell(x0, y0) * (1 - fx) + cell(x0 + 1, y0) * fx;
    double bot = cell(x0, y0 + 1) * (1 - fx) + cell(x0 + 1, y0 + 1) * fx;
    return top * (1 - fy) + bot * fy;
}

Sample render_digit(int digit, std::size_t height, std::size_t width, Rng& rng) {
    // scale and position jitter: recognizing the glyph requires position-
    // invariant features, while the additive waves stay globally fixed
    const double base_sx = (static_cast<double>(width) - 4.0) / 5.0;
    const double base_sy = (static_cast<double>(height) - 4.0) / 7.0;
    const double zoom = rng.uniform(0.5, 1.0);
    const double sx = base_sx * zoom, sy = base_sy * zoom;
    const double box_w = 5.0 * sx, box_h = 7.0 * sy;
    const double margin_x = (width - box_w) / 2.0;
    const double margin_y = (height - box_h) / 2.0;
    const double dx = rng.uniform(-margin_x, margin_x);
    const double dy = rng.uniform(-margin_y, margin_y);
    const double angle = rng.uniform(-0.5, 0.5);  // radians
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double intensity = rng.uniform(0.8, 1.0);

    Sample s;
    s.label = VoteLabel(digit);
    s.pixels.resize(height * width);
    const double cx = width / 2.0 + dx, cy = height / 2.0 + dy;
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            // rotate about the jittered glyph center, then map into glyph cells
            const double rx = ca * (j - cx) + sa * (i - cy);
            const double ry = -sa * (j - cx) + ca * (i - cy);
            double gx = (rx + box_w / 2.0) / sx - 0.5;
            double gy = (ry + box_h / 2.0) / sy - 0.5;
            double value = intensity * glyph_at(digit, gx, gy);
            value += 0.03 * rng.normal();
            s.pixels[i * width + j] = std::min(1.0, std::max(0.0, value));
        }
    }
    return s;
}

DomainDataset synthetic_split(std::size_t count, std::size_t height, std::size_t width,
                              Split tag, Rng& rng) {
    DomainDataset ds;
    ds.height = height;
    ds.width = width;
    ds.num_classes = 10;
    ds.tag = tag;
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        ds.samples.push_back(render_digit(static_cast<int>(i % 10), height, width, rng));
    }
    return ds;
}

}  // namespace

DataBundle make_synthetic_digits(std::size_t train_count, std::size_t test_count,
                                 std::size_t height, std::size_t width, std::uint64_t seed) {
    require(height >= 12 && width >= 12, "make_synthetic_digits: image must be at least 12x12");
    require(train_count > 0 && test_count > 0, "make_synthetic_digits: counts must be positive");
    DataBundle bundle;
    Rng train_rng(mix_seed(seed, 1));
    Rng test_rng(mix_seed(seed, 2));
    bundle.train = synthetic_split(train_count, height, width, Split::train, train_rng);
    bundle.test = synthetic_split(test_count, height, width, Split::test, test_rng);
    bundle.val.height = height;
    bundle.val.width = width;
    bundle.val.num_classes = 10;
    bundle.val.tag = Split::val;
    return bundle;
}

// ---- covariate-shift machinery ----------------------------------------------------------

NoiseBank make_noise_bank(std::size_t height, std::size_t width, std::size_t num_waves,
                          double amplitude, std::uint64_t seed) {
    require(amplitude > 0.0 && amplitude <= 1.0, "make_noise_bank: amplitude must be in (0,1]");
    require(num_waves >= 1, "make_noise_bank: need at least one wave");
    NoiseBank bank;
    bank.height = height;
    bank.width = width;
    bank.amplitude = amplitude;
    bank.waves.reserve(num_waves);
    Rng rng(mix_seed(seed, 3));
    for (std::size_t n = 0; n < num_waves; ++n) {
        const bool along_rows = rng.bernoulli(0.5);  // value varies with i instead of j
        const std::size_t c = rng.uniform_index(width);
        const double freq =
            1.0 / std::pow(10000.0, 2.0 * static_cast<double>(c / 2) / static_cast<double>(width));
        std::vector<double> wave(height * width);
        for (std::size_t i = 0; i < height; ++i) {
            for (std::size_t j = 0; j < width; ++j) {
                const double r = static_cast<double>(along_rows ? i : j);
                wave[i * width + j] = (c % 2 == 0) ? std::sin(r * freq) : std::cos(r * freq);
            }
        }
        bank.waves.push_back(std::move(wave));
    }
    return bank;
}

const char* scenario_name(ShiftScenario s) {
    switch (s) {
        case ShiftScenario::original: return "original";
        case ShiftScenario::all_shift: return "all-shift";
        case ShiftScenario::stepped: return "stepped";
        case ShiftScenario::opposite_stepped: return "opposite-stepped";
        case ShiftScenario::half_all: return "half-all";
        case ShiftScenario::random_shift: return "random";
        case ShiftScenario::train_only: return "train-only";
        case ShiftScenario::test_only: return "test-only";
    }
    return "?";
}

ShiftScenario parse_scenario(const std::string& name) {
    for (ShiftScenario s : all_scenarios()) {
        if (name == scenario_name(s)) return s;
    }
    throw std::invalid_argument("unknown scenario '" + name + "'");
}

const std::vector<ShiftScenario>& all_scenarios() {
    static const std::vector<ShiftScenario> all = {
        ShiftScenario::original,   ShiftScenario::all_shift,    ShiftScenario::stepped,
        ShiftScenario::opposite_stepped, ShiftScenario::half_all, ShiftScenario::random_shift,
        ShiftScenario::train_only, ShiftScenario::test_only,
    };
    return all;
}

namespace {

std::vector<double> scenario_probs(ShiftScenario scenario, std::size_t num_classes, bool train,
                                   Rng& rng) {
    std::vector<double> p(num_classes, 0.0);
    switch (scenario) {
        case ShiftScenario::original:
            break;
        case ShiftScenario::all_shift:
            p.assign(num_classes, 1.0);
            break;
        case ShiftScenario::stepped:
            for (std::size_t k = 0; k < num_classes; ++k) p[k] = 0.1 * static_cast<double>(k);
            break;
        case ShiftScenario::opposite_stepped:
            for (std::size_t k = 0; k < num_classes; ++k) {
                p[k] = train ? 0.1 * static_cast<double>(k)
                             : 0.1 * static_cast<double>(num_classes - 1 - k);
            }
            break;
        case ShiftScenario::half_all:
            p.assign(num_classes, 0.5);
            break;
        case ShiftScenario::random_shift:
            for (auto& x : p) x = rng.uniform();
            break;
        case ShiftScenario::train_only:
            p.assign(num_classes, train ? 1.0 : 0.0);
            break;
        case ShiftScenario::test_only:
            p.assign(num_classes, train ? 0.0 : 1.0);
            break;
    }
    return p;
}

DomainDataset shift_split(const DomainDataset& ds, const std::vector<double>& per_label_prob,
                          const NoiseBank& bank, Rng& rng) {
    require(bank.height == ds.height && bank.width == ds.width,
            "apply_scenario: bank and dataset geometry differ");
    DomainDataset out = ds;
    for (Sample& s : out.samples) {
        const int label = s.label.primary_class();
        require(label >= 0 && static_cast<std::size_t>(label) < per_label_prob.size(),
                "apply_scenario: label " + std::to_string(label) + " outside scenario range");
        // unshifted samples keep their incoming domain id (0 for the synthetic
        // corpus; sidecar-tagged idx data keeps its tags)
        if (!rng.bernoulli(per_label_prob[label])) continue;
        const std::size_t w = rng.uniform_index(bank.size());
        const std::vector<double>& wave = bank.waves[w];
        for (std::size_t j = 0; j < s.pixels.size(); ++j) {
            s.pixels[j] = std::min(1.0, std::max(0.0, s.pixels[j] + bank.amplitude * wave[j]));
        }
        s.domain = static_cast<int>(w) + 1;  // domain 0 is reserved for unshifted data
    }
    return out;
}

}  // namespace

DataBundle apply_scenario(const DataBundle& clean, ShiftScenario scenario, const NoiseBank& bank,
                          std::uint64_t seed) {
    if (scenario == ShiftScenario::stepped || scenario == ShiftScenario::opposite_stepped) {
        require(clean.train.num_classes == 10,
                "apply_scenario: stepped scenarios require 10 classes");
    }
    Rng prob_rng(mix_seed(seed, 4));
    std::vector<double> train_probs =
        scenario_probs(scenario, clean.train.num_classes, true, prob_rng);
    std::vector<double> test_probs =
        scenario_probs(scenario, clean.train.num_classes, false, prob_rng);

    DataBundle out;
    Rng train_rng(mix_seed(seed, 5));
    Rng val_rng(mix_seed(seed, 6));
    Rng test_rng(mix_seed(seed, 7));
    out.train = shift_split(clean.train, train_probs, bank, train_rng);
    out.val = clean.val.samples.empty() ? clean.val
                                        : shift_split(clean.val, train_probs, bank, val_rng);
    out.test = shift_split(clean.test, test_probs, bank, test_rng);
    return out;
}

DataBundle split_validation(const DataBundle& bundle, double fraction, std::uint64_t seed) {
    require(fraction > 0.0 && fraction < 1.0, "split_validation: fraction must be in (0,1)");
    require(bundle.val.samples.empty(), "split_validation: bundle already has a validation split");
    DataBundle out = bundle;
    out.train.samples.clear();
    out.val = bundle.val;
    out.val.height = bundle.train.height;
    out.val.width = bundle.train.width;
    out.val.num_classes = bundle.train.num_classes;
    out.val.tag = Split::val;

    std::vector<int> domains = bundle.train.distinct_domains();
    Rng rng(mix_seed(seed, 8));
    if (domains.size() >= 2) {
        std::size_t held = static_cast<std::size_t>(
            std::lround(fraction * static_cast<double>(domains.size())));
        held = std::max<std::size_t>(1, std::min(held, domains.size() - 1));
        rng.shuffle(domains);
        std::set<int> val_domains(domains.begin(), domains.begin() + static_cast<long>(held));
        for (const Sample& s : bundle.train.samples) {
            (val_domains.count(s.domain) ? out.val : out.train).samples.push_back(s);
        }
    } else {
        // single-domain train set: fall back to a within-domain sample split
        std::vector<std::size_t> order(bundle.train.samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        std::size_t held = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(fraction * order.size())));
        held = std::min(held, order.size() - 1);
        std::set<std::size_t> val_set(order.begin(), order.begin() + static_cast<long>(held));
        for (std::size_t i = 0; i < bundle.train.samples.size(); ++i) {
            (val_set.count(i) ? out.val : out.train).samples.push_back(bundle.train.samples[i]);
        }
    }
    return out;
}

// ---- double loader --------------------------------------------------------------------

std::pair<std::size_t, std::size_t> EpochPairing::batch_range(std::size_t batch) const {
    if (batch >= num_batches()) throw std::invalid_argument("batch_range: batch out of range");
    std::size_t first = batch * batch_size;
    std::size_t last = std::min(first + batch_size, a.size());
    return {first, last};
}

EpochPairing build_double_loader(const DomainDataset& ds, std::size_t batch_size,
                                 std::uint64_t epoch_seed) {
    require(batch_size >= 1, "build_double_loader: batch size must be >= 1");
    require(!ds.samples.empty(), "build_double_loader: empty dataset");
    EpochPairing pairing;
    pairing.batch_size = batch_size;
    Rng rng(mix_seed(epoch_seed, 9));

    for (auto& [domain, indices] : indices_by_domain(ds)) {
        std::vector<std::size_t> shuffled = indices;
        rng.shuffle(shuffled);
        const std::size_t half = shuffled.size() / 2;
        for (std::size_t i = 0; i < half; ++i) {
            pairing.a.push_back(shuffled[i]);
            pairing.b.push_back(shuffled[half + i]);
        }
        if (shuffled.size() % 2 == 1) {
            const std::size_t leftover = shuffled.back();
            std::size_t partner = leftover;  // single-sample domains pair with themselves
            if (shuffled.size() > 1) {
                partner = shuffled[rng.uniform_index(shuffled.size() - 1)];
            }
            pairing.a.push_back(leftover);
            pairing.b.push_back(partner);
        }
    }

    // joint shuffle keeps pairs aligned while mixing domains across batches
    for (std::size_t i = pairing.a.size(); i > 1; --i) {
        std::size_t j = rng.uniform_index(i);
        std::swap(pairing.a[i - 1], pairing.a[j]);
        std::swap(pairing.b[i - 1], pairing.b[j]);
    }
    return pairing;
}

// ---- splitters ------------------------------------------------------------------------

DomainDataset limit_domains(const DomainDataset& ds, std::size_t n, std::uint64_t seed) {
    std::vector<int> domains = ds.distinct_domains();
    require(n >= 1, "limit_domains: need at least one domain");
    if (n > domains.size()) {
        throw std::invalid_argument("limit_domains: requested " + std::to_string(n) +
                                    " domains, dataset has " + std::to_string(domains.size()));
    }
    if (n == domains.size()) return ds;
    Rng rng(mix_seed(seed, 10));
    rng.shuffle(domains);
    std::set<int> keep(domains.begin(), domains.begin() + static_cast<long>(n));
    DomainDataset out = ds;
    out.samples.clear();
    for (const Sample& s : ds.samples) {
        if (keep.count(s.domain)) out.samples.push_back(s);
    }
    return out;
}

std::vector<DomainDataset> continual_splits(const DomainDataset& ds, std::size_t pretrain,
                                            std::size_t step_size, std::size_t steps,
                                            std::size_t replay_k, std::uint64_t seed) {
    require(pretrain >= 1 && step_size >= 1, "continual_splits: sizes must be positive");
    std::map<int, std::vector<std::size_t>> groups = indices_by_domain(ds);
    std::vector<int> domains;
    for (auto& [d, idx] : groups) domains.push_back(d);  // ascending: smaller id arrives first
    if (pretrain + steps * step_size > domains.size()) {
        throw std::invalid_argument("continual_splits: need " +
                                    std::to_string(pretrain + steps * step_size) +
                                    " domains, dataset has " + std::to_string(domains.size()));
    }

    Rng rng(mix_seed(seed, 11));
    std::vector<DomainDataset> schedule;
    DomainDataset base = ds;
    base.samples.clear();

    auto full_domain_set = [&](std::size_t first, std::size_t count) {
        DomainDataset out = base;
        for (std::size_t d = first; d < first + count; ++d) {
            for (std::size_t i : groups[domains[d]]) out.samples.push_back(ds.samples[i]);
        }
        return out;
    };

    schedule.push_back(full_domain_set(0, pretrain));
    for (std::size_t step = 1; step <= steps; ++step) {
        const std::size_t first_new = pretrain + (step - 1) * step_size;
        DomainDataset out = full_domain_set(first_new, step_size);
        // replay: a few random samples from every previously seen domain
        for (std::size_t d = 0; d < first_new; ++d) {
            std::vector<std::size_t> pool = groups[domains[d]];
            rng.shuffle(pool);
            const std::size_t take = std::min(replay_k, pool.size());
            for (std::size_t i = 0; i < take; ++i) out.samples.push_back(ds.samples[pool[i]]);
        }
        schedule.push_back(std::move(out));
    }
    return schedule;
}

}  // namespace manydg
