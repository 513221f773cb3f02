#include "manydg/metrics.hpp"

#include <stdexcept>
#include <string>

namespace manydg {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes) {
    if (num_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
    counts_.assign(k_ * k_, 0);
}

void ConfusionMatrix::add(int truth, int predicted, long count) {
    if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= k_ ||
        static_cast<std::size_t>(predicted) >= k_) {
        throw std::invalid_argument("ConfusionMatrix: class index out of range");
    }
    if (count < 0) throw std::invalid_argument("ConfusionMatrix: negative count");
    counts_[static_cast<std::size_t>(truth) * k_ + static_cast<std::size_t>(predicted)] += count;
}

long ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
    if (truth >= k_ || predicted >= k_) {
        throw std::invalid_argument("ConfusionMatrix: class index out of range");
    }
    return counts_[truth * k_ + predicted];
}

long ConfusionMatrix::total() const {
    long t = 0;
    for (long c : counts_) t += c;
    return t;
}

double accuracy(const ConfusionMatrix& cm) {
    const long total = cm.total();
    if (total == 0) throw std::invalid_argument("accuracy: empty confusion matrix");
    long trace = 0;
    for (std::size_t k = 0; k < cm.num_classes(); ++k) trace += cm.at(k, k);
    return static_cast<double>(trace) / static_cast<double>(total);
}

double cohens_kappa(const ConfusionMatrix& cm) {
    const long total = cm.total();
    if (total == 0) throw std::invalid_argument("cohens_kappa: empty confusion matrix");
    const std::size_t k = cm.num_classes();
    double p_o = 0.0, p_e = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        long row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += cm.at(i, j);
            col += cm.at(j, i);
        }
        p_o += static_cast<double>(cm.at(i, i));
        p_e += static_cast<double>(row) * static_cast<double>(col);
    }
    p_o /= static_cast<double>(total);
    p_e /= static_cast<double>(total) * static_cast<double>(total);
    if (p_e >= 1.0) return 0.0;
    return (p_o - p_e) / (1.0 - p_e);
}

double macro_f1(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("macro_f1: empty confusion matrix");
    const std::size_t k = cm.num_classes();
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        long tp = cm.at(c, c), row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const double precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
        const double recall = row > 0 ? static_cast<double>(tp) / row : 0.0;
        const double f1 =
            (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        sum += f1;
    }
    return sum / static_cast<double>(k);
}

std::pair<int, std::vector<int>> majority_vote(const std::vector<int>& votes) {
    if (votes.empty()) throw std::invalid_argument("majority_vote: empty vote vector");
    int best = 0;
    for (std::size_t k = 0; k < votes.size(); ++k) {
        if (votes[k] < 0) throw std::invalid_argument("majority_vote: negative vote count");
        if (votes[k] > votes[best]) best = static_cast<int>(k);
    }
    if (votes[best] == 0) throw std::invalid_argument("majority_vote: all-zero vote vector");
    std::vector<int> valid;
    for (std::size_t k = 0; k < votes.size(); ++k) {
        if (static_cast<double>(votes[k]) > votes[best] / 2.0) valid.push_back(static_cast<int>(k));
    }
    return {best, valid};
}

}  // namespace manydg
