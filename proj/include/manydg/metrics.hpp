#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace manydg {

// K x K counts, rows = true class, columns = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);

    void add(int truth, int predicted, long count = 1);
    long at(std::size_t truth, std::size_t predicted) const;
    std::size_t num_classes() const { return k_; }
    long total() const;

private:
    std::size_t k_;
    std::vector<long> counts_;
};

// trace / total
double accuracy(const ConfusionMatrix& cm);

// (p_o - p_e) / (1 - p_e) with p_e from row/column marginals; defined as 0
// when p_e = 1 (degenerate single-class case).
double cohens_kappa(const ConfusionMatrix& cm);

// Unweighted mean of per-class F1; a class with zero support and zero
// predictions scores 0.
double macro_f1(const ConfusionMatrix& cm);

// Majority class (ties toward the lowest index) plus the valid vote set
// {k : votes_k > max/2}.
std::pair<int, std::vector<int>> majority_vote(const std::vector<int>& votes);

}  // namespace manydg
