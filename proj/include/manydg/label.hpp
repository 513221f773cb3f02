#pragma once

#include <stdexcept>
#include <vector>

namespace manydg {

// A target is either a single class index or a vote-count vector over K
// classes (expert annotations with disagreement).
struct VoteLabel {
    int cls = -1;
    std::vector<int> votes;  // non-empty switches to vote mode

    VoteLabel() = default;
    explicit VoteLabel(int single) : cls(single) {}
    explicit VoteLabel(std::vector<int> counts) : votes(std::move(counts)) {}

    bool is_votes() const { return !votes.empty(); }

    // The majority class; ties break toward the lowest index.
    int primary_class() const {
        if (!is_votes()) {
            if (cls < 0) throw std::logic_error("VoteLabel: unset label");
            return cls;
        }
        int best = 0;
        for (std::size_t k = 1; k < votes.size(); ++k) {
            if (votes[k] > votes[best]) best = static_cast<int>(k);
        }
        if (votes[best] <= 0) throw std::invalid_argument("VoteLabel: all-zero vote vector");
        return best;
    }

    // Classes with more votes than half of the maximum count.
    std::vector<int> valid_set() const {
        if (!is_votes()) return {primary_class()};
        int mx = votes[primary_class()];
        std::vector<int> s;
        for (std::size_t k = 0; k < votes.size(); ++k) {
            if (static_cast<double>(votes[k]) > mx / 2.0) s.push_back(static_cast<int>(k));
        }
        return s;
    }
};

}  // namespace manydg
