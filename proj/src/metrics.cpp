#include "sepsislab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sepsislab/errors.hpp"

namespace sepsislab {

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw PreconditionError("scores and labels differ in length");
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw PreconditionError("labels must be 0 or 1");
        if (std::isnan(scores[i])) throw PreconditionError("scores must not be NaN");
        n_pos += static_cast<std::size_t>(labels[i]);
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw PreconditionError("AUC needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of mid-ranks (1-based) of the positives; every quantity is a multiple of 1/2.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + 1 + j + 1);
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum += mid;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    const double u = rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

}  // namespace sepsislab
