#pragma once

#include <span>

namespace sepsislab {

// Probability that a random positive scores above a random negative, ties
// counting one half (Mann-Whitney U / (n_pos * n_neg)). Throws PreconditionError
// when the lengths differ or only one class is present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

}  // namespace sepsislab
