#pragma once

#include <map>
#include <vector>

#include "uqr/errors.hpp"

namespace uqr::metrics {

// One candidate ranking. Ties break by ascending candidate index.
struct RankedList {
    std::vector<double> scores;
    int gt_index = -1;
    std::vector<double> relevance; // optional, for NDCG
};

// 1-based rank of the ground-truth candidate.
int rank_of_gt(const RankedList& list);

struct RetrievalMetrics {
    double mean_rank = 0.0;
    std::map<int, double> recall_at; // k -> fraction of lists with rank <= k
    double mrr = 0.0;
};

RetrievalMetrics retrieval_metrics(const std::vector<RankedList>& lists,
                                   const std::vector<int>& ks = {1, 5, 10});

// DCG with gain rel / log2(1 + position) over the predicted order,
// normalized by the ideal ordering. All-zero relevance is undefined.
double ndcg(const RankedList& list);

// Sum of singular values (nuclear norm) of a dense row-major matrix,
// via one-sided Jacobi rotations to tolerance 1e-8.
double svd_diversity(const std::vector<double>& a, int rows, int cols);

// All singular values, descending.
std::vector<double> singular_values(const std::vector<double>& a, int rows, int cols,
                                    double tol = 1e-8);

} // namespace uqr::metrics
