#include "uqr/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace uqr::metrics {

int rank_of_gt(const RankedList& list) {
    if (list.scores.empty()) throw UsageError("rank_of_gt on an empty list");
    if (list.gt_index < 0 || list.gt_index >= static_cast<int>(list.scores.size())) {
        throw UsageError("gt_index out of bounds");
    }
    double gt_score = list.scores[list.gt_index];
    int rank = 1;
    for (int i = 0; i < static_cast<int>(list.scores.size()); ++i) {
        if (i == list.gt_index) continue;
        if (list.scores[i] > gt_score) ++rank;
        else if (list.scores[i] == gt_score && i < list.gt_index) ++rank;
    }
    return rank;
}

RetrievalMetrics retrieval_metrics(const std::vector<RankedList>& lists,
                                   const std::vector<int>& ks) {
    if (lists.empty()) throw UsageError("retrieval_metrics needs at least one list");
    RetrievalMetrics m;
    for (int k : ks) m.recall_at[k] = 0.0;
    for (const auto& list : lists) {
        int r = rank_of_gt(list);
        m.mean_rank += r;
        m.mrr += 1.0 / r;
        for (int k : ks) {
            if (r <= k) m.recall_at[k] += 1.0;
        }
    }
    double n = static_cast<double>(lists.size());
    m.mean_rank /= n;
    m.mrr /= n;
    for (auto& [k, v] : m.recall_at) v /= n;
    return m;
}

double ndcg(const RankedList& list) {
    if (list.relevance.size() != list.scores.size()) {
        throw UsageError("ndcg needs one relevance weight per candidate");
    }
    bool any_positive = false;
    for (double r : list.relevance) any_positive = any_positive || r > 0.0;
    if (!any_positive) throw DomainError("ndcg undefined for all-zero relevance");

    int n = static_cast<int>(list.scores.size());
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    // predicted order: score descending, index ascending on ties
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (list.scores[a] != list.scores[b]) return list.scores[a] > list.scores[b];
        return a < b;
    });
    double dcg = 0.0;
    for (int pos = 0; pos < n; ++pos) {
        dcg += list.relevance[order[pos]] / std::log2(2.0 + pos);
    }
    std::vector<double> ideal = list.relevance;
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (int pos = 0; pos < n; ++pos) {
        idcg += ideal[pos] / std::log2(2.0 + pos);
    }
    return dcg / idcg;
}

std::vector<double> singular_values(const std::vector<double>& a, int rows, int cols,
                                    double tol) {
    if (rows < 1 || cols < 1 || static_cast<int>(a.size()) != rows * cols) {
        throw UsageError("singular_values: matrix size does not match rows*cols");
    }
    // One-sided Jacobi on the matrix with more rows than columns; the
    // column norms of the rotated matrix converge to the singular values.
    bool transposed = rows < cols;
    int m = transposed ? cols : rows;
    int n = transposed ? rows : cols;
    std::vector<double> w(static_cast<size_t>(m) * n);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            if (transposed) w[static_cast<size_t>(j) * n + i] = a[static_cast<size_t>(i) * cols + j];
            else w[static_cast<size_t>(i) * n + j] = a[static_cast<size_t>(i) * cols + j];
        }

    auto col_dot = [&](int p, int q) {
        double s = 0.0;
        for (int i = 0; i < m; ++i) s += w[static_cast<size_t>(i) * n + p] * w[static_cast<size_t>(i) * n + q];
        return s;
    };

    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double app = col_dot(p, p);
                double aqq = col_dot(q, q);
                double apq = col_dot(p, q);
                double denom = std::sqrt(app * aqq);
                if (denom > 0.0) off = std::max(off, std::abs(apq) / denom);
                if (apq == 0.0) continue;
                // Jacobi rotation zeroing the (p,q) inner product
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int i = 0; i < m; ++i) {
                    double xp = w[static_cast<size_t>(i) * n + p];
                    double xq = w[static_cast<size_t>(i) * n + q];
                    w[static_cast<size_t>(i) * n + p] = c * xp - s * xq;
                    w[static_cast<size_t>(i) * n + q] = s * xp + c * xq;
                }
            }
        }
        if (off < tol) break;
    }

    std::vector<double> sv(n);
    for (int p = 0; p < n; ++p) sv[p] = std::sqrt(col_dot(p, p));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

double svd_diversity(const std::vector<double>& a, int rows, int cols) {
    double total = 0.0;
    for (double s : singular_values(a, rows, cols)) total += std::abs(s);
    return total;
}

} // namespace uqr::metrics
