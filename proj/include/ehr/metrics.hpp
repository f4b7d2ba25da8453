#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "ehr/common.hpp"

namespace ehr::evalkit {

// Rank-based AUROC (Mann-Whitney) with midranks for ties:
// (concordant + 0.5 * tied) / (positives * negatives).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw MetricError("auroc: size mismatch");
    const size_t n = scores.size();
    size_t n_pos = 0;
    for (int y : labels) n_pos += (y != 0);
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw MetricError("auroc undefined: single-class labels");

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based midrank
        for (size_t k = i; k < j; ++k)
            if (labels[order[k]] != 0) rank_sum_pos += midrank;
        i = j;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * (n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct PrfCounts {
    int64_t tp = 0;
    int64_t fp = 0;
    int64_t fn = 0;
};

// Micro-averaged F1: counts are summed across classes before forming
// precision and recall.
inline double micro_f1(const PrfCounts& c) {
    const double denom_p = static_cast<double>(c.tp + c.fp);
    const double denom_r = static_cast<double>(c.tp + c.fn);
    if (denom_p == 0.0 || denom_r == 0.0) return 0.0;
    const double p = static_cast<double>(c.tp) / denom_p;
    const double r = static_cast<double>(c.tp) / denom_r;
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

}  // namespace ehr::evalkit
