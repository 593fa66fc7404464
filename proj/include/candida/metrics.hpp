#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace candida {

// AUC is pairwise concordance with ties counted 0.5; the remaining metrics use
// a fixed decision threshold.
struct MetricsReport {
    double auc = 0, acc = 0, sen = 0, spe = 0, f1 = 0;
};

MetricsReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold = 0.5);

struct MeanStd {
    double mean = 0, stddev = 0;
};
MeanStd mean_std(const std::vector<double>& xs);

// Stratified 5-way split; per fold, test = chunk f, val = chunk f+1, train =
// the remaining three chunks (ratio 3:1:1).
struct FoldSplit {
    int fold_id = 0;
    std::vector<int> train, val, test;  // indices into the id list
};

std::vector<FoldSplit> make_folds(const std::vector<int>& labels, int n_folds, uint64_t seed);

}  // namespace candida
