#include "candida/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace candida {

MetricsReport evaluate(const std::vector<double>& scores, const std::vector<int>& labels,
                       double threshold) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("evaluate: scores/labels length mismatch");
    if (scores.empty()) throw std::invalid_argument("evaluate: empty input");
    int64_t n = static_cast<int64_t>(scores.size());
    int64_t npos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw std::invalid_argument("evaluate: labels must be binary");
        npos += l;
    }
    int64_t nneg = n - npos;
    if (npos == 0 || nneg == 0)
        throw std::invalid_argument("evaluate: AUC undefined for single-class labels");

    // Mann-Whitney AUC via average ranks (ties get the mean rank)
    std::vector<int64_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int64_t a, int64_t b) { return scores[static_cast<size_t>(a)] <
                                                 scores[static_cast<size_t>(b)]; });
    std::vector<double> rank(scores.size());
    int64_t i = 0;
    while (i < n) {
        int64_t j = i;
        while (j < n && scores[static_cast<size_t>(order[static_cast<size_t>(j)])] ==
                            scores[static_cast<size_t>(order[static_cast<size_t>(i)])])
            ++j;
        double avg = 0.5 * static_cast<double>(i + j - 1) + 1.0;  // ranks are 1-based
        for (int64_t k = i; k < j; ++k)
            rank[static_cast<size_t>(order[static_cast<size_t>(k)])] = avg;
        i = j;
    }
    double rank_sum_pos = 0;
    for (size_t k = 0; k < scores.size(); ++k)
        if (labels[k] == 1) rank_sum_pos += rank[k];
    double auc = (rank_sum_pos - 0.5 * static_cast<double>(npos) * (npos + 1)) /
                 (static_cast<double>(npos) * static_cast<double>(nneg));

    int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t k = 0; k < scores.size(); ++k) {
        bool pred = scores[k] > threshold;
        if (labels[k] == 1)
            pred ? ++tp : ++fn;
        else
            pred ? ++fp : ++tn;
    }
    MetricsReport r;
    r.auc = auc;
    r.acc = static_cast<double>(tp + tn) / static_cast<double>(n);
    r.sen = npos ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0;
    r.spe = nneg ? static_cast<double>(tn) / static_cast<double>(tn + fp) : 0;
    double prec = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0;
    r.f1 = (prec + r.sen) > 0 ? 2 * prec * r.sen / (prec + r.sen) : 0;
    return r;
}

MeanStd mean_std(const std::vector<double>& xs) {
    MeanStd m;
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    for (double x : xs) m.stddev += (x - m.mean) * (x - m.mean);
    m.stddev = std::sqrt(m.stddev / static_cast<double>(xs.size()));
    return m;
}

std::vector<FoldSplit> make_folds(const std::vector<int>& labels, int n_folds, uint64_t seed) {
    if (static_cast<int>(labels.size()) < n_folds)
        throw std::invalid_argument("make_folds: too few ids");
    std::vector<int> pos, neg;
    for (size_t i = 0; i < labels.size(); ++i)
        (labels[i] == 1 ? pos : neg).push_back(static_cast<int>(i));
    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    // deal stratified ids round-robin into chunks
    std::vector<std::vector<int>> chunks(static_cast<size_t>(n_folds));
    int c = 0;
    for (int id : pos) chunks[static_cast<size_t>(c++ % n_folds)].push_back(id);
    for (int id : neg) chunks[static_cast<size_t>(c++ % n_folds)].push_back(id);

    std::vector<FoldSplit> folds;
    for (int f = 0; f < n_folds; ++f) {
        FoldSplit fs;
        fs.fold_id = f;
        fs.test = chunks[static_cast<size_t>(f)];
        fs.val = chunks[static_cast<size_t>((f + 1) % n_folds)];
        for (int k = 0; k < n_folds; ++k)
            if (k != f && k != (f + 1) % n_folds)
                fs.train.insert(fs.train.end(), chunks[static_cast<size_t>(k)].begin(),
                                chunks[static_cast<size_t>(k)].end());
        std::sort(fs.train.begin(), fs.train.end());
        std::sort(fs.val.begin(), fs.val.end());
        std::sort(fs.test.begin(), fs.test.end());
        folds.push_back(std::move(fs));
    }
    return folds;
}

}  // namespace candida
