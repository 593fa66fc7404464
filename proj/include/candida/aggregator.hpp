#pragma once

#include "candida/nn.hpp"
#include "candida/ssa.hpp"

#include <algorithm>
#include <vector>

namespace candida {

// Per-tile classifier output as consumed at slide level.
struct TileScore {
    double score = 0;                  // candida probability
    std::vector<float> embedding;      // CLS embedding
};

struct TopkEntry {
    double score = 0;
    std::vector<float> embedding;
    bool padded = false;
};

// Deterministic top-k: descending score, ties broken by tile index; short
// slides are padded with zero entries carrying a padding flag.
inline std::vector<TopkEntry> rank_topk(const std::vector<TileScore>& tiles, int k,
                                        int embed_dim) {
    if (k < 1) throw std::invalid_argument("rank_topk: k must be >= 1");
    if (tiles.empty()) throw std::invalid_argument("rank_topk: empty tile list");
    std::vector<size_t> order(tiles.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (tiles[a].score != tiles[b].score) return tiles[a].score > tiles[b].score;
        return a < b;
    });
    std::vector<TopkEntry> out;
    for (int i = 0; i < k; ++i) {
        TopkEntry e;
        if (i < static_cast<int>(order.size())) {
            e.score = tiles[order[static_cast<size_t>(i)]].score;
            e.embedding = tiles[order[static_cast<size_t>(i)]].embedding;
        } else {
            e.embedding.assign(static_cast<size_t>(embed_dim), 0.0f);
            e.padded = true;
        }
        out.push_back(std::move(e));
    }
    return out;
}

struct Verdict {
    double score = 0;
    bool positive = false;
};

// Mean of the top-k tile scores against a threshold.
inline Verdict aggregate_threshold(const std::vector<TileScore>& tiles, int k,
                                   double tau = 0.5) {
    if (tiles.empty()) return {0.0, false};
    auto topk = rank_topk(tiles, k, tiles[0].embedding.empty()
                                        ? 1
                                        : static_cast<int>(tiles[0].embedding.size()));
    double sum = 0;
    int n = 0;
    for (const auto& e : topk)
        if (!e.padded) {
            sum += e.score;
            ++n;
        }
    double score = n ? sum / n : 0.0;
    return {score, score > tau};
}

// Transformer aggregator: tokens are projected embeddings plus a rank
// positional embedding and a learned scalar-score embedding; padded tokens are
// masked out of attention and a CLS token carries the slide decision.
template <typename T>
struct WsiAggregator {
    int k, embed_dim, dim, heads, depth;
    ParamStore<T> ps;
    Linear<T> proj, fc;
    Var<T> score_w, cls_token, rank_pos;
    std::vector<EncoderBlock<T>> blocks;
    LayerNorm<T> final_ln;

    WsiAggregator(int k_, int embed_dim_, uint32_t seed, int dim_ = 64, int heads_ = 4,
                  int depth_ = 2)
        : k(k_), embed_dim(embed_dim_), dim(dim_), heads(heads_), depth(depth_), ps(seed) {
        proj = Linear<T>(ps, "agg.proj", embed_dim, dim);
        score_w = ps.create("agg.score_w", {1, dim}, static_cast<T>(0.02));
        cls_token = ps.create("agg.cls", {1, dim}, static_cast<T>(0.02));
        rank_pos = ps.create("agg.rank_pos", {k, dim}, static_cast<T>(0.02));
        for (int i = 0; i < depth; ++i)
            blocks.emplace_back(ps, "agg.block" + std::to_string(i), dim, heads, 4 * dim);
        final_ln = LayerNorm<T>(ps, "agg.final_ln", dim);
        fc = Linear<T>(ps, "agg.fc", dim, 2);
    }

    Var<T> forward(const std::vector<TopkEntry>& topk) const {
        if (static_cast<int>(topk.size()) != k)
            throw std::invalid_argument("aggregate_transformer: expected exactly k entries");
        bool any_live = false;
        for (const auto& e : topk) any_live |= !e.padded;
        if (!any_live) throw std::invalid_argument("aggregate_transformer: all entries padded");
        Tensor<T> emb({k, embed_dim});
        Tensor<T> scores({k, 1});
        Tensor<T> key_mask({1 + k});
        for (int i = 0; i < k; ++i) {
            const auto& e = topk[static_cast<size_t>(i)];
            if (static_cast<int>(e.embedding.size()) != embed_dim)
                throw std::invalid_argument("aggregate_transformer: embedding dim mismatch");
            for (int j = 0; j < embed_dim; ++j)
                emb.at(i, j) = static_cast<T>(e.embedding[static_cast<size_t>(j)]);
            scores.at(i, 0) = static_cast<T>(e.score);
            key_mask[1 + i] = e.padded ? static_cast<T>(-1e9) : T(0);
        }
        auto tokens = add(add(proj.forward(constant(emb)),
                              matmul(constant(scores), score_w)),
                          rank_pos);
        auto x = concat_rows<T>({cls_token, tokens});
        for (const auto& b : blocks) x = b.forward(x, &key_mask);
        x = final_ln.forward(x);
        return fc.forward(slice_rows(x, 0, 1));  // [1,2]
    }

    Verdict verdict(const std::vector<TopkEntry>& topk) const {
        auto logits = forward(topk);
        double s = static_cast<double>(candida_score(logits));
        return {s, s > 0.5};
    }
};

// Two-layer perceptron over the concatenated top-k scores and embeddings.
template <typename T>
struct MlpAggregator {
    int k, embed_dim, hidden;
    ParamStore<T> ps;
    Linear<T> l1, l2;

    MlpAggregator(int k_, int embed_dim_, uint32_t seed, int hidden_ = 64)
        : k(k_), embed_dim(embed_dim_), hidden(hidden_), ps(seed) {
        l1 = Linear<T>(ps, "mlp.l1", k * (embed_dim + 1), hidden);
        l2 = Linear<T>(ps, "mlp.l2", hidden, 2);
    }

    Var<T> forward(const std::vector<TopkEntry>& topk) const {
        if (static_cast<int>(topk.size()) != k)
            throw std::invalid_argument("aggregate_mlp: expected exactly k entries");
        Tensor<T> in({1, k * (embed_dim + 1)});
        for (int i = 0; i < k; ++i) {
            const auto& e = topk[static_cast<size_t>(i)];
            in.at(0, i * (embed_dim + 1)) = static_cast<T>(e.score);
            for (int j = 0; j < embed_dim; ++j)
                in.at(0, i * (embed_dim + 1) + 1 + j) =
                    static_cast<T>(e.embedding[static_cast<size_t>(j)]);
        }
        return l2.forward(relu(l1.forward(constant(in))));
    }

    Verdict verdict(const std::vector<TopkEntry>& topk) const {
        auto logits = forward(topk);
        double s = static_cast<double>(candida_score(logits));
        return {s, s > 0.5};
    }
};

}  // namespace candida
