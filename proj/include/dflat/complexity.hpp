#pragma once

#include <cstdint>
#include <numeric>
#include <string>

#include "dflat/attention.hpp"
#include "dflat/errors.hpp"
#include "dflat/model.hpp"

namespace dflat {

// =========================================================================
// Attention cost accounting.
//
//   Score count (query-key pairs), per layer per head:
//     naive             H*W * h*w
//     full dflat        h*w * (H + W)          (H row + W column queries)
//     group+pool dflat  (h*w/n_p)*(H+W)                       grouped path
//                       + H*h*ceil(w/n_w) + W*w*ceil(h/n_w)   pooled path
//   With n_w | w and n_w | h the group+pool count equals
//   (beta_g + beta_p) * h*w * (H+W), beta_g = 1/n_p, beta_p = 1/n_w.
//
//   Interactive attention evaluates one H x W score matrix per layer (its
//   column direction is the transpose), reported separately from the
//   headline figure.
//
//   MAC counts additionally charge the d_m-wide projections, score dot
//   products and value aggregation, plus W^O, the FFN, and (for dflat) the
//   interactive exchange; see mac breakdown below.
// =========================================================================

enum class CostVariant { naive, full_dflat, group_pool_dflat };

inline const char* cost_variant_name(CostVariant v) {
    switch (v) {
        case CostVariant::naive:
            return "naive";
        case CostVariant::full_dflat:
            return "full_dflat";
        case CostVariant::group_pool_dflat:
            return "group_pool_dflat";
    }
    return "?";
}

struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static Rational make(std::int64_t n, std::int64_t d) {
        const std::int64_t g = std::gcd(n, d);
        return Rational{n / g, d / g};
    }

    bool operator==(const Rational& o) const { return num == o.num && den == o.den; }

    std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
};

struct CostParams {
    std::size_t h = 4, w = 4;
    std::size_t H = 16, W = 16;
    std::size_t d = 8, n_h = 2, L = 1;
    std::size_t n_p = 1, n_w = 1;
};

struct CostReport {
    CostVariant variant = CostVariant::full_dflat;
    CostParams params;
    std::uint64_t scores_per_layer = 0;              // per layer per head
    std::uint64_t interactive_scores_per_layer = 0;  // per layer, heads share it
    std::uint64_t mac_count = 0;                     // total over L layers, all heads
    Rational beta_g{1, 1}, beta_p{1, 1};
};

namespace detail {

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace detail

inline std::uint64_t pooled_length(std::size_t along, std::size_t within, std::size_t n_w) {
    return static_cast<std::uint64_t>(along) * detail::ceil_div(within, n_w);
}

inline CostReport count_scores(CostVariant variant, const CostParams& p) {
    if (p.h == 0 || p.w == 0 || p.H == 0 || p.W == 0 || p.L == 0 || p.n_h == 0) {
        throw ConfigError("count_scores: extents, layers and heads must be >= 1");
    }
    if (variant == CostVariant::group_pool_dflat) {
        if (p.n_p == 0 || p.n_w == 0) {
            throw ConfigError("count_scores: n_p and n_w must be >= 1");
        }
        if (p.h % p.n_p != 0 || p.w % p.n_p != 0) {
            throw ConfigError("count_scores: n_p=" + std::to_string(p.n_p) +
                              " must divide h=" + std::to_string(p.h) + " and w=" +
                              std::to_string(p.w));
        }
    }
    const std::uint64_t h = p.h, w = p.w, H = p.H, W = p.W;
    const std::uint64_t hw = h * w;
    const std::uint64_t d = p.d, dm = p.d / p.n_h, ffn = 2 * p.d;

    CostReport r;
    r.variant = variant;
    r.params = p;
    r.beta_g = Rational::make(1, static_cast<std::int64_t>(p.n_p));
    r.beta_p = Rational::make(1, static_cast<std::int64_t>(p.n_w));

    // Score pairs per layer per head, and the per-path breakdown needed for MACs.
    std::uint64_t pairs = 0;          // per layer per head
    std::uint64_t mac_per_layer = 0;  // all heads, one layer
    switch (variant) {
        case CostVariant::naive: {
            pairs = H * W * hw;
            const std::uint64_t n_q = H * W;
            const std::uint64_t per_head =
                n_q * d * dm + 2 * hw * d * dm + 2 * pairs * dm;  // Q,K,V projections + QK^T + AV
            mac_per_layer = p.n_h * per_head + n_q * d * d + 2 * n_q * d * ffn;
            break;
        }
        case CostVariant::full_dflat: {
            pairs = hw * (H + W);
            std::uint64_t per_head = 0;
            for (std::uint64_t n_q : {H, W}) {
                per_head += n_q * d * dm + 2 * hw * d * dm + 2 * (n_q * hw) * dm;
            }
            mac_per_layer = p.n_h * per_head + (H + W) * d * d + 2 * (H + W) * d * ffn;
            r.interactive_scores_per_layer = H * W;
            mac_per_layer += 3 * H * W * d;  // score matrix + both aggregations
            break;
        }
        case CostVariant::group_pool_dflat: {
            const std::uint64_t grouped = (hw / p.n_p) * (H + W);
            const std::uint64_t pooled_row = H * pooled_length(p.h, p.w, p.n_w);
            const std::uint64_t pooled_col = W * pooled_length(p.w, p.h, p.n_w);
            pairs = grouped + pooled_row + pooled_col;
            std::uint64_t per_head = 0;
            for (std::uint64_t n_q : {H, W}) {
                const std::uint64_t plen = n_q == H ? pooled_length(p.h, p.w, p.n_w)
                                                    : pooled_length(p.w, p.h, p.n_w);
                const std::uint64_t path_pairs = n_q * (hw / p.n_p) + n_q * plen;
                // Queries are projected once per path (grouped and pooled).
                per_head += 2 * n_q * d * dm + 2 * (hw + plen) * d * dm + 2 * path_pairs * dm;
            }
            mac_per_layer = p.n_h * per_head + (H + W) * d * d + 2 * (H + W) * d * ffn;
            // Window averaging touches every token once per channel.
            mac_per_layer += 2 * hw * d;
            r.interactive_scores_per_layer = H * W;
            mac_per_layer += 3 * H * W * d;
            break;
        }
    }
    r.scores_per_layer = pairs;
    r.mac_count = static_cast<std::uint64_t>(p.L) * mac_per_layer;
    return r;
}

struct EnumeratedScores {
    std::uint64_t attn_total = 0;         // all layers, all heads
    std::uint64_t interactive_total = 0;  // all layers
    std::uint64_t per_layer_per_head = 0;
    std::uint64_t interactive_per_layer = 0;
};

// Runs the real decoder stack on a zero feature map and counts every
// evaluated (query, key) pair through the instrumentation hooks. Exact
// integer agreement with count_scores is the complexity module's oracle.
inline EnumeratedScores enumerate_scores(CostVariant variant, const CostParams& p) {
    if (static_cast<std::uint64_t>(p.h) * p.w * p.H * p.W > 10'000'000ull) {
        throw ResourceError("enumerate_scores: extent product exceeds the 1e7 guard");
    }
    if (p.d < 2 || p.d % 2 != 0 || p.d % p.n_h != 0) {
        throw ConfigError("enumerate_scores: d must be even and a multiple of n_h");
    }
    AttentionConfig acfg;
    acfg.d = p.d;
    acfg.n_h = p.n_h;
    acfg.L = p.L;
    acfg.n_p = p.n_p;
    acfg.n_w = p.n_w;
    acfg.use_group_pool = variant == CostVariant::group_pool_dflat;
    acfg.use_interactive = variant != CostVariant::naive;
    acfg.validate(p.h, p.w);

    ParameterStore store(0);
    CostCounters counters;
    Graph g(store);
    AttnContext ctx{g, acfg, &counters, nullptr};
    const FeatureMap map(p.h, p.w, p.d);

    if (variant == CostVariant::naive) {
        store.add("queries.dense", {p.H * p.W, p.d}, ParameterStore::Init::normal_002);
        for (std::size_t l = 0; l < p.L; ++l) {
            register_layer_weights(store, "dense.l" + std::to_string(l), acfg);
        }
        SeqVars seq{g.input(flatten(map, Orientation::row).tokens),
                    g.input(flatten(map, Orientation::row).pos), p.h, p.w, Orientation::row};
        naive_decoder(ctx, seq, g.param("queries.dense"), p.H * p.W);
    } else {
        store.add("queries.row", {p.H, p.d}, ParameterStore::Init::normal_002);
        store.add("queries.col", {p.W, p.d}, ParameterStore::Init::normal_002);
        for (std::size_t l = 0; l < p.L; ++l) {
            register_layer_weights(store, "row.l" + std::to_string(l), acfg);
            register_layer_weights(store, "col.l" + std::to_string(l), acfg);
        }
        const FlattenedSequence fr = flatten(map, Orientation::row);
        const FlattenedSequence fc = flatten(map, Orientation::column);
        SeqVars row_seq{g.input(fr.tokens), g.input(fr.pos), p.h, p.w, Orientation::row};
        SeqVars col_seq{g.input(fc.tokens), g.input(fc.pos), p.h, p.w, Orientation::column};
        dflat_decoder(ctx, row_seq, col_seq, g.param("queries.row"), g.param("queries.col"), p.H,
                      p.W);
    }

    EnumeratedScores e;
    e.attn_total = counters.attn_scores;
    e.interactive_total = counters.interactive_scores;
    const std::uint64_t lh = static_cast<std::uint64_t>(p.L) * p.n_h;
    if (e.attn_total % lh != 0 || (p.L > 0 && e.interactive_total % p.L != 0)) {
        throw StateError("enumerate_scores: counts not divisible by layers*heads");
    }
    e.per_layer_per_head = e.attn_total / lh;
    e.interactive_per_layer = e.interactive_total / p.L;
    return e;
}

}  // namespace dflat
