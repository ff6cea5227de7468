#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/flatten.hpp"
#include "dflat/tape.hpp"

namespace dflat {

struct AttentionConfig {
    std::size_t d = 32;           // model channels
    std::size_t n_h = 4;          // heads
    std::size_t L = 2;            // layers
    std::size_t n_p = 4;          // groups (grouped path)
    std::size_t n_w = 4;          // pooling window (pooled path)
    std::size_t ffn_hidden = 0;   // 0 -> 2*d
    bool use_group_pool = false;
    bool use_interactive = true;

    std::size_t d_m() const { return d / n_h; }
    std::size_t ffn_width() const { return ffn_hidden == 0 ? 2 * d : ffn_hidden; }

    void validate(std::size_t h, std::size_t w) const {
        if (n_h == 0 || d == 0 || d % n_h != 0) {
            throw ConfigError("attention: d (" + std::to_string(d) +
                              ") must be a positive multiple of n_h (" + std::to_string(n_h) +
                              ")");
        }
        if (L == 0) {
            throw ConfigError("attention: layer count must be >= 1");
        }
        if (n_p == 0 || n_w == 0) {
            throw ConfigError("attention: n_p and n_w must be >= 1");
        }
        if (use_group_pool && (h % n_p != 0 || w % n_p != 0)) {
            throw ConfigError("attention: n_p=" + std::to_string(n_p) +
                              " must divide both h=" + std::to_string(h) +
                              " and w=" + std::to_string(w));
        }
    }
};

// Exact query-key pair accounting, bumped by the attention code wherever a
// score matrix is materialized. The complexity module reads these to check
// its closed forms against the real implementation.
struct CostCounters {
    std::uint64_t attn_scores = 0;         // per-head score evaluations (all paths)
    std::uint64_t interactive_scores = 0;  // one H x W matrix per layer

    void reset() { attn_scores = interactive_scores = 0; }
};

// Optional capture of attention matrices for the dump-attn command.
struct AttnRecorder {
    std::vector<std::pair<std::string, Tensor>> maps;
};

// Tape-level view of one flattened sequence.
struct SeqVars {
    Var tokens;  // [hw x d]
    Var pos;     // [hw x d]
    std::size_t h = 0, w = 0;
    Orientation orientation = Orientation::row;

    std::size_t len() const { return h * w; }
};

struct AttnContext {
    Graph& g;
    AttentionConfig cfg;
    CostCounters* counters = nullptr;
    AttnRecorder* recorder = nullptr;
};

// ---------------------------------------------------------------------------
// Parameter registration
// ---------------------------------------------------------------------------

inline void register_layer_weights(ParameterStore& store, const std::string& prefix,
                                   const AttentionConfig& cfg) {
    const std::size_t d = cfg.d, dm = cfg.d_m(), ffn = cfg.ffn_width();
    for (std::size_t k = 0; k < cfg.n_h; ++k) {
        const std::string hp = prefix + ".h" + std::to_string(k);
        store.add(hp + ".wq", {d, dm}, ParameterStore::Init::normal_002);
        store.add(hp + ".wk", {d, dm}, ParameterStore::Init::normal_002);
        store.add(hp + ".wv", {d, dm}, ParameterStore::Init::normal_002);
    }
    store.add(prefix + ".wo", {cfg.n_h * dm, d}, ParameterStore::Init::normal_002);
    store.add(prefix + ".ffn.w1", {d, ffn}, ParameterStore::Init::normal_002);
    store.add(prefix + ".ffn.b1", {ffn}, ParameterStore::Init::zeros);
    store.add(prefix + ".ffn.w2", {ffn, d}, ParameterStore::Init::normal_002);
    store.add(prefix + ".ffn.b2", {d}, ParameterStore::Init::zeros);
    store.add(prefix + ".ln1.gain", {d}, ParameterStore::Init::ones);
    store.add(prefix + ".ln1.bias", {d}, ParameterStore::Init::zeros);
    store.add(prefix + ".ln2.gain", {d}, ParameterStore::Init::ones);
    store.add(prefix + ".ln2.bias", {d}, ParameterStore::Init::zeros);
}

// ---------------------------------------------------------------------------
// Single-head attention
//
//   ATTN(Z, seq, Z_q) = Z + SoftMax( ((Z + Z_q) W_q) ((tokens + pos) W_k)^T
//                                    / sqrt(d_m) ) (tokens W_v)
//
// Queries add the learnable query sequence, keys add the positional code,
// values use the raw tokens. The residual a head owns is its channel slice of
// Z, so the concatenation over heads reassembles Z plus the stacked
// increments before W^O is applied.
// ---------------------------------------------------------------------------

namespace detail {

inline Var head_increment(AttnContext& ctx, Var q_in, Var k_in, Var v_src,
                          const std::string& head_prefix, const std::string& map_tag,
                          Tensor* map_out = nullptr) {
    Graph& g = ctx.g;
    Var wq = g.param(head_prefix + ".wq");
    Var wk = g.param(head_prefix + ".wk");
    Var wv = g.param(head_prefix + ".wv");
    Var q = g.matmul(q_in, wq);
    Var k = g.matmul(k_in, wk);
    Var v = g.matmul(v_src, wv);
    const double inv = 1.0 / std::sqrt(static_cast<double>(ctx.cfg.d_m()));
    Var scores = g.scale(g.matmul(q, g.transpose(k)), inv);
    if (ctx.counters) {
        ctx.counters->attn_scores +=
            static_cast<std::uint64_t>(g.value(scores).rows()) * g.value(scores).cols();
    }
    Var attn = g.softmax_rows(scores);
    if (map_out) {
        *map_out = g.value(attn);
    } else if (ctx.recorder && !map_tag.empty()) {
        ctx.recorder->maps.emplace_back(map_tag, g.value(attn));
    }
    return g.matmul(attn, v);
}

}  // namespace detail

// Residual-free increment of the full-sequence multi-head attention,
// concatenated over heads: [n_q x d].
inline Var attention_increment(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                               const std::string& prefix) {
    Graph& g = ctx.g;
    Var q_in = g.add(z_prev, z_q);
    Var k_in = g.add(seq.tokens, seq.pos);
    std::vector<Var> heads;
    for (std::size_t k = 0; k < ctx.cfg.n_h; ++k) {
        const std::string hp = prefix + ".h" + std::to_string(k);
        heads.push_back(detail::head_increment(ctx, q_in, k_in, seq.tokens, hp,
                                               prefix + ".h" + std::to_string(k)));
    }
    return heads.size() == 1 ? heads[0] : g.concat_cols(heads);
}

// Full multi-head attention: per-head outputs (residual slice + increment)
// concatenated along channels, then W^O.
inline Var multi_head_attn(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                           const std::string& prefix) {
    Graph& g = ctx.g;
    Var inc = attention_increment(ctx, z_prev, z_q, seq, prefix);
    return g.matmul(g.add(z_prev, inc), g.param(prefix + ".wo"));
}

// ---------------------------------------------------------------------------
// Grouping: queries and features split into n_p spatially aligned groups;
// each query group attends only to its feature group. Query i belongs to
// group floor(i*n_p/n_q); features are blocks of along/n_p consecutive source
// rows (columns). Returns the residual-free increment.
// ---------------------------------------------------------------------------

inline std::size_t group_of_query(std::size_t i, std::size_t n_q, std::size_t n_p) {
    return i * n_p / n_q;
}

inline Var grouped_increment(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                             const std::string& prefix) {
    Graph& g = ctx.g;
    const std::size_t n_p = ctx.cfg.n_p;
    const std::size_t n_q = g.value(z_prev).rows();
    const std::size_t along = seq.orientation == Orientation::row ? seq.h : seq.w;
    const std::size_t reps = seq.orientation == Orientation::row ? seq.w : seq.h;
    if (along % n_p != 0) {
        throw ConfigError("grouped attention (" + std::string(orientation_name(seq.orientation)) +
                          " path): n_p=" + std::to_string(n_p) + " does not divide source extent " +
                          std::to_string(along));
    }
    const std::size_t block = (along / n_p) * reps;

    Var q_in = g.add(z_prev, z_q);
    Var k_in = g.add(seq.tokens, seq.pos);

    // Query range of group gi: [ceil(gi*n_q/n_p), ceil((gi+1)*n_q/n_p)).
    auto q_start = [&](std::size_t gi) { return (gi * n_q + n_p - 1) / n_p; };

    std::vector<Var> heads;
    for (std::size_t k = 0; k < ctx.cfg.n_h; ++k) {
        const std::string hp = prefix + ".h" + std::to_string(k);
        std::vector<Var> blocks;
        Tensor scattered({n_q, seq.len()});
        for (std::size_t gi = 0; gi < n_p; ++gi) {
            const std::size_t qs = q_start(gi), qe = q_start(gi + 1);
            if (qs == qe) {
                continue;
            }
            Var q_blk = g.slice_rows(q_in, qs, qe - qs);
            Var k_blk = g.slice_rows(k_in, gi * block, block);
            Var v_blk = g.slice_rows(seq.tokens, gi * block, block);
            Tensor map;
            Var inc = detail::head_increment(ctx, q_blk, k_blk, v_blk, hp, {},
                                             ctx.recorder ? &map : nullptr);
            if (ctx.recorder) {
                for (std::size_t i = 0; i < map.rows(); ++i) {
                    for (std::size_t j = 0; j < map.cols(); ++j) {
                        scattered.at(qs + i, gi * block + j) = map.at(i, j);
                    }
                }
            }
            blocks.push_back(inc);
        }
        if (ctx.recorder) {
            ctx.recorder->maps.emplace_back(prefix + ".h" + std::to_string(k) + ".grouped",
                                            std::move(scattered));
        }
        heads.push_back(blocks.size() == 1 ? blocks[0] : g.concat_rows(blocks));
    }
    return heads.size() == 1 ? heads[0] : g.concat_cols(heads);
}

// ---------------------------------------------------------------------------
// Pooling: tokens within each source row (column) average-pooled over
// non-overlapping windows of n_w; a trailing partial window averages its
// remaining members. The pooled positional code of a window is the row's
// (column's) constant code, taken directly so it stays exact. Every query
// attends to the whole pooled sequence. Returns the residual-free increment.
// ---------------------------------------------------------------------------

inline std::vector<std::pair<std::size_t, std::size_t>> pooling_segments(Orientation o,
                                                                         std::size_t h,
                                                                         std::size_t w,
                                                                         std::size_t n_w) {
    const std::size_t along = o == Orientation::row ? h : w;   // rows (columns) of the source
    const std::size_t within = o == Orientation::row ? w : h;  // tokens per row (column)
    std::vector<std::pair<std::size_t, std::size_t>> segs;
    for (std::size_t r = 0; r < along; ++r) {
        for (std::size_t s = 0; s < within; s += n_w) {
            segs.emplace_back(r * within + s, std::min(n_w, within - s));
        }
    }
    return segs;
}

inline Var pooled_increment(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                            const std::string& prefix) {
    Graph& g = ctx.g;
    const auto segs = pooling_segments(seq.orientation, seq.h, seq.w, ctx.cfg.n_w);
    std::vector<std::size_t> firsts;
    firsts.reserve(segs.size());
    for (const auto& s : segs) {
        firsts.push_back(s.first);
    }
    Var p_tokens = g.segment_mean_rows(seq.tokens, segs);
    Var p_pos = g.gather_rows(seq.pos, firsts);

    Var q_in = g.add(z_prev, z_q);
    Var k_in = g.add(p_tokens, p_pos);
    std::vector<Var> heads;
    for (std::size_t k = 0; k < ctx.cfg.n_h; ++k) {
        const std::string hp = prefix + ".h" + std::to_string(k);
        heads.push_back(detail::head_increment(ctx, q_in, k_in, p_tokens, hp,
                                               prefix + ".h" + std::to_string(k) + ".pooled"));
    }
    return heads.size() == 1 ? heads[0] : g.concat_cols(heads);
}

// Grouping and pooling summed as residual-free increments, the residual added
// once, then the shared W^O.
inline Var group_pool_attn(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                           const std::string& prefix) {
    Graph& g = ctx.g;
    Var grouped = grouped_increment(ctx, z_prev, z_q, seq, prefix);
    Var pooled = pooled_increment(ctx, z_prev, z_q, seq, prefix);
    return g.matmul(g.add(g.add(z_prev, grouped), pooled), g.param(prefix + ".wo"));
}

// ---------------------------------------------------------------------------
// FFN block with residual, then the post-norm LayerNorm:
//   out = LN2( x + W2 relu(W1 x + b1) + b2 )
// ---------------------------------------------------------------------------

inline Var ffn_block(AttnContext& ctx, Var x, const std::string& prefix) {
    Graph& g = ctx.g;
    Var h1 = g.relu(g.add_rowvec(g.matmul(x, g.param(prefix + ".ffn.w1")),
                                 g.param(prefix + ".ffn.b1")));
    Var h2 = g.add_rowvec(g.matmul(h1, g.param(prefix + ".ffn.w2")),
                          g.param(prefix + ".ffn.b2"));
    return g.layer_norm(g.add(x, h2), g.param(prefix + ".ln2.gain"),
                        g.param(prefix + ".ln2.bias"));
}

// One transformer sublayer stack: attention (full or grouped+pooled, residual
// inside), post-norm, FFN block.
inline Var attention_layer(AttnContext& ctx, Var z_prev, Var z_q, const SeqVars& seq,
                           const std::string& prefix) {
    Graph& g = ctx.g;
    Var attn = ctx.cfg.use_group_pool ? group_pool_attn(ctx, z_prev, z_q, seq, prefix)
                                      : multi_head_attn(ctx, z_prev, z_q, seq, prefix);
    Var a = g.layer_norm(attn, g.param(prefix + ".ln1.gain"), g.param(prefix + ".ln1.bias"));
    return ffn_block(ctx, a, prefix);
}

// ---------------------------------------------------------------------------
// Row-column interactive attention:
//   Z_r = SoftMax(O_r O_c^T / sqrt(d)) O_c + O_r
//   Z_c = SoftMax(O_c O_r^T / sqrt(d)) O_r + O_c
// No learned projections. The two score matrices are transposes of each
// other, so a single H x W matrix is evaluated per layer.
// ---------------------------------------------------------------------------

inline std::pair<Var, Var> interactive_attn(AttnContext& ctx, Var o_r, Var o_c,
                                            const std::string& tag = {}) {
    Graph& g = ctx.g;
    const std::size_t d = g.value(o_r).cols();
    Var m = g.scale(g.matmul(o_r, g.transpose(o_c)), 1.0 / std::sqrt(static_cast<double>(d)));
    if (ctx.counters) {
        ctx.counters->interactive_scores +=
            static_cast<std::uint64_t>(g.value(m).rows()) * g.value(m).cols();
    }
    if (ctx.recorder && !tag.empty()) {
        ctx.recorder->maps.emplace_back(tag, g.value(m));
    }
    Var z_r = g.add(g.matmul(g.softmax_rows(m), o_c), o_r);
    Var z_c = g.add(g.matmul(g.softmax_rows(g.transpose(m)), o_r), o_c);
    return {z_r, z_c};
}

}  // namespace dflat
