#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dflat/attention.hpp"
#include "dflat/errors.hpp"
#include "dflat/flatten.hpp"
#include "dflat/store.hpp"
#include "dflat/tape.hpp"

namespace dflat {

enum class Variant { dflat, naive, bilinear };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::dflat:
            return "dflat";
        case Variant::naive:
            return "naive";
        case Variant::bilinear:
            return "bilinear";
    }
    return "?";
}

inline Variant variant_from_name(const std::string& s) {
    if (s == "dflat") return Variant::dflat;
    if (s == "naive") return Variant::naive;
    if (s == "bilinear") return Variant::bilinear;
    throw ConfigError("unknown variant: " + s + " (want dflat|naive|bilinear)");
}

struct ModelConfig {
    Variant variant = Variant::dflat;
    std::size_t H = 32, W = 32;  // output extent
    std::size_t h = 8, w = 8;    // encoder extent
    std::size_t d = 32;
    std::size_t c_in = 3;
    std::size_t n_classes = 3;
    AttentionConfig attn;
    std::uint64_t seed = 0;

    std::size_t patch() const { return H / h; }

    void validate() const {
        if (h == 0 || w == 0 || H < h || W < w || H % h != 0 || W % w != 0) {
            throw ConfigError("model: encoder extents must divide output extents exactly");
        }
        if (H / h != W / w) {
            throw ConfigError("model: patch size must match on both axes (H/h=" +
                              std::to_string(H / h) + ", W/w=" + std::to_string(W / w) + ")");
        }
        if (d < 2 || d % 2 != 0) {
            throw ConfigError("model: d must be even and >= 2");
        }
        if (n_classes < 2) {
            throw ConfigError("model: n_classes must be >= 2");
        }
        if (c_in == 0) {
            throw ConfigError("model: c_in must be >= 1");
        }
        attn.validate(h, w);
        if (variant == Variant::naive && H * W > (1u << 16)) {
            throw ResourceError("naive variant: " + std::to_string(H * W) +
                                " queries exceed the 2^16 desk-scale guard");
        }
    }
};

struct ModelOutput {
    Var s;       // [H*W x d] dense feature rows, pixel (i,j) at row i*W+j
    Var logits;  // [H*W x n_classes]
    Var z_r;     // [H x d] final row embeddings (dflat only)
    Var z_c;     // [W x d] final column embeddings (dflat only)
    bool has_row_col = false;
};

// L layers of the dual decoder: row and column attention layers, then the
// interactive exchange. Starts from Z_0 = 0 on both paths.
inline std::pair<Var, Var> dflat_decoder(AttnContext& ctx, const SeqVars& row_seq,
                                         const SeqVars& col_seq, Var z_q_r, Var z_q_c,
                                         std::size_t H, std::size_t W) {
    Graph& g = ctx.g;
    const std::size_t d = ctx.cfg.d;
    Var z_r = g.input(Tensor({H, d}));
    Var z_c = g.input(Tensor({W, d}));
    for (std::size_t l = 0; l < ctx.cfg.L; ++l) {
        Var o_r = attention_layer(ctx, z_r, z_q_r, row_seq, "row.l" + std::to_string(l));
        Var o_c = attention_layer(ctx, z_c, z_q_c, col_seq, "col.l" + std::to_string(l));
        if (ctx.cfg.use_interactive) {
            auto [zr, zc] = interactive_attn(ctx, o_r, o_c, "inter.l" + std::to_string(l));
            z_r = zr;
            z_c = zc;
        } else {
            z_r = o_r;
            z_c = o_c;
        }
    }
    return {z_r, z_c};
}

// The naive dense stack: one query per output pixel, no interaction step.
inline Var naive_decoder(AttnContext& ctx, const SeqVars& seq, Var z_q, std::size_t n_pixels) {
    Graph& g = ctx.g;
    Var z = g.input(Tensor({n_pixels, ctx.cfg.d}));
    for (std::size_t l = 0; l < ctx.cfg.L; ++l) {
        z = attention_layer(ctx, z, z_q, seq, "dense.l" + std::to_string(l));
    }
    return z;
}

// The assembled decoder: a linear patch encoder, the variant-specific layer
// stack, and a shared per-pixel affine classifier. Construction registers all
// parameters; forward() records one pass on a caller-supplied tape.
class Model {
public:
    explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), store_(cfg_.seed) {
        cfg_.validate();
        const std::size_t p = cfg_.patch();
        store_.add("encoder.patch.weight", {p * p * cfg_.c_in, cfg_.d},
                   ParameterStore::Init::normal_002);
        store_.add("encoder.patch.bias", {cfg_.d}, ParameterStore::Init::zeros);

        row_base_ = sinusoid_base(cfg_.h, cfg_.d);
        col_base_ = sinusoid_base(cfg_.w, cfg_.d);
        row_key_pos_ = replicate_codes(row_base_, cfg_.w);
        col_key_pos_ = replicate_codes(col_base_, cfg_.h);
        row_query_codes_ = interpolate_codes(row_base_, cfg_.H);
        col_query_codes_ = interpolate_codes(col_base_, cfg_.W);

        switch (cfg_.variant) {
            case Variant::dflat: {
                Tensor& zqr =
                    store_.add("queries.row", {cfg_.H, cfg_.d}, ParameterStore::Init::normal_002);
                Tensor& zqc =
                    store_.add("queries.col", {cfg_.W, cfg_.d}, ParameterStore::Init::normal_002);
                // Positional codes seed the queries once, at construction.
                for (std::size_t i = 0; i < zqr.size(); ++i) {
                    zqr[i] += row_query_codes_[i];
                }
                for (std::size_t i = 0; i < zqc.size(); ++i) {
                    zqc[i] += col_query_codes_[i];
                }
                for (std::size_t l = 0; l < cfg_.attn.L; ++l) {
                    register_layer_weights(store_, "row.l" + std::to_string(l), cfg_.attn);
                    register_layer_weights(store_, "col.l" + std::to_string(l), cfg_.attn);
                }
                break;
            }
            case Variant::naive: {
                Tensor& zq = store_.add("queries.dense", {cfg_.H * cfg_.W, cfg_.d},
                                        ParameterStore::Init::normal_002);
                for (std::size_t i = 0; i < cfg_.H; ++i) {
                    for (std::size_t j = 0; j < cfg_.W; ++j) {
                        for (std::size_t k = 0; k < cfg_.d; ++k) {
                            zq.at(i * cfg_.W + j, k) +=
                                row_query_codes_.at(i, k) + col_query_codes_.at(j, k);
                        }
                    }
                }
                // Keys carry both axis codes so the dense baseline sees full
                // 2-D positions.
                naive_key_pos_ = Tensor({cfg_.h * cfg_.w, cfg_.d});
                for (std::size_t i = 0; i < cfg_.h; ++i) {
                    for (std::size_t j = 0; j < cfg_.w; ++j) {
                        for (std::size_t k = 0; k < cfg_.d; ++k) {
                            naive_key_pos_.at(i * cfg_.w + j, k) =
                                row_base_.at(i, k) + col_base_.at(j, k);
                        }
                    }
                }
                for (std::size_t l = 0; l < cfg_.attn.L; ++l) {
                    register_layer_weights(store_, "dense.l" + std::to_string(l), cfg_.attn);
                }
                break;
            }
            case Variant::bilinear:
                break;
        }
        store_.add("cls.weight", {cfg_.d, cfg_.n_classes}, ParameterStore::Init::normal_002);
        store_.add("cls.bias", {cfg_.n_classes}, ParameterStore::Init::zeros);
    }

    const ModelConfig& config() const { return cfg_; }
    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }

    // Non-overlapping patch embedding: [H x W x c_in] -> [hw x d] row-major tokens.
    Var encode(Graph& g, const Tensor& image) const {
        if (image.rank() != 3 || image.dim(0) != cfg_.H || image.dim(1) != cfg_.W ||
            image.dim(2) != cfg_.c_in) {
            throw ShapeError("encode: image " + image.shape_str() + " does not match " +
                             std::to_string(cfg_.H) + "x" + std::to_string(cfg_.W) + "x" +
                             std::to_string(cfg_.c_in));
        }
        const std::size_t p = cfg_.patch();
        Tensor patches({cfg_.h * cfg_.w, p * p * cfg_.c_in});
        for (std::size_t bi = 0; bi < cfg_.h; ++bi) {
            for (std::size_t bj = 0; bj < cfg_.w; ++bj) {
                std::size_t col = 0;
                for (std::size_t di = 0; di < p; ++di) {
                    for (std::size_t dj = 0; dj < p; ++dj) {
                        for (std::size_t c = 0; c < cfg_.c_in; ++c) {
                            patches.at(bi * cfg_.w + bj, col++) =
                                image.at(bi * p + di, bj * p + dj, c);
                        }
                    }
                }
            }
        }
        return g.add_rowvec(g.matmul(g.input(std::move(patches)), g.param("encoder.patch.weight")),
                            g.param("encoder.patch.bias"));
    }

    Var classify(Graph& g, Var s) const {
        return g.add_rowvec(g.matmul(s, g.param("cls.weight")), g.param("cls.bias"));
    }

    ModelOutput forward(Graph& g, const Tensor& image, CostCounters* counters = nullptr,
                        AttnRecorder* recorder = nullptr) const {
        return forward_from_tokens(g, encode(g, image), counters, recorder);
    }

    // Decoder-only entry: tokens are the row-major [hw x d] feature rows of S_o.
    ModelOutput forward_from_feature(Graph& g, const FeatureMap& map,
                                     CostCounters* counters = nullptr,
                                     AttnRecorder* recorder = nullptr) const {
        if (map.h != cfg_.h || map.w != cfg_.w || map.d != cfg_.d) {
            throw ShapeError("forward_from_feature: map " + map.values.shape_str() +
                             " does not match configured encoder extents");
        }
        return forward_from_tokens(g, g.input(flatten(map, Orientation::row).tokens), counters,
                                   recorder);
    }

    ModelOutput forward_from_tokens(Graph& g, Var tokens, CostCounters* counters = nullptr,
                                    AttnRecorder* recorder = nullptr) const {
        switch (cfg_.variant) {
            case Variant::dflat:
                return dflat_forward(g, tokens, counters, recorder);
            case Variant::naive:
                return naive_forward(g, tokens, counters, recorder);
            case Variant::bilinear:
                return bilinear_forward(g, tokens);
        }
        throw StateError("unreachable variant");
    }

    // Fresh initial state for one transformer: Z_0 = 0.
    static Tensor initial_state(std::size_t n_q, std::size_t d) { return Tensor({n_q, d}); }

private:
    ModelOutput dflat_forward(Graph& g, Var tokens, CostCounters* counters,
                              AttnRecorder* recorder) const {
        AttnContext ctx{g, cfg_.attn, counters, recorder};
        SeqVars row_seq{tokens, g.input(row_key_pos_), cfg_.h, cfg_.w, Orientation::row};
        SeqVars col_seq{g.gather_rows(tokens, flatten_order(Orientation::column, cfg_.h, cfg_.w)),
                        g.input(col_key_pos_), cfg_.h, cfg_.w, Orientation::column};
        auto [z_r, z_c] = dflat_decoder(ctx, row_seq, col_seq, g.param("queries.row"),
                                        g.param("queries.col"), cfg_.H, cfg_.W);
        ModelOutput out;
        out.s = g.outer_sum(z_r, z_c);  // S_ij = Z_r[i] + Z_c[j]
        out.logits = classify(g, out.s);
        out.z_r = z_r;
        out.z_c = z_c;
        out.has_row_col = true;
        return out;
    }

    ModelOutput naive_forward(Graph& g, Var tokens, CostCounters* counters,
                              AttnRecorder* recorder) const {
        AttnContext ctx{g, cfg_.attn, counters, recorder};
        SeqVars seq{tokens, g.input(naive_key_pos_), cfg_.h, cfg_.w, Orientation::row};
        ModelOutput out;
        out.s = naive_decoder(ctx, seq, g.param("queries.dense"), cfg_.H * cfg_.W);
        out.logits = classify(g, out.s);
        return out;
    }

    ModelOutput bilinear_forward(Graph& g, Var tokens) const {
        ModelOutput out;
        out.s = g.bilinear_rows(tokens, cfg_.h, cfg_.w, cfg_.H, cfg_.W);
        out.logits = classify(g, out.s);
        return out;
    }

    ModelConfig cfg_;
    ParameterStore store_;
    Tensor row_base_, col_base_;
    Tensor row_key_pos_, col_key_pos_;
    Tensor row_query_codes_, col_query_codes_;
    Tensor naive_key_pos_;
};

// Endpoint-aligned bilinear upsampling of a feature map, value-level (the tape
// op bilinear_rows is the differentiable twin).
inline Tensor bilinear_upsample(const FeatureMap& map, std::size_t H, std::size_t W) {
    ParameterStore dummy(0);
    Graph g(dummy);
    Var v = g.bilinear_rows(g.input(flatten(map, Orientation::row).tokens), map.h, map.w, H, W);
    return g.value(v).reshaped({H, W, map.d});
}

}  // namespace dflat
