#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

// Serializing an h x w x d map twice -- row-major and column-major -- so row
// and column queries attend over sequences that keep whole rows (columns)
// contiguous. Token index mapping:
//   row:    t -> cell (t / w, t % w)
//   column: t -> cell (t % h, t / h)

enum class Orientation { row, column };

inline const char* orientation_name(Orientation o) {
    return o == Orientation::row ? "row" : "column";
}

struct FeatureMap {
    std::size_t h = 0, w = 0, d = 0;
    Tensor values;  // [h x w x d]

    FeatureMap(std::size_t h_, std::size_t w_, std::size_t d_)
        : h(h_), w(w_), d(d_), values({h_, w_, d_}) {
        validate();
    }

    explicit FeatureMap(Tensor t) : values(std::move(t)) {
        if (values.rank() != 3) {
            throw ShapeError("feature map: want rank 3, got " + values.shape_str());
        }
        h = values.dim(0);
        w = values.dim(1);
        d = values.dim(2);
        validate();
    }

    void validate() const {
        if (h < 1 || w < 1) {
            throw ConfigError("feature map: extents must be >= 1");
        }
        if (d < 2 || d % 2 != 0) {
            throw ConfigError("feature map: channel count must be even and >= 2, got " +
                              std::to_string(d));
        }
    }
};

struct FlattenedSequence {
    Orientation orientation = Orientation::row;
    Tensor tokens;  // [hw x d]
    Tensor pos;     // [hw x d], constant per source row (column)
    std::size_t h = 0, w = 0;
};

// Source cell of token t under an orientation.
inline std::pair<std::size_t, std::size_t> token_cell(Orientation o, std::size_t t,
                                                      std::size_t h, std::size_t w) {
    if (o == Orientation::row) {
        return {t / w, t % w};
    }
    return {t % h, t / h};
}

// Row-major index of token t in the [hw x d] token matrix derived from the map.
inline std::size_t token_source_row(Orientation o, std::size_t t, std::size_t h, std::size_t w) {
    const auto [i, j] = token_cell(o, t, h, w);
    return i * w + j;
}

// ---------------------------------------------------------------------------
// Positional encodings (sinusoid base, query interpolation, key replication)
// ---------------------------------------------------------------------------

// Classic sinusoid table: entry (p, 2k) = sin(p / 10000^(2k/d)),
// (p, 2k+1) = cos(same argument).
inline Tensor sinusoid_base(std::size_t n, std::size_t d) {
    if (d < 2 || d % 2 != 0) {
        throw ConfigError("sinusoid_base: channel count must be even and >= 2, got " +
                          std::to_string(d));
    }
    Tensor out({n, d});
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t k = 0; 2 * k < d; ++k) {
            const double freq =
                std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d));
            const double arg = static_cast<double>(p) * freq;
            out.at(p, 2 * k) = std::sin(arg);
            out.at(p, 2 * k + 1) = std::cos(arg);
        }
    }
    return out;
}

// Endpoint-aligned linear upsampling of the code table: output row i samples
// source coordinate i*(n-1)/(N-1). Rows 0 and N-1 reproduce the base endpoints
// exactly.
inline Tensor interpolate_codes(const Tensor& base, std::size_t target_len) {
    if (base.rank() != 2) {
        throw ShapeError("interpolate_codes: want rank 2, got " + base.shape_str());
    }
    const std::size_t n = base.rows(), d = base.cols();
    if (target_len < n) {
        throw ConfigError("interpolate_codes: target length " + std::to_string(target_len) +
                          " below base length " + std::to_string(n));
    }
    Tensor out({target_len, d});
    for (std::size_t i = 0; i < target_len; ++i) {
        if (n == 1 || target_len == 1) {
            for (std::size_t j = 0; j < d; ++j) {
                out.at(i, j) = base.at(0, j);
            }
            continue;
        }
        if (i == 0 || i == target_len - 1) {
            const std::size_t src = i == 0 ? 0 : n - 1;
            for (std::size_t j = 0; j < d; ++j) {
                out.at(i, j) = base.at(src, j);
            }
            continue;
        }
        const double x = static_cast<double>(i) * static_cast<double>(n - 1) /
                         static_cast<double>(target_len - 1);
        const std::size_t i0 = std::min(static_cast<std::size_t>(x), n - 2);
        const double f = x - static_cast<double>(i0);
        for (std::size_t j = 0; j < d; ++j) {
            out.at(i, j) = (1.0 - f) * base.at(i0, j) + f * base.at(i0 + 1, j);
        }
    }
    return out;
}

// Each base row repeated `reps` times consecutively. In row orientation the
// base has h rows and reps = w (key token t gets base row t/w); in column
// orientation the base has w rows and reps = h (token t gets base row t/h),
// so each flattened row (column) carries one constant code.
inline Tensor replicate_codes(const Tensor& base, std::size_t reps) {
    if (base.rank() != 2 || reps == 0) {
        throw ShapeError("replicate_codes: base " + base.shape_str() + ", reps " +
                         std::to_string(reps));
    }
    const std::size_t n = base.rows(), d = base.cols();
    Tensor out({n * reps, d});
    for (std::size_t t = 0; t < n * reps; ++t) {
        const std::size_t src = t / reps;
        for (std::size_t j = 0; j < d; ++j) {
            out.at(t, j) = base.at(src, j);
        }
    }
    return out;
}

struct PositionalCodes {
    Tensor base;         // [h x d] (row) or [w x d] (column)
    Tensor query_codes;  // [H x d] (row) or [W x d] (column)
    Tensor key_codes;    // [hw x d]
};

inline PositionalCodes make_positional_codes(Orientation o, std::size_t h, std::size_t w,
                                             std::size_t d, std::size_t target_len) {
    const std::size_t along = o == Orientation::row ? h : w;
    const std::size_t reps = o == Orientation::row ? w : h;
    PositionalCodes codes;
    codes.base = sinusoid_base(along, d);
    codes.query_codes = interpolate_codes(codes.base, target_len);
    codes.key_codes = replicate_codes(codes.base, reps);
    return codes;
}

// ---------------------------------------------------------------------------
// Flatten / unflatten
// ---------------------------------------------------------------------------

inline FlattenedSequence flatten(const FeatureMap& map, Orientation o) {
    const std::size_t h = map.h, w = map.w, d = map.d;
    FlattenedSequence seq;
    seq.orientation = o;
    seq.h = h;
    seq.w = w;
    seq.tokens = Tensor({h * w, d});
    for (std::size_t t = 0; t < h * w; ++t) {
        const auto [i, j] = token_cell(o, t, h, w);
        for (std::size_t c = 0; c < d; ++c) {
            seq.tokens.at(t, c) = map.values.at(i, j, c);
        }
    }
    const std::size_t along = o == Orientation::row ? h : w;
    const std::size_t reps = o == Orientation::row ? w : h;
    seq.pos = replicate_codes(sinusoid_base(along, d), reps);
    return seq;
}

inline FeatureMap unflatten(const FlattenedSequence& seq, std::size_t d) {
    FeatureMap map(seq.h, seq.w, d);
    for (std::size_t t = 0; t < seq.h * seq.w; ++t) {
        const auto [i, j] = token_cell(seq.orientation, t, seq.h, seq.w);
        for (std::size_t c = 0; c < d; ++c) {
            map.values.at(i, j, c) = seq.tokens.at(t, c);
        }
    }
    return map;
}

// Token permutation that turns the row-major token matrix into the flattened
// order for an orientation (identity for rows).
inline std::vector<std::size_t> flatten_order(Orientation o, std::size_t h, std::size_t w) {
    std::vector<std::size_t> order(h * w);
    for (std::size_t t = 0; t < h * w; ++t) {
        order[t] = token_source_row(o, t, h, w);
    }
    return order;
}

}  // namespace dflat
