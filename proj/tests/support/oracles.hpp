#pragma once

// Scalar-loop transcriptions of the layer equations, kept deliberately
// independent of the tape implementation: plain loops, no shared matmul or
// softmax code. Tests compare the vectorized path against these.

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dflat/flatten.hpp"
#include "dflat/store.hpp"
#include "dflat/tensor.hpp"

namespace oracle {

using dflat::FeatureMap;
using dflat::ParameterStore;
using dflat::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
    double mx = x[0];
    for (double v : x) {
        mx = std::max(mx, v);
    }
    double sum = 0.0;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
    Tensor out({x.rows(), x.cols()});
    const double dn = static_cast<double>(x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            mean += x.at(i, j);
        }
        mean /= dn;
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        }
        var /= dn;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out.at(i, j) = (x.at(i, j) - mean) * inv * gain[j] + bias[j];
        }
    }
    return out;
}

// Residual-free single-head attention increment:
//   SoftMax( (q_in W_q) (k_in W_k)^T / sqrt(d_m) ) (v_src W_v)
inline Tensor head_increment(const Tensor& q_in, const Tensor& k_in, const Tensor& v_src,
                            const Tensor& wq, const Tensor& wk, const Tensor& wv) {
    const Tensor q = matmul(q_in, wq);
    const Tensor k = matmul(k_in, wk);
    const Tensor v = matmul(v_src, wv);
    const std::size_t dm = wq.cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(dm));
    Tensor out({q.rows(), dm});
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::vector<double> scores(k.rows());
        for (std::size_t t = 0; t < k.rows(); ++t) {
            double dot = 0.0;
            for (std::size_t m = 0; m < dm; ++m) {
                dot += q.at(i, m) * k.at(t, m);
            }
            scores[t] = dot * inv;
        }
        const std::vector<double> a = softmax(scores);
        for (std::size_t m = 0; m < dm; ++m) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k.rows(); ++t) {
                acc += a[t] * v.at(t, m);
            }
            out.at(i, m) = acc;
        }
    }
    return out;
}

// Multi-head attention with the residual inside each head (the head owns its
// channel slice of z_prev), concatenated and projected by W^O.
inline Tensor multi_head(const Tensor& z_prev, const Tensor& z_q, const Tensor& tokens,
                         const Tensor& pos, const std::vector<std::array<Tensor, 3>>& heads,
                         const Tensor& wo) {
    const std::size_t n_q = z_prev.rows(), d = z_prev.cols();
    const std::size_t n_h = heads.size();
    const std::size_t dm = d / n_h;
    Tensor q_in({n_q, d});
    for (std::size_t i = 0; i < n_q; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            q_in.at(i, j) = z_prev.at(i, j) + z_q.at(i, j);
        }
    }
    Tensor k_in({tokens.rows(), d});
    for (std::size_t i = 0; i < tokens.rows(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            k_in.at(i, j) = tokens.at(i, j) + pos.at(i, j);
        }
    }
    Tensor concat({n_q, n_h * dm});
    for (std::size_t hidx = 0; hidx < n_h; ++hidx) {
        const Tensor inc = head_increment(q_in, k_in, tokens, heads[hidx][0], heads[hidx][1],
                                         heads[hidx][2]);
        for (std::size_t i = 0; i < n_q; ++i) {
            for (std::size_t m = 0; m < dm; ++m) {
                concat.at(i, hidx * dm + m) = z_prev.at(i, hidx * dm + m) + inc.at(i, m);
            }
        }
    }
    return matmul(concat, wo);
}

// Interactive attention, one direction: SoftMax(a b^T / sqrt(d)) b + a.
inline Tensor cross_direction(const Tensor& a, const Tensor& b) {
    const std::size_t d = a.cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out({a.rows(), d});
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::vector<double> scores(b.rows());
        for (std::size_t j = 0; j < b.rows(); ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                dot += a.at(i, k) * b.at(j, k);
            }
            scores[j] = dot * inv;
        }
        const std::vector<double> w = softmax(scores);
        for (std::size_t k = 0; k < d; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < b.rows(); ++j) {
                acc += w[j] * b.at(j, k);
            }
            out.at(i, k) = acc + a.at(i, k);
        }
    }
    return out;
}

inline std::pair<Tensor, Tensor> interact(const Tensor& o_r, const Tensor& o_c) {
    return {cross_direction(o_r, o_c), cross_direction(o_c, o_r)};
}

// One full transformer sublayer: multi-head attention, post-norm, FFN with
// residual, post-norm. Weights read from the store by the layer prefix.
inline Tensor layer(const Tensor& z_prev, const Tensor& z_q, const Tensor& tokens,
                    const Tensor& pos, const ParameterStore& store, const std::string& prefix,
                    std::size_t n_h) {
    std::vector<std::array<Tensor, 3>> heads;
    for (std::size_t k = 0; k < n_h; ++k) {
        const std::string hp = prefix + ".h" + std::to_string(k);
        heads.push_back({store.value(hp + ".wq"), store.value(hp + ".wk"),
                         store.value(hp + ".wv")});
    }
    const Tensor attn =
        multi_head(z_prev, z_q, tokens, pos, heads, store.value(prefix + ".wo"));
    const Tensor a =
        layer_norm(attn, store.value(prefix + ".ln1.gain"), store.value(prefix + ".ln1.bias"));
    // FFN: a + W2 relu(W1 a + b1) + b2
    const Tensor& w1 = store.value(prefix + ".ffn.w1");
    const Tensor& b1 = store.value(prefix + ".ffn.b1");
    const Tensor& w2 = store.value(prefix + ".ffn.w2");
    const Tensor& b2 = store.value(prefix + ".ffn.b2");
    Tensor hmid = matmul(a, w1);
    for (std::size_t i = 0; i < hmid.rows(); ++i) {
        for (std::size_t j = 0; j < hmid.cols(); ++j) {
            hmid.at(i, j) = std::max(0.0, hmid.at(i, j) + b1[j]);
        }
    }
    Tensor ffn_out = matmul(hmid, w2);
    for (std::size_t i = 0; i < ffn_out.rows(); ++i) {
        for (std::size_t j = 0; j < ffn_out.cols(); ++j) {
            ffn_out.at(i, j) += b2[j] + a.at(i, j);
        }
    }
    return layer_norm(ffn_out, store.value(prefix + ".ln2.gain"),
                      store.value(prefix + ".ln2.bias"));
}

// Decoder pipeline from a feature map to the dense [H*W x d] output: dual
// flattening, positional codes, L layers on each path, interactive exchange,
// final composition S_ij = Z_r[i] + Z_c[j]. Everything evaluated with loops.
inline Tensor end_to_end(const FeatureMap& so, const ParameterStore& store, std::size_t H,
                         std::size_t W, std::size_t n_h, std::size_t L, bool interactive) {
    const std::size_t h = so.h, w = so.w, d = so.d;
    Tensor r_tokens({h * w, d});
    Tensor c_tokens({h * w, d});
    for (std::size_t t = 0; t < h * w; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            r_tokens.at(t, c) = so.values.at(t / w, t % w, c);
            c_tokens.at(t, c) = so.values.at(t % h, t / h, c);
        }
    }
    const Tensor base_r = dflat::sinusoid_base(h, d);
    const Tensor base_c = dflat::sinusoid_base(w, d);
    Tensor pos_r({h * w, d});
    Tensor pos_c({h * w, d});
    for (std::size_t t = 0; t < h * w; ++t) {
        for (std::size_t c = 0; c < d; ++c) {
            pos_r.at(t, c) = base_r.at(t / w, c);
            pos_c.at(t, c) = base_c.at(t / h, c);
        }
    }
    Tensor z_r({H, d});
    Tensor z_c({W, d});
    const Tensor& q_r = store.value("queries.row");
    const Tensor& q_c = store.value("queries.col");
    for (std::size_t l = 0; l < L; ++l) {
        const Tensor o_r =
            layer(z_r, q_r, r_tokens, pos_r, store, "row.l" + std::to_string(l), n_h);
        const Tensor o_c =
            layer(z_c, q_c, c_tokens, pos_c, store, "col.l" + std::to_string(l), n_h);
        if (interactive) {
            auto [zr, zc] = interact(o_r, o_c);
            z_r = zr;
            z_c = zc;
        } else {
            z_r = o_r;
            z_c = o_c;
        }
    }
    Tensor s({H * W, d});
    for (std::size_t i = 0; i < H; ++i) {
        for (std::size_t j = 0; j < W; ++j) {
            for (std::size_t c = 0; c < d; ++c) {
                s.at(i * W + j, c) = z_r.at(i, c) + z_c.at(j, c);
            }
        }
    }
    return s;
}

// Shared helpers for randomized tests.
inline Tensor random_tensor(dflat::Rng& rng, std::vector<std::size_t> dims, double scale = 1.0) {
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal(0.0, scale);
    }
    return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

}  // namespace oracle
