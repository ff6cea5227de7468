#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/store.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

// Reverse-mode differentiation over a recorded operation tape. Each public op
// appends a node holding its output value and a closure that scatters the
// output gradient back to the inputs. Node order is topological by
// construction, so backward() is a single reverse sweep.
//
// A Graph borrows one ParameterStore; param() leafs route their gradients into
// the store's buffers at the end of backward().

struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

class Graph {
public:
    explicit Graph(ParameterStore& store) : store_(&store) {}

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    const Tensor& grad_of(Var v) const { return nodes_[v.id].grad; }
    std::size_t size() const { return nodes_.size(); }

    // ---- leafs ------------------------------------------------------------

    Var input(Tensor t) { return push(std::move(t), {}, nullptr); }

    Var param(const std::string& name) {
        auto it = param_cache_.find(name);
        if (it != param_cache_.end()) {
            return it->second;
        }
        Var v = push(store_->value(name), {}, nullptr);
        nodes_[v.id].param_name = name;
        param_cache_[name] = v;
        return v;
    }

    // ---- arithmetic --------------------------------------------------------

    Var add(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_dims(tb)) {
            throw ShapeError("add: " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += tb[i];
        }
        return push(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            g.accumulate(n.parents[0], n.grad);
            g.accumulate(n.parents[1], n.grad);
        });
    }

    Var sub(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_dims(tb)) {
            throw ShapeError("sub: " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] -= tb[i];
        }
        return push(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            g.accumulate(n.parents[0], n.grad);
            Tensor neg = n.grad;
            for (std::size_t i = 0; i < neg.size(); ++i) {
                neg[i] = -neg[i];
            }
            g.accumulate(n.parents[1], neg);
        });
    }

    Var mul(Var a, Var b) {  // elementwise
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (!ta.same_dims(tb)) {
            throw ShapeError("mul: " + ta.shape_str() + " vs " + tb.shape_str());
        }
        Tensor out = ta;
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] *= tb[i];
        }
        return push(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            const Tensor& ta = g.val(n.parents[0]);
            const Tensor& tb = g.val(n.parents[1]);
            Tensor da = n.grad;
            Tensor db = n.grad;
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] = n.grad[i] * tb[i];
                db[i] = n.grad[i] * ta[i];
            }
            g.accumulate(n.parents[0], da);
            g.accumulate(n.parents[1], db);
        });
    }

    Var scale(Var a, double c) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] *= c;
        }
        return push(std::move(out), {a}, [c](Graph& g, const Node& n) {
            Tensor da = n.grad;
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] *= c;
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // x [m x n] + row vector v [n], broadcast over rows.
    Var add_rowvec(Var a, Var v) {
        const Tensor& ta = val(a);
        const Tensor& tv = val(v);
        if (ta.rank() != 2 || tv.rank() != 1 || tv.dim(0) != ta.cols()) {
            throw ShapeError("add_rowvec: " + ta.shape_str() + " + " + tv.shape_str());
        }
        Tensor out = ta;
        const std::size_t m = ta.rows(), n = ta.cols();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                out.at(i, j) += tv[j];
            }
        }
        return push(std::move(out), {a, v}, [](Graph& g, const Node& n_) {
            g.accumulate(n_.parents[0], n_.grad);
            const std::size_t m = n_.grad.rows(), n = n_.grad.cols();
            Tensor dv({n});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    dv[j] += n_.grad.at(i, j);
                }
            }
            g.accumulate(n_.parents[1], dv);
        });
    }

    // ---- linear algebra ----------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
            throw ShapeError("matmul: inner dims disagree, " + ta.shape_str() + " x " +
                             tb.shape_str());
        }
        Tensor out = matmul_values(ta, tb);
        return push(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            const Tensor& ta = g.val(n.parents[0]);
            const Tensor& tb = g.val(n.parents[1]);
            // dA = dC * B^T ; dB = A^T * dC
            g.accumulate(n.parents[0], matmul_nt(n.grad, tb));
            g.accumulate(n.parents[1], matmul_tn(ta, n.grad));
        });
    }

    Var transpose(Var a) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) {
            throw ShapeError("transpose: want rank 2, got " + ta.shape_str());
        }
        Tensor out({ta.cols(), ta.rows()});
        for (std::size_t i = 0; i < ta.rows(); ++i) {
            for (std::size_t j = 0; j < ta.cols(); ++j) {
                out.at(j, i) = ta.at(i, j);
            }
        }
        return push(std::move(out), {a}, [](Graph& g, const Node& n) {
            Tensor da({n.grad.cols(), n.grad.rows()});
            for (std::size_t i = 0; i < n.grad.rows(); ++i) {
                for (std::size_t j = 0; j < n.grad.cols(); ++j) {
                    da.at(j, i) = n.grad.at(i, j);
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // ---- shape plumbing ----------------------------------------------------

    Var concat_cols(const std::vector<Var>& parts) {
        if (parts.empty()) {
            throw ShapeError("concat_cols: empty");
        }
        const std::size_t m = val(parts[0]).rows();
        std::size_t total = 0;
        for (Var p : parts) {
            if (val(p).rank() != 2 || val(p).rows() != m) {
                throw ShapeError("concat_cols: row counts disagree");
            }
            total += val(p).cols();
        }
        Tensor out({m, total});
        std::size_t off = 0;
        std::vector<std::size_t> widths;
        for (Var p : parts) {
            const Tensor& t = val(p);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < t.cols(); ++j) {
                    out.at(i, off + j) = t.at(i, j);
                }
            }
            widths.push_back(t.cols());
            off += t.cols();
        }
        return push(std::move(out), parts, [widths](Graph& g, const Node& n) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.parents.size(); ++k) {
                Tensor dp({n.grad.rows(), widths[k]});
                for (std::size_t i = 0; i < n.grad.rows(); ++i) {
                    for (std::size_t j = 0; j < widths[k]; ++j) {
                        dp.at(i, j) = n.grad.at(i, off + j);
                    }
                }
                g.accumulate(n.parents[k], dp);
                off += widths[k];
            }
        });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        if (parts.empty()) {
            throw ShapeError("concat_rows: empty");
        }
        const std::size_t c = val(parts[0]).cols();
        std::size_t total = 0;
        for (Var p : parts) {
            if (val(p).rank() != 2 || val(p).cols() != c) {
                throw ShapeError("concat_rows: col counts disagree");
            }
            total += val(p).rows();
        }
        Tensor out({total, c});
        std::size_t off = 0;
        std::vector<std::size_t> heights;
        for (Var p : parts) {
            const Tensor& t = val(p);
            for (std::size_t i = 0; i < t.rows(); ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    out.at(off + i, j) = t.at(i, j);
                }
            }
            heights.push_back(t.rows());
            off += t.rows();
        }
        return push(std::move(out), parts, [heights](Graph& g, const Node& n) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < n.parents.size(); ++k) {
                Tensor dp({heights[k], n.grad.cols()});
                for (std::size_t i = 0; i < heights[k]; ++i) {
                    for (std::size_t j = 0; j < n.grad.cols(); ++j) {
                        dp.at(i, j) = n.grad.at(off + i, j);
                    }
                }
                g.accumulate(n.parents[k], dp);
                off += heights[k];
            }
        });
    }

    Var slice_rows(Var a, std::size_t start, std::size_t len) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2 || start + len > ta.rows()) {
            throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" +
                             std::to_string(len) + ") out of " + ta.shape_str());
        }
        Tensor out({len, ta.cols()});
        for (std::size_t i = 0; i < len; ++i) {
            for (std::size_t j = 0; j < ta.cols(); ++j) {
                out.at(i, j) = ta.at(start + i, j);
            }
        }
        return push(std::move(out), {a}, [start](Graph& g, const Node& n) {
            Tensor da(g.val(n.parents[0]).dims());
            for (std::size_t i = 0; i < n.grad.rows(); ++i) {
                for (std::size_t j = 0; j < n.grad.cols(); ++j) {
                    da.at(start + i, j) = n.grad.at(i, j);
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // Row gather: out[i] = a[index[i]]. Backward scatter-adds.
    Var gather_rows(Var a, std::vector<std::size_t> index) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) {
            throw ShapeError("gather_rows: want rank 2, got " + ta.shape_str());
        }
        Tensor out({index.size(), ta.cols()});
        for (std::size_t i = 0; i < index.size(); ++i) {
            if (index[i] >= ta.rows()) {
                throw ShapeError("gather_rows: index out of range");
            }
            for (std::size_t j = 0; j < ta.cols(); ++j) {
                out.at(i, j) = ta.at(index[i], j);
            }
        }
        return push(std::move(out), {a}, [index](Graph& g, const Node& n) {
            Tensor da(g.val(n.parents[0]).dims());
            for (std::size_t i = 0; i < index.size(); ++i) {
                for (std::size_t j = 0; j < n.grad.cols(); ++j) {
                    da.at(index[i], j) += n.grad.at(i, j);
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // Mean over row segments: out[s] = mean of rows [start_s, start_s + len_s).
    Var segment_mean_rows(Var a, std::vector<std::pair<std::size_t, std::size_t>> segments) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) {
            throw ShapeError("segment_mean_rows: want rank 2, got " + ta.shape_str());
        }
        Tensor out({segments.size(), ta.cols()});
        for (std::size_t s = 0; s < segments.size(); ++s) {
            const auto [start, len] = segments[s];
            if (len == 0 || start + len > ta.rows()) {
                throw ShapeError("segment_mean_rows: bad segment");
            }
            for (std::size_t j = 0; j < ta.cols(); ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < len; ++i) {
                    acc += ta.at(start + i, j);
                }
                out.at(s, j) = acc / static_cast<double>(len);
            }
        }
        return push(std::move(out), {a}, [segments](Graph& g, const Node& n) {
            Tensor da(g.val(n.parents[0]).dims());
            for (std::size_t s = 0; s < segments.size(); ++s) {
                const auto [start, len] = segments[s];
                const double inv = 1.0 / static_cast<double>(len);
                for (std::size_t i = 0; i < len; ++i) {
                    for (std::size_t j = 0; j < n.grad.cols(); ++j) {
                        da.at(start + i, j) += n.grad.at(s, j) * inv;
                    }
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // out[i*n + j] = a[i] + b[j], the dense composition S_ij = Z_r[i] + Z_c[j]
    // on row-major flattened pixels.
    Var outer_sum(Var a, Var b) {
        const Tensor& ta = val(a);
        const Tensor& tb = val(b);
        if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols()) {
            throw ShapeError("outer_sum: " + ta.shape_str() + " vs " + tb.shape_str());
        }
        const std::size_t m = ta.rows(), n = tb.rows(), d = ta.cols();
        Tensor out({m * n, d});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t k = 0; k < d; ++k) {
                    out.at(i * n + j, k) = ta.at(i, k) + tb.at(j, k);
                }
            }
        }
        return push(std::move(out), {a, b}, [m, n, d](Graph& g, const Node& node) {
            Tensor da({m, d});
            Tensor db({n, d});
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    for (std::size_t k = 0; k < d; ++k) {
                        const double gv = node.grad.at(i * n + j, k);
                        da.at(i, k) += gv;
                        db.at(j, k) += gv;
                    }
                }
            }
            g.accumulate(node.parents[0], da);
            g.accumulate(node.parents[1], db);
        });
    }

    // ---- nonlinearities ----------------------------------------------------

    Var relu(Var a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = out[i] > 0.0 ? out[i] : 0.0;
        }
        return push(std::move(out), {a}, [](Graph& g, const Node& n) {
            const Tensor& x = g.val(n.parents[0]);
            Tensor da = n.grad;
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] = x[i] > 0.0 ? n.grad[i] : 0.0;
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // Row-wise softmax with max subtraction. Rows sum to 1 within 1e-12 and the
    // result is invariant to adding a constant per row.
    Var softmax_rows(Var a) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2) {
            throw ShapeError("softmax_rows: want rank 2, got " + ta.shape_str());
        }
        Tensor out = softmax_rows_values(ta);
        return push(std::move(out), {a}, [](Graph& g, const Node& n) {
            const Tensor& y = n.value;
            Tensor da = n.grad;
            for (std::size_t i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    dot += n.grad.at(i, j) * y.at(i, j);
                }
                for (std::size_t j = 0; j < y.cols(); ++j) {
                    da.at(i, j) = (n.grad.at(i, j) - dot) * y.at(i, j);
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // Per-row standardization followed by a learned affine map. Epsilon 1e-5.
    Var layer_norm(Var x, Var gain, Var bias) {
        const Tensor& tx = val(x);
        const Tensor& tg = val(gain);
        const Tensor& tb = val(bias);
        if (tx.rank() != 2 || tg.rank() != 1 || tb.rank() != 1 || tg.dim(0) != tx.cols() ||
            tb.dim(0) != tx.cols()) {
            throw ShapeError("layer_norm: x " + tx.shape_str() + ", gain " + tg.shape_str() +
                             ", bias " + tb.shape_str());
        }
        const std::size_t m = tx.rows(), d = tx.cols();
        Tensor out({m, d});
        for (std::size_t i = 0; i < m; ++i) {
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                mean += tx.at(i, j);
            }
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double c = tx.at(i, j) - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + layer_norm_eps);
            for (std::size_t j = 0; j < d; ++j) {
                out.at(i, j) = (tx.at(i, j) - mean) * inv * tg[j] + tb[j];
            }
        }
        return push(std::move(out), {x, gain, bias}, [](Graph& g, const Node& n) {
            const Tensor& tx = g.val(n.parents[0]);
            const Tensor& tg = g.val(n.parents[1]);
            const std::size_t m = tx.rows(), d = tx.cols();
            const double dn = static_cast<double>(d);
            Tensor dx({m, d});
            Tensor dgain({d});
            Tensor dbias({d});
            for (std::size_t i = 0; i < m; ++i) {
                double mean = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    mean += tx.at(i, j);
                }
                mean /= dn;
                double var = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = tx.at(i, j) - mean;
                    var += c * c;
                }
                var /= dn;
                const double inv = 1.0 / std::sqrt(var + layer_norm_eps);
                // y_j = (x_j - mean) * inv ; out_j = y_j * g_j + b_j
                double sum_dy = 0.0;
                double sum_dy_y = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double y = (tx.at(i, j) - mean) * inv;
                    const double dy = n.grad.at(i, j) * tg[j];
                    dgain[j] += n.grad.at(i, j) * y;
                    dbias[j] += n.grad.at(i, j);
                    sum_dy += dy;
                    sum_dy_y += dy * y;
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const double y = (tx.at(i, j) - mean) * inv;
                    const double dy = n.grad.at(i, j) * tg[j];
                    dx.at(i, j) = inv * (dy - sum_dy / dn - y * sum_dy_y / dn);
                }
            }
            g.accumulate(n.parents[0], dx);
            g.accumulate(n.parents[1], dgain);
            g.accumulate(n.parents[2], dbias);
        });
    }

    // Endpoint-aligned bilinear upsampling of a row-major token matrix
    // [h*w x d] -> [H*W x d]. Same interpolation convention as the positional
    // code upsampling.
    Var bilinear_rows(Var a, std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
        const Tensor& ta = val(a);
        if (ta.rank() != 2 || ta.rows() != h * w) {
            throw ShapeError("bilinear_rows: token matrix " + ta.shape_str() +
                             " does not cover " + std::to_string(h) + "x" + std::to_string(w));
        }
        if (H < h || W < w) {
            throw ConfigError("bilinear_rows: target smaller than source");
        }
        const std::size_t d = ta.cols();
        struct Tap {
            std::size_t src;
            double weight;
        };
        // Four taps per output pixel (degenerate taps carry weight 0).
        std::vector<std::array<Tap, 4>> taps(H * W);
        for (std::size_t i = 0; i < H; ++i) {
            const double sy = (H > 1 && h > 1)
                                  ? static_cast<double>(i) * static_cast<double>(h - 1) /
                                        static_cast<double>(H - 1)
                                  : 0.0;
            const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
            const std::size_t y1 = std::min(y0 + 1, h - 1);
            const double fy = sy - static_cast<double>(y0);
            for (std::size_t j = 0; j < W; ++j) {
                const double sx = (W > 1 && w > 1)
                                      ? static_cast<double>(j) * static_cast<double>(w - 1) /
                                            static_cast<double>(W - 1)
                                      : 0.0;
                const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
                const std::size_t x1 = std::min(x0 + 1, w - 1);
                const double fx = sx - static_cast<double>(x0);
                taps[i * W + j] = {Tap{y0 * w + x0, (1 - fy) * (1 - fx)},
                                   Tap{y0 * w + x1, (1 - fy) * fx},
                                   Tap{y1 * w + x0, fy * (1 - fx)},
                                   Tap{y1 * w + x1, fy * fx}};
            }
        }
        Tensor out({H * W, d});
        for (std::size_t p = 0; p < H * W; ++p) {
            for (const Tap& t : taps[p]) {
                if (t.weight == 0.0) {
                    continue;
                }
                for (std::size_t k = 0; k < d; ++k) {
                    out.at(p, k) += t.weight * ta.at(t.src, k);
                }
            }
        }
        return push(std::move(out), {a}, [taps, d](Graph& g, const Node& n) {
            Tensor da(g.val(n.parents[0]).dims());
            for (std::size_t p = 0; p < n.grad.rows(); ++p) {
                for (const Tap& t : taps[p]) {
                    if (t.weight == 0.0) {
                        continue;
                    }
                    for (std::size_t k = 0; k < d; ++k) {
                        da.at(t.src, k) += t.weight * n.grad.at(p, k);
                    }
                }
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // ---- reductions / losses -----------------------------------------------

    Var sum_all(Var a) {
        const Tensor& ta = val(a);
        double acc = 0.0;
        for (std::size_t i = 0; i < ta.size(); ++i) {
            acc += ta[i];
        }
        Tensor out({1});
        out[0] = acc;
        return push(std::move(out), {a}, [](Graph& g, const Node& n) {
            Tensor da(g.val(n.parents[0]).dims());
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] = n.grad[0];
            }
            g.accumulate(n.parents[0], da);
        });
    }

    // Mean over rows of -log softmax(logits)[label]. Stable via max
    // subtraction; gradient is (softmax - onehot) / rows.
    Var cross_entropy_mean(Var logits, std::vector<std::size_t> labels) {
        const Tensor& tl = val(logits);
        if (tl.rank() != 2 || labels.size() != tl.rows()) {
            throw ShapeError("cross_entropy_mean: logits " + tl.shape_str() + " vs " +
                             std::to_string(labels.size()) + " labels");
        }
        const std::size_t m = tl.rows(), c = tl.cols();
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (labels[i] >= c) {
                throw ShapeError("cross_entropy_mean: label out of range");
            }
            double mx = tl.at(i, 0);
            for (std::size_t j = 1; j < c; ++j) {
                mx = std::max(mx, tl.at(i, j));
            }
            double se = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                se += std::exp(tl.at(i, j) - mx);
            }
            acc += std::log(se) - (tl.at(i, labels[i]) - mx);
        }
        Tensor out({1});
        out[0] = acc / static_cast<double>(m);
        return push(std::move(out), {logits}, [labels](Graph& g, const Node& n) {
            const Tensor& tl = g.val(n.parents[0]);
            const std::size_t m = tl.rows(), c = tl.cols();
            Tensor dl({m, c});
            const double scale = n.grad[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i) {
                double mx = tl.at(i, 0);
                for (std::size_t j = 1; j < c; ++j) {
                    mx = std::max(mx, tl.at(i, j));
                }
                double se = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    se += std::exp(tl.at(i, j) - mx);
                }
                for (std::size_t j = 0; j < c; ++j) {
                    const double p = std::exp(tl.at(i, j) - mx) / se;
                    dl.at(i, j) = scale * (p - (j == labels[i] ? 1.0 : 0.0));
                }
            }
            g.accumulate(n.parents[0], dl);
        });
    }

    // ---- backward -----------------------------------------------------------

    // Reverse sweep from a scalar loss. Parameter gradients are accumulated
    // into the store, so zero_grad() + backward() is repeatable with identical
    // results on the same graph.
    void backward(Var loss) {
        if (nodes_.empty() || loss.id >= nodes_.size()) {
            throw StateError("backward: no recorded computation for this loss");
        }
        if (nodes_[loss.id].value.size() != 1) {
            throw StateError("backward: loss must be scalar, got " +
                             nodes_[loss.id].value.shape_str());
        }
        for (auto& n : nodes_) {
            n.grad = Tensor(n.value.dims());
        }
        nodes_[loss.id].grad[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            const Node& n = nodes_[i];
            if (n.backward) {
                n.backward(*this, n);
            }
            if (!n.param_name.empty()) {
                Tensor& pg = store_->grad(n.param_name);
                for (std::size_t k = 0; k < pg.size(); ++k) {
                    pg[k] += n.grad[k];
                }
            }
        }
    }

    // ---- value-level helpers (shared with non-tape callers) ------------------

    static Tensor matmul_values(const Tensor& a, const Tensor& b) {
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                const double av = a.at(i, p);
                if (av == 0.0) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    out.at(i, j) += av * b.at(p, j);
                }
            }
        }
        return out;
    }

    static Tensor softmax_rows_values(const Tensor& x) {
        Tensor out = x;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            double mx = x.at(i, 0);
            for (std::size_t j = 1; j < x.cols(); ++j) {
                mx = std::max(mx, x.at(i, j));
            }
            double sum = 0.0;
            for (std::size_t j = 0; j < x.cols(); ++j) {
                out.at(i, j) = std::exp(x.at(i, j) - mx);
                sum += out.at(i, j);
            }
            for (std::size_t j = 0; j < x.cols(); ++j) {
                out.at(i, j) /= sum;
            }
        }
        return out;
    }

    static constexpr double layer_norm_eps = 1e-5;

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<Var> parents;
        std::function<void(Graph&, const Node&)> backward;
        std::string param_name;
    };

    const Tensor& val(Var v) const { return nodes_[v.id].value; }

    void accumulate(Var v, const Tensor& g) {
        Tensor& dst = nodes_[v.id].grad;
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += g[i];
        }
    }

    Var push(Tensor value, std::vector<Var> parents,
             std::function<void(Graph&, const Node&)> back) {
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents), std::move(back), {}});
        return Var{nodes_.size() - 1};
    }

    static Tensor matmul_nt(const Tensor& a, const Tensor& b) {
        // a [m x n] * b^T [n x k] with b given as [k x n]
        const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
        Tensor out({m, k});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < n; ++p) {
                    acc += a.at(i, p) * b.at(j, p);
                }
                out.at(i, j) = acc;
            }
        }
        return out;
    }

    static Tensor matmul_tn(const Tensor& a, const Tensor& b) {
        // a^T [k x m] * b [m x n] with a given as [m x k]
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        Tensor out({k, n});
        for (std::size_t p = 0; p < m; ++p) {
            for (std::size_t i = 0; i < k; ++i) {
                const double av = a.at(p, i);
                if (av == 0.0) {
                    continue;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    out.at(i, j) += av * b.at(p, j);
                }
            }
        }
        return out;
    }

    ParameterStore* store_;
    std::vector<Node> nodes_;
    std::map<std::string, Var> param_cache_;
};

}  // namespace dflat
