#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

struct MiouResult {
    double miou = 0.0;
    std::vector<double> per_class;  // NaN-free: excluded classes report 0 with present=false
    std::vector<bool> present;      // class appears in prediction or truth
};

// Intersection/union tallies, accumulated pixel-wise over any number of
// (prediction, truth) pairs. Classes absent from both sides are excluded from
// the mean.
class MiouAccumulator {
public:
    explicit MiouAccumulator(std::size_t n_classes)
        : inter_(n_classes, 0), uni_(n_classes, 0) {}

    void add(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth) {
        if (pred.size() != truth.size()) {
            throw ShapeError("miou: prediction and truth sizes differ");
        }
        for (std::size_t p = 0; p < pred.size(); ++p) {
            if (pred[p] >= inter_.size() || truth[p] >= inter_.size()) {
                throw ShapeError("miou: class id out of range");
            }
            if (pred[p] == truth[p]) {
                ++inter_[pred[p]];
                ++uni_[pred[p]];
            } else {
                ++uni_[pred[p]];
                ++uni_[truth[p]];
            }
        }
    }

    MiouResult result() const {
        MiouResult r;
        r.per_class.assign(inter_.size(), 0.0);
        r.present.assign(inter_.size(), false);
        double sum = 0.0;
        std::size_t counted = 0;
        for (std::size_t c = 0; c < inter_.size(); ++c) {
            if (uni_[c] == 0) {
                continue;
            }
            r.present[c] = true;
            r.per_class[c] = static_cast<double>(inter_[c]) / static_cast<double>(uni_[c]);
            sum += r.per_class[c];
            ++counted;
        }
        r.miou = counted == 0 ? 0.0 : sum / static_cast<double>(counted);
        return r;
    }

private:
    std::vector<std::uint64_t> inter_, uni_;
};

inline MiouResult miou(const std::vector<std::size_t>& pred,
                       const std::vector<std::size_t>& truth, std::size_t n_classes) {
    MiouAccumulator acc(n_classes);
    acc.add(pred, truth);
    return acc.result();
}

// Row-wise argmax of a [n x c] logit matrix (first maximum wins).
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    std::vector<std::size_t> out(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (logits.at(i, j) > logits.at(i, best)) {
                best = j;
            }
        }
        out[i] = best;
    }
    return out;
}

// Pure evaluation twin of the tape op: mean over rows of -log softmax[label].
inline double cross_entropy_value(const Tensor& logits, const std::vector<std::size_t>& labels) {
    if (logits.rank() != 2 || labels.size() != logits.rows()) {
        throw ShapeError("cross_entropy: logits " + logits.shape_str() + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            mx = std::max(mx, logits.at(i, j));
        }
        double se = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            se += std::exp(logits.at(i, j) - mx);
        }
        acc += std::log(se) - (logits.at(i, labels[i]) - mx);
    }
    return acc / static_cast<double>(logits.rows());
}

}  // namespace dflat
