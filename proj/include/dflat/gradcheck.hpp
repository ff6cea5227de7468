#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dflat/store.hpp"

namespace dflat {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t count = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;  // one entry per registered parameter
    double worst = 0.0;

    bool pass(double tol) const { return worst <= tol; }
};

// Central-difference check of every registered parameter against one analytic
// backward pass. loss_fn must rebuild the forward from the store's current
// values; with_grad=true additionally runs backward into the store's gradient
// buffers. Error metric per component:
//   |analytic - fd| / max(1, |analytic|, |fd|)
inline GradCheckReport gradcheck(ParameterStore& store,
                                 const std::function<double(bool with_grad)>& loss_fn,
                                 double step = 1e-4) {
    store.zero_grad();
    loss_fn(true);
    std::vector<Tensor> analytic;
    analytic.reserve(store.slots().size());
    for (const auto& slot : store.slots()) {
        analytic.push_back(slot.grad);
    }

    GradCheckReport report;
    for (std::size_t p = 0; p < store.slots().size(); ++p) {
        auto& slot = store.slots()[p];
        GradCheckGroup group{slot.name, 0.0, slot.value.size()};
        for (std::size_t i = 0; i < slot.value.size(); ++i) {
            const double v0 = slot.value[i];
            slot.value[i] = v0 + step;
            const double lp = loss_fn(false);
            slot.value[i] = v0 - step;
            const double lm = loss_fn(false);
            slot.value[i] = v0;
            const double fd = (lp - lm) / (2.0 * step);
            const double a = analytic[p][i];
            const double rel =
                std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
            group.max_rel_err = std::max(group.max_rel_err, rel);
        }
        report.worst = std::max(report.worst, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

}  // namespace dflat
