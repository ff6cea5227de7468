#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dflat/errors.hpp"
#include "dflat/rng.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

// Registry of learnable tensors with matching gradient buffers. Initial values
// are drawn from the store's seeded RNG in registration order, so two stores
// built from the same seed and the same registration sequence are bit-identical.
class ParameterStore {
public:
    struct Slot {
        std::string name;
        Tensor value;
        Tensor grad;
    };

    enum class Init { normal_002, zeros, ones };

    explicit ParameterStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

    std::uint64_t seed() const { return seed_; }

    Tensor& add(const std::string& name, std::vector<std::size_t> dims, Init init) {
        if (index_.count(name)) {
            throw ConfigError("parameter registered twice: " + name);
        }
        Slot slot{name, Tensor(dims), Tensor(dims)};
        switch (init) {
            case Init::normal_002:
                for (std::size_t i = 0; i < slot.value.size(); ++i) {
                    slot.value[i] = rng_.normal(0.0, 0.02);
                }
                break;
            case Init::zeros:
                break;
            case Init::ones:
                slot.value.fill(1.0);
                break;
        }
        index_[name] = slots_.size();
        slots_.push_back(std::move(slot));
        return slots_.back().value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& value(const std::string& name) { return slots_[find(name)].value; }
    const Tensor& value(const std::string& name) const { return slots_[find(name)].value; }

    Tensor& grad(const std::string& name) { return slots_[find(name)].grad; }
    const Tensor& grad(const std::string& name) const { return slots_[find(name)].grad; }

    const std::vector<Slot>& slots() const { return slots_; }
    std::vector<Slot>& slots() { return slots_; }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& s : slots_) {
            n += s.value.size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& s : slots_) {
            s.grad.fill(0.0);
        }
    }

    // RNG for anything the owner wants drawn after construction (kept with the
    // store so the whole init stream is one seeded sequence).
    Rng& rng() { return rng_; }

private:
    std::size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw ConfigError("unknown parameter: " + name);
        }
        return it->second;
    }

    std::uint64_t seed_;
    Rng rng_;
    std::vector<Slot> slots_;
    std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

class Sgd {
public:
    explicit Sgd(double lr) : lr_(lr) {}

    void step(ParameterStore& store) {
        for (auto& s : store.slots()) {
            for (std::size_t i = 0; i < s.value.size(); ++i) {
                s.value[i] -= lr_ * s.grad[i];
            }
        }
    }

private:
    double lr_;
};

class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParameterStore& store) {
        if (m_.empty()) {
            for (const auto& s : store.slots()) {
                m_.emplace_back(s.value.dims());
                v_.emplace_back(s.value.dims());
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        auto& slots = store.slots();
        for (std::size_t p = 0; p < slots.size(); ++p) {
            auto& s = slots[p];
            for (std::size_t i = 0; i < s.value.size(); ++i) {
                const double g = s.grad[i];
                m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
                v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
                const double mhat = m_[p][i] / bc1;
                const double vhat = v_[p][i] / bc2;
                s.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::uint64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace dflat
