#pragma once

#include <fstream>
#include <string>

#include "json.hpp"

#include "dflat/errors.hpp"
#include "dflat/store.hpp"
#include "dflat/tensor.hpp"

namespace dflat {

// Checkpoint = <prefix>.manifest.json (name, dims, offset per parameter) plus
// <prefix>.blob, one rank-1 tensor dump holding every value in slot order.

inline void save_checkpoint(const ParameterStore& store, const std::string& prefix) {
    nlohmann::json manifest;
    manifest["seed"] = store.seed();
    manifest["total"] = store.total_parameters();
    nlohmann::json params = nlohmann::json::array();
    Tensor blob({store.total_parameters()});
    std::size_t offset = 0;
    for (const auto& slot : store.slots()) {
        nlohmann::json p;
        p["name"] = slot.name;
        p["dims"] = slot.value.dims();
        p["offset"] = offset;
        params.push_back(std::move(p));
        for (std::size_t i = 0; i < slot.value.size(); ++i) {
            blob[offset + i] = slot.value[i];
        }
        offset += slot.value.size();
    }
    manifest["params"] = std::move(params);

    std::ofstream os(prefix + ".manifest.json");
    if (!os) {
        throw IoError("cannot open for write: " + prefix + ".manifest.json");
    }
    os << manifest.dump(2) << "\n";
    if (!os) {
        throw IoError("write failed: " + prefix + ".manifest.json");
    }
    save_tensor(prefix + ".blob", blob);
}

inline void load_checkpoint(ParameterStore& store, const std::string& prefix) {
    std::ifstream is(prefix + ".manifest.json");
    if (!is) {
        throw IoError("checkpoint manifest not found: " + prefix + ".manifest.json");
    }
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint manifest unreadable: " + std::string(e.what()));
    }
    const Tensor blob = load_tensor(prefix + ".blob");
    if (blob.rank() != 1) {
        throw IoError("checkpoint blob: want rank 1, got " + blob.shape_str());
    }
    for (const auto& p : manifest.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const auto dims = p.at("dims").get<std::vector<std::size_t>>();
        const std::size_t offset = p.at("offset").get<std::size_t>();
        if (!store.has(name)) {
            throw ConfigError("checkpoint parameter not in this model: " + name);
        }
        Tensor& value = store.value(name);
        if (value.dims() != dims) {
            throw ConfigError("checkpoint dims mismatch for " + name + ": " +
                              Tensor::dims_str(dims) + " vs " + value.shape_str());
        }
        if (offset + value.size() > blob.size()) {
            throw IoError("checkpoint blob too short for " + name);
        }
        for (std::size_t i = 0; i < value.size(); ++i) {
            value[i] = blob[offset + i];
        }
    }
}

}  // namespace dflat
