#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "moai/common.hpp"
#include "moai/rng.hpp"
#include "moai/tensor.hpp"

namespace moai {

// Named trainable (or frozen) leaf tensor.
struct Parameter {
    std::string name;
    Tensor tensor;
};

// Ordered parameter table; order is the checkpoint serialization order.
class ParamRegistry {
public:
    Tensor add(const std::string& name, Tensor t) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        index_[name] = params_.size();
        params_.push_back({name, t});
        return t;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    Tensor get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return params_[it->second].tensor;
    }

    const std::vector<Parameter>& all() const { return params_; }

    std::vector<Parameter> matching(const std::function<bool(const std::string&)>& pred) const {
        std::vector<Parameter> out;
        for (const auto& p : params_)
            if (pred(p.name)) out.push_back(p);
        return out;
    }

    void set_trainable(const std::function<bool(const std::string&)>& pred, bool trainable) {
        for (auto& p : params_)
            if (pred(p.name)) p.tensor.set_requires_grad(trainable);
    }

    void zero_grads() {
        for (auto& p : params_)
            if (p.tensor.requires_grad()) p.tensor.zero_grad();
    }

    // FNV-1a over raw value bytes of every parameter whose name satisfies
    // `pred`, in registration order. Used for the freeze contract.
    uint64_t hash_values(const std::function<bool(const std::string&)>& pred) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : params_) {
            if (!pred(p.name)) continue;
            for (double v : p.tensor.value()) {
                uint64_t bits;
                static_assert(sizeof(bits) == sizeof(v));
                __builtin_memcpy(&bits, &v, sizeof(bits));
                for (int b = 0; b < 8; ++b) {
                    h ^= (bits >> (8 * b)) & 0xff;
                    h *= 0x100000001b3ULL;
                }
            }
        }
        return h;
    }

    // Round every value to the nearest float32; the checkpoint stores single
    // precision, so this makes in-memory state match what a save/load cycle
    // would produce.
    void canonicalize_to_f32() {
        for (auto& p : params_)
            for (auto& v : p.tensor.mutable_value()) v = static_cast<double>(static_cast<float>(v));
    }

private:
    std::vector<Parameter> params_;
    std::unordered_map<std::string, size_t> index_;
};

enum class Init { zero, one, normal };

// Each parameter draws from its own stream keyed by (model_seed, name), so
// adding or removing modules never shifts another module's initialization.
inline Tensor init_param(ParamRegistry& reg, uint64_t model_seed, const std::string& name,
                         std::vector<int> shape, Init kind, double stddev = 0.0,
                         bool trainable = true) {
    Tensor t;
    switch (kind) {
        case Init::zero:
            t = Tensor::zeros(std::move(shape), trainable);
            break;
        case Init::one:
            t = Tensor::full(std::move(shape), 1.0, trainable);
            break;
        case Init::normal: {
            Rng rng(mix_seed(model_seed, fnv1a(name)));
            t = Tensor::randn(std::move(shape), rng, stddev, trainable);
            break;
        }
    }
    return reg.add(name, t);
}

}  // namespace moai
