#pragma once

#include <string>
#include <vector>

#include "moai/params.hpp"
#include "moai/tensor.hpp"
#include "moai/verbalize.hpp"

namespace moai {

struct CompressorConfig {
    int num_latents = 64;
    int num_layers = 4;
    int num_heads = 4;
    int head_dim = 64;
    int d = 4096;
    int ffn_mult = 2;

    int width() const { return num_heads * head_dim; }
    void validate() const;

    static CompressorConfig paper_scale() { return {}; }
    static CompressorConfig toy() { return {8, 2, 2, 16, 64, 2}; }
};

// Latent-token resampler: a fixed set of learnable tokens cross-attends to
// the concatenated auxiliary bundle and is emitted at fixed length no matter
// how many auxiliary tokens arrive.
class Compressor {
public:
    Compressor() = default;
    Compressor(const CompressorConfig& cfg, ParamRegistry& reg, const std::string& prefix,
               uint64_t model_seed);

    // [num_latents, d] for any bundle length, including empty
    Tensor compress(const AuxTokenBundle& bundle) const;

    // One resampler layer: latent queries against concat(aux, latents)
    // keys/values, then a position-wise feed-forward; pre-norm residual
    // around both.
    Tensor resampler_layer(int layer_index, const Tensor& latents_state, const Tensor& aux) const;

    int num_layers() const { return static_cast<int>(layers_.size()); }
    Tensor latent_tokens() const { return latents_; }
    const CompressorConfig& config() const { return cfg_; }

private:
    struct Layer {
        Tensor ln_q_g, ln_q_b, ln_kv_g, ln_kv_b;
        Tensor wq, wk, wv, wo;
        Tensor ln_ffn_g, ln_ffn_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    CompressorConfig cfg_;
    Tensor latents_;
    std::vector<Layer> layers_;
    Tensor ln_out_g_, ln_out_b_;
};

}  // namespace moai
