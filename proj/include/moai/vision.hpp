#pragma once

#include <vector>

#include "moai/params.hpp"
#include "moai/tensor.hpp"

namespace moai {

// Row-major H x W x C pixel buffer, values in [0, 1].
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<double> pixels;

    double& at(int y, int x, int ch) { return pixels[(static_cast<size_t>(y) * w + x) * c + ch]; }
    double at(int y, int x, int ch) const {
        return pixels[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    static Image filled(int h, int w, int c, double v) {
        return Image{h, w, c, std::vector<double>(static_cast<size_t>(h) * w * c, v)};
    }
};

struct VisionEncoderConfig {
    int patch_size = 4;
    int in_channels = 3;
    int d_vis = 32;
    int layers = 2;
    int heads = 4;
    int ffn_mult = 2;
};

// Frozen stand-in for a pretrained image encoder: per-patch linear embedding
// followed by pre-norm self-attention blocks. No positional embeddings, so
// the encoding is permutation-equivariant over patches.
class VisionEncoderToy {
public:
    VisionEncoderToy() = default;
    VisionEncoderToy(const VisionEncoderConfig& cfg, ParamRegistry& reg, const std::string& prefix,
                     uint64_t model_seed);

    // pixels -> [num_patches, d_vis], patches in row-major order
    Tensor encode(const Image& img) const;

    const VisionEncoderConfig& config() const { return cfg_; }

private:
    struct Block {
        Tensor ln1_g, ln1_b, wq, wk, wv, wo;
        Tensor ln2_g, ln2_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    VisionEncoderConfig cfg_;
    Tensor patch_embed_;
    std::vector<Block> blocks_;
    Tensor ln_f_g_, ln_f_b_;
};

// Bridge between encoder features and the decoder embedding space:
// linear2(gelu(linear1(x))). Trainable in both training steps.
class MlpConnector {
public:
    MlpConnector() = default;
    MlpConnector(int d_in, int d_hidden, int d_out, ParamRegistry& reg, const std::string& prefix,
                 uint64_t model_seed);

    Tensor connect(const Tensor& v) const;

private:
    Tensor w1_, b1_, w2_, b2_;
};

}  // namespace moai
