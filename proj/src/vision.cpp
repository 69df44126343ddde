#include "moai/vision.hpp"

#include <cmath>

namespace moai {

namespace {

Tensor patchify(const Image& img, int patch) {
    if (img.h % patch != 0 || img.w % patch != 0)
        throw ShapeError("patchify: image dimensions not divisible by patch size");
    const int rows = img.h / patch, cols = img.w / patch;
    const int flat = patch * patch * img.c;
    std::vector<double> data;
    data.reserve(static_cast<size_t>(rows) * cols * flat);
    for (int pr = 0; pr < rows; ++pr)
        for (int pc = 0; pc < cols; ++pc)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int ch = 0; ch < img.c; ++ch)
                        data.push_back(img.at(pr * patch + y, pc * patch + x, ch));
    return Tensor::from_data({rows * cols, flat}, std::move(data));
}

}  // namespace

VisionEncoderToy::VisionEncoderToy(const VisionEncoderConfig& cfg, ParamRegistry& reg,
                                   const std::string& prefix, uint64_t seed)
    : cfg_(cfg) {
    if (cfg.d_vis % cfg.heads != 0) throw ConfigError("vision encoder: d_vis % heads != 0");
    const int flat = cfg.patch_size * cfg.patch_size * cfg.in_channels;
    const double embed_std = 1.0 / std::sqrt(static_cast<double>(flat));
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_vis));
    patch_embed_ =
        init_param(reg, seed, prefix + ".patch_embed", {flat, cfg.d_vis}, Init::normal, embed_std);
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string bp = prefix + ".block" + std::to_string(l);
        Block b;
        b.ln1_g = init_param(reg, seed, bp + ".ln1.g", {cfg.d_vis}, Init::one);
        b.ln1_b = init_param(reg, seed, bp + ".ln1.b", {cfg.d_vis}, Init::zero);
        b.wq = init_param(reg, seed, bp + ".wq", {cfg.d_vis, cfg.d_vis}, Init::normal, proj_std);
        b.wk = init_param(reg, seed, bp + ".wk", {cfg.d_vis, cfg.d_vis}, Init::normal, proj_std);
        b.wv = init_param(reg, seed, bp + ".wv", {cfg.d_vis, cfg.d_vis}, Init::normal, proj_std);
        b.wo = init_param(reg, seed, bp + ".wo", {cfg.d_vis, cfg.d_vis}, Init::normal, proj_std);
        b.ln2_g = init_param(reg, seed, bp + ".ln2.g", {cfg.d_vis}, Init::one);
        b.ln2_b = init_param(reg, seed, bp + ".ln2.b", {cfg.d_vis}, Init::zero);
        const int hidden = cfg.ffn_mult * cfg.d_vis;
        b.ffn_w1 = init_param(reg, seed, bp + ".ffn.w1", {cfg.d_vis, hidden}, Init::normal, proj_std);
        b.ffn_b1 = init_param(reg, seed, bp + ".ffn.b1", {hidden}, Init::zero);
        b.ffn_w2 = init_param(reg, seed, bp + ".ffn.w2", {hidden, cfg.d_vis}, Init::normal,
                              1.0 / std::sqrt(static_cast<double>(hidden)));
        b.ffn_b2 = init_param(reg, seed, bp + ".ffn.b2", {cfg.d_vis}, Init::zero);
        blocks_.push_back(std::move(b));
    }
    ln_f_g_ = init_param(reg, seed, prefix + ".ln_f.g", {cfg.d_vis}, Init::one);
    ln_f_b_ = init_param(reg, seed, prefix + ".ln_f.b", {cfg.d_vis}, Init::zero);
}

Tensor VisionEncoderToy::encode(const Image& img) const {
    if (img.c != cfg_.in_channels) throw ShapeError("vision encoder: channel count mismatch");
    Tensor h = matmul(patchify(img, cfg_.patch_size), patch_embed_);
    for (const auto& b : blocks_) {
        Tensor n1 = layer_norm(h, b.ln1_g, b.ln1_b);
        Tensor att = multi_head_attention(matmul(n1, b.wq), matmul(n1, b.wk), matmul(n1, b.wv),
                                          cfg_.heads, false);
        h = add(h, matmul(att, b.wo));
        Tensor n2 = layer_norm(h, b.ln2_g, b.ln2_b);
        Tensor f = matmul(gelu(add_rowvec(matmul(n2, b.ffn_w1), b.ffn_b1)), b.ffn_w2);
        h = add(h, add_rowvec(f, b.ffn_b2));
    }
    return layer_norm(h, ln_f_g_, ln_f_b_);
}

MlpConnector::MlpConnector(int d_in, int d_hidden, int d_out, ParamRegistry& reg,
                           const std::string& prefix, uint64_t seed) {
    w1_ = init_param(reg, seed, prefix + ".w1", {d_in, d_hidden}, Init::normal,
                     1.0 / std::sqrt(static_cast<double>(d_in)));
    b1_ = init_param(reg, seed, prefix + ".b1", {d_hidden}, Init::zero);
    w2_ = init_param(reg, seed, prefix + ".w2", {d_hidden, d_out}, Init::normal,
                     1.0 / std::sqrt(static_cast<double>(d_hidden)));
    b2_ = init_param(reg, seed, prefix + ".b2", {d_out}, Init::zero);
}

Tensor MlpConnector::connect(const Tensor& v) const {
    return add_rowvec(matmul(gelu(add_rowvec(matmul(v, w1_), b1_)), w2_), b2_);
}

}  // namespace moai
