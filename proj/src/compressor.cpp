#include "moai/compressor.hpp"

#include <cmath>

namespace moai {

void CompressorConfig::validate() const {
    if (num_latents < 1 || num_layers < 1 || num_heads < 1 || head_dim < 1 || d < 2 ||
        ffn_mult < 1)
        throw ConfigError("compressor config: all counts must be >= 1");
}

Compressor::Compressor(const CompressorConfig& cfg, ParamRegistry& reg, const std::string& prefix,
                       uint64_t seed)
    : cfg_(cfg) {
    cfg.validate();
    const int w = cfg.width();
    const double d_std = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    const double w_std = 1.0 / std::sqrt(static_cast<double>(w));

    // latent initialization: zero-mean normal, deviation 0.02, fixed stream
    latents_ = init_param(reg, seed, prefix + ".latents", {cfg.num_latents, cfg.d}, Init::normal,
                          0.02);
    for (int l = 0; l < cfg.num_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        Layer layer;
        layer.ln_q_g = init_param(reg, seed, lp + ".ln_q.g", {cfg.d}, Init::one);
        layer.ln_q_b = init_param(reg, seed, lp + ".ln_q.b", {cfg.d}, Init::zero);
        layer.ln_kv_g = init_param(reg, seed, lp + ".ln_kv.g", {cfg.d}, Init::one);
        layer.ln_kv_b = init_param(reg, seed, lp + ".ln_kv.b", {cfg.d}, Init::zero);
        layer.wq = init_param(reg, seed, lp + ".wq", {cfg.d, w}, Init::normal, d_std);
        layer.wk = init_param(reg, seed, lp + ".wk", {cfg.d, w}, Init::normal, d_std);
        layer.wv = init_param(reg, seed, lp + ".wv", {cfg.d, w}, Init::normal, d_std);
        layer.wo = init_param(reg, seed, lp + ".wo", {w, cfg.d}, Init::normal, w_std);
        layer.ln_ffn_g = init_param(reg, seed, lp + ".ln_ffn.g", {cfg.d}, Init::one);
        layer.ln_ffn_b = init_param(reg, seed, lp + ".ln_ffn.b", {cfg.d}, Init::zero);
        const int hidden = cfg.ffn_mult * cfg.d;
        layer.ffn_w1 = init_param(reg, seed, lp + ".ffn.w1", {cfg.d, hidden}, Init::normal, d_std);
        layer.ffn_b1 = init_param(reg, seed, lp + ".ffn.b1", {hidden}, Init::zero);
        layer.ffn_w2 = init_param(reg, seed, lp + ".ffn.w2", {hidden, cfg.d}, Init::normal,
                                  1.0 / std::sqrt(static_cast<double>(hidden)));
        layer.ffn_b2 = init_param(reg, seed, lp + ".ffn.b2", {cfg.d}, Init::zero);
        layers_.push_back(std::move(layer));
    }
    ln_out_g_ = init_param(reg, seed, prefix + ".ln_out.g", {cfg.d}, Init::one);
    ln_out_b_ = init_param(reg, seed, prefix + ".ln_out.b", {cfg.d}, Init::zero);
}

Tensor Compressor::resampler_layer(int idx, const Tensor& latents_state, const Tensor& aux) const {
    if (idx < 0 || idx >= num_layers()) throw ConfigError("resampler_layer: bad layer index");
    if (latents_state.cols() != cfg_.d || aux.cols() != cfg_.d)
        throw ConfigError("resampler_layer: embedding width mismatch");
    const Layer& layer = layers_[idx];

    // keys/values are the aux tokens with the latent state appended, so the
    // empty-bundle case degenerates to latent self-attention
    Tensor kv_src = concat_rows({aux, latents_state});
    Tensor q_in = layer_norm(latents_state, layer.ln_q_g, layer.ln_q_b);
    Tensor kv_in = layer_norm(kv_src, layer.ln_kv_g, layer.ln_kv_b);
    Tensor att = multi_head_attention(matmul(q_in, layer.wq), matmul(kv_in, layer.wk),
                                      matmul(kv_in, layer.wv), cfg_.num_heads, false);
    Tensor state = add(latents_state, matmul(att, layer.wo));

    Tensor f_in = layer_norm(state, layer.ln_ffn_g, layer.ln_ffn_b);
    Tensor f = matmul(gelu(add_rowvec(matmul(f_in, layer.ffn_w1), layer.ffn_b1)), layer.ffn_w2);
    return add(state, add_rowvec(f, layer.ffn_b2));
}

Tensor Compressor::compress(const AuxTokenBundle& bundle) const {
    for (const Tensor* part : {&bundle.a_ps, &bundle.a_owod, &bundle.a_sgg, &bundle.a_ocr})
        if (part->cols() != cfg_.d)
            throw ConfigError("compress: bundle width does not match compressor d");
    Tensor aux = concat_rows({bundle.a_ps, bundle.a_owod, bundle.a_sgg, bundle.a_ocr});
    Tensor state = latents_;
    for (int l = 0; l < num_layers(); ++l) state = resampler_layer(l, state, aux);
    Tensor out = layer_norm(state, ln_out_g_, ln_out_b_);
    out.assert_finite("compressor output");
    return out;
}

}  // namespace moai
