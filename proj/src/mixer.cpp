#include "moai/mixer.hpp"

namespace moai {

const char* expert_role_name(ExpertRole role) {
    switch (role) {
        case ExpertRole::i_aux: return "i_aux";
        case ExpertRole::i_lang: return "i_lang";
        case ExpertRole::i_self: return "i_self";
        case ExpertRole::l_aux: return "l_aux";
        case ExpertRole::l_img: return "l_img";
        case ExpertRole::l_self: return "l_self";
    }
    throw ConfigError("unknown expert role");
}

LowRankAttentionExpert::LowRankAttentionExpert(ExpertRole role, int d, const ExpertConfig& cfg,
                                               ParamRegistry& reg, const std::string& prefix,
                                               uint64_t seed)
    : role_(role), heads_(cfg.heads) {
    if (cfg.r < 1 || cfg.r >= d) throw ConfigError("expert: require 1 <= r < d");
    if (d % cfg.heads != 0) throw ConfigError("expert: d % heads != 0");
    // W_A drawn small, W_B zero: every factorized projection starts at zero,
    // so the expert is an exact identity at initialization
    auto factor_pair = [&](const char* stem, Tensor& a, Tensor& b) {
        a = init_param(reg, seed, prefix + "." + stem + "_a", {d, cfg.r}, Init::normal, 0.02);
        b = init_param(reg, seed, prefix + "." + stem + "_b", {cfg.r, d}, Init::zero);
    };
    factor_pair("wq", wq_a_, wq_b_);
    factor_pair("wk", wk_a_, wk_b_);
    factor_pair("wv", wv_a_, wv_b_);
    factor_pair("wo", wo_a_, wo_b_);
}

Tensor LowRankAttentionExpert::forward(const Tensor& query_features,
                                       const Tensor& key_value_features) const {
    const bool self_role = role_ == ExpertRole::i_self || role_ == ExpertRole::l_self;
    if (self_role && query_features.node() != key_value_features.node())
        throw UsageError("expert: self role requires key/value features == query features");
    const bool causal = role_ == ExpertRole::l_self;

    Tensor q = matmul(matmul(query_features, wq_a_), wq_b_);
    Tensor k = matmul(matmul(key_value_features, wk_a_), wk_b_);
    Tensor v = matmul(matmul(key_value_features, wv_a_), wv_b_);
    Tensor att = multi_head_attention(q, k, v, heads_, causal);
    Tensor out = matmul(matmul(att, wo_a_), wo_b_);
    return add(out, query_features);
}

Tensor LowRankAttentionExpert::materialize(const char* which) const {
    const std::string w = which;
    if (w == "wq") return matmul(wq_a_, wq_b_);
    if (w == "wk") return matmul(wk_a_, wk_b_);
    if (w == "wv") return matmul(wv_a_, wv_b_);
    if (w == "wo") return matmul(wo_a_, wo_b_);
    throw ConfigError("materialize: unknown projection " + w);
}

Tensor expert_attention(const LowRankAttentionExpert& expert, const Tensor& query_features,
                        const Tensor& key_value_features) {
    return expert.forward(query_features, key_value_features);
}

Tensor gate_weights(const Tensor& gate, const Tensor& x) {
    if (gate.cols() != 3) throw ShapeError("gate_weights: gate must have 3 columns");
    if (x.cols() != gate.rows()) throw ShapeError("gate_weights: feature width mismatch");
    return softmax(matmul(x, gate), 1);
}

MixerLayer::MixerLayer(int d, const ExpertConfig& cfg, ParamRegistry& reg,
                       const std::string& prefix, uint64_t seed) {
    static const ExpertRole roles[6] = {ExpertRole::i_aux, ExpertRole::i_lang, ExpertRole::i_self,
                                        ExpertRole::l_aux, ExpertRole::l_img, ExpertRole::l_self};
    for (int e = 0; e < 6; ++e)
        experts_[e] = LowRankAttentionExpert(roles[e], d, cfg, reg,
                                             prefix + "." + expert_role_name(roles[e]), seed);
    // zero-initialized gates score every expert equally (weights 1/3)
    gate_visual_ = init_param(reg, seed, prefix + ".gate_visual", {d, 3}, Init::zero);
    gate_language_ = init_param(reg, seed, prefix + ".gate_language", {d, 3}, Init::zero);
}

void MixerLayer::set_top_k(int k) {
    if (k < 1 || k > 3) throw ConfigError("mixer: top_k must be in {1,2,3}");
    top_k_ = k;
}

const LowRankAttentionExpert& MixerLayer::expert(ExpertRole role) const {
    for (const auto& e : experts_)
        if (e.role() == role) return e;
    throw ConfigError("mixer: expert not found");
}

Tensor MixerLayer::gate_weights_visual(const Tensor& i) const {
    return gate_weights(gate_visual_, i);
}

Tensor MixerLayer::gate_weights_language(const Tensor& l) const {
    return gate_weights(gate_language_, l);
}

Tensor MixerLayer::expert_outputs_visual(ExpertRole which, const Tensor& a, const Tensor& i,
                                         const Tensor& l, int instruction_len) const {
    switch (which) {
        case ExpertRole::i_aux: return expert(which).forward(i, a);
        case ExpertRole::i_lang: {
            if (instruction_len < 1 || instruction_len > l.rows())
                throw UsageError("mixer: instruction length outside language span");
            return expert(which).forward(i, slice_rows(l, 0, instruction_len));
        }
        case ExpertRole::i_self: return expert(which).forward(i, i);
        default: throw UsageError("mixer: not a visual-stream expert");
    }
}

Tensor MixerLayer::expert_outputs_language(ExpertRole which, const Tensor& a, const Tensor& i,
                                           const Tensor& l) const {
    switch (which) {
        case ExpertRole::l_aux: return expert(which).forward(l, a);
        case ExpertRole::l_img: return expert(which).forward(l, i);
        case ExpertRole::l_self: return expert(which).forward(l, l);
        default: throw UsageError("mixer: not a language-stream expert");
    }
}

MixResult MixerLayer::sample_mix(const Tensor& a, const Tensor& i, const Tensor& l,
                                 int instruction_len, Rng& rng) const {
    if (mode_ != MixMode::sample) throw UsageError("sample_mix: layer is not in sample mode");
    static const ExpertRole visual[3] = {ExpertRole::i_aux, ExpertRole::i_lang,
                                         ExpertRole::i_self};
    static const ExpertRole language[3] = {ExpertRole::l_aux, ExpertRole::l_img,
                                           ExpertRole::l_self};
    MixResult result;
    result.visual_choice = static_cast<int>(rng.uniform_below(3));
    result.language_choice = static_cast<int>(rng.uniform_below(3));
    result.i_hat = expert_outputs_visual(visual[result.visual_choice], a, i, l, instruction_len);
    result.l_hat = expert_outputs_language(language[result.language_choice], a, i, l);
    return result;
}

MixResult MixerLayer::gated_mix(const Tensor& a, const Tensor& i, const Tensor& l,
                                int instruction_len) const {
    if (mode_ != MixMode::gate) throw UsageError("gated_mix: layer is not in gate mode");

    auto column = [](const Tensor& w, int j) {
        return reshape(slice_cols(w, j, j + 1), {w.rows()});
    };
    auto mix3 = [&](const Tensor& w, const Tensor& e0, const Tensor& e1, const Tensor& e2) {
        return add(add(mul_rowscale(e0, column(w, 0)), mul_rowscale(e1, column(w, 1))),
                   mul_rowscale(e2, column(w, 2)));
    };

    Tensor wi = gate_weights_visual(i);
    Tensor wl = gate_weights_language(l);
    if (top_k_ < 3) {
        wi = top_k_filter(wi, top_k_);
        wl = top_k_filter(wl, top_k_);
    }

    MixResult result;
    result.i_hat = mix3(wi, expert_outputs_visual(ExpertRole::i_aux, a, i, l, instruction_len),
                        expert_outputs_visual(ExpertRole::i_lang, a, i, l, instruction_len),
                        expert_outputs_visual(ExpertRole::i_self, a, i, l, instruction_len));
    result.l_hat = mix3(wl, expert_outputs_language(ExpertRole::l_aux, a, i, l),
                        expert_outputs_language(ExpertRole::l_img, a, i, l),
                        expert_outputs_language(ExpertRole::l_self, a, i, l));
    return result;
}

MixResult MixerLayer::forward(const Tensor& a, const Tensor& i, const Tensor& l,
                              int instruction_len, Rng* rng) const {
    if (mode_ == MixMode::sample) {
        if (!rng) throw UsageError("mixer: sample mode requires an rng");
        return sample_mix(a, i, l, instruction_len, *rng);
    }
    return gated_mix(a, i, l, instruction_len);
}

}  // namespace moai
