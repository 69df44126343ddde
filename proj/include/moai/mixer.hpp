#pragma once

#include <array>
#include <string>

#include "moai/params.hpp"
#include "moai/rng.hpp"
#include "moai/tensor.hpp"

namespace moai {

// Query/key-value pairing each expert specializes in. The first letter names
// the query stream, the suffix names the key/value source.
enum class ExpertRole { i_aux, i_lang, i_self, l_aux, l_img, l_self };

const char* expert_role_name(ExpertRole role);

struct ExpertConfig {
    int r = 64;
    int heads = 4;

    static ExpertConfig paper_scale() { return {}; }
    static ExpertConfig toy() { return {8, 4}; }
};

// Attention expert whose four projections are factorized as W = W_A * W_B
// with W_A in R^{d x r}, W_B in R^{r x d}. The query features are added back
// to the attention output, so a zero W_B makes the expert an exact identity.
class LowRankAttentionExpert {
public:
    LowRankAttentionExpert() = default;
    LowRankAttentionExpert(ExpertRole role, int d, const ExpertConfig& cfg, ParamRegistry& reg,
                           const std::string& prefix, uint64_t model_seed);

    // For self roles, key_value_features must be the query tensor itself.
    // The language self-attention expert applies a causal mask.
    Tensor forward(const Tensor& query_features, const Tensor& key_value_features) const;

    ExpertRole role() const { return role_; }
    // effective d x d projection materialized from its factors (inspection)
    Tensor materialize(const char* which) const;

private:
    ExpertRole role_ = ExpertRole::i_self;
    int heads_ = 1;
    Tensor wq_a_, wq_b_, wk_a_, wk_b_, wv_a_, wv_b_, wo_a_, wo_b_;
};

Tensor expert_attention(const LowRankAttentionExpert& expert, const Tensor& query_features,
                        const Tensor& key_value_features);

enum class MixMode { sample, gate };

struct MixResult {
    Tensor i_hat, l_hat;
    int visual_choice = -1;    // sample mode: which of {aux, lang, self} fed i_hat
    int language_choice = -1;  // sample mode: which of {aux, img, self} fed l_hat
};

// Six experts plus one gating network per stream, attached to one decoder
// layer. In gate mode each token's mixed output is the convex combination of
// the three expert outputs under the per-token softmax weights; in sample
// mode one expert per stream is drawn uniformly.
class MixerLayer {
public:
    MixerLayer() = default;
    MixerLayer(int d, const ExpertConfig& cfg, ParamRegistry& reg, const std::string& prefix,
               uint64_t model_seed);

    void set_mode(MixMode mode) { mode_ = mode; }
    MixMode mode() const { return mode_; }
    void set_top_k(int k);
    int top_k() const { return top_k_; }

    // instruction_len bounds the language rows the visual-queries-language
    // expert may attend (keeps teacher-forced training causal); pass
    // language row count for unrestricted access.
    MixResult sample_mix(const Tensor& a, const Tensor& i, const Tensor& l, int instruction_len,
                         Rng& rng) const;
    MixResult gated_mix(const Tensor& a, const Tensor& i, const Tensor& l,
                        int instruction_len) const;
    MixResult forward(const Tensor& a, const Tensor& i, const Tensor& l, int instruction_len,
                      Rng* rng) const;

    // [n, 3] per-token softmax over expert logits; columns are
    // [aux, lang, self] for the visual stream and [aux, img, self] for the
    // language stream
    Tensor gate_weights_visual(const Tensor& i) const;
    Tensor gate_weights_language(const Tensor& l) const;

    const LowRankAttentionExpert& expert(ExpertRole role) const;

private:
    Tensor expert_outputs_visual(ExpertRole which, const Tensor& a, const Tensor& i,
                                 const Tensor& l, int instruction_len) const;
    Tensor expert_outputs_language(ExpertRole which, const Tensor& a, const Tensor& i,
                                   const Tensor& l) const;

    MixMode mode_ = MixMode::sample;
    int top_k_ = 3;
    std::array<LowRankAttentionExpert, 6> experts_;
    Tensor gate_visual_, gate_language_;  // each [d, 3]
};

// Per-token gate weights for arbitrary features against a [d, 3] gate.
Tensor gate_weights(const Tensor& gate, const Tensor& x);

}  // namespace moai
