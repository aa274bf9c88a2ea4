#pragma once

#include <string>

#include "t2p/params.hpp"
#include "t2p/tape.hpp"

namespace t2p {

// Bundles everything a layer needs. When `build_rng` is set the helpers create
// missing parameters (model-construction pass, single-threaded); otherwise
// they require parameters to exist already, so concurrent forward passes never
// mutate the store.
struct NnContext {
    Tape& tape;
    ParameterStore& store;
    Rng* build_rng = nullptr;
    Rng* dropout_rng = nullptr;
    bool training = false;

    bool building() const { return build_rng != nullptr; }
};

Var nn_linear(NnContext& ctx, Var x, const std::string& name, int d_out, bool bias = true);
Var nn_layer_norm(NnContext& ctx, Var x, const std::string& name, double eps = 1e-6);
Var nn_dropout(NnContext& ctx, Var x, double rate);

// Two linear layers with layer norms, used for the trajectory-side MLP blocks.
Var nn_mlp_ln(NnContext& ctx, Var x, const std::string& name, int hidden, int d_out);

// softmax(q k^T / sqrt(d_k)) v per head, heads concatenated and projected back
// to the query dimension. `kv_mask01` (optional) marks visible key/value
// positions with 1; shape = kv batch dims + (S_kv). Masked positions get zero
// attention weight; fully masked rows produce a zero attention message.
// Non-finite q/k/v inputs raise NumericalError.
Var nn_multi_head_attention(NnContext& ctx, Var q_in, Var kv_in, const std::string& name,
                            int heads, int d_k, const Array* kv_mask01 = nullptr);

// Post-norm transformer encoder block: self-attention and an FFN, each with
// dropout, a skip connection and layer normalization.
Var nn_encoder_block(NnContext& ctx, Var x, const std::string& name, int heads, int d_k,
                     int ffn_hidden, double dropout_rate, const Array* kv_mask01 = nullptr);

// Same structure with cross-attention against an external memory.
Var nn_decoder_block(NnContext& ctx, Var x, Var memory, const std::string& name, int heads,
                     int d_k, int ffn_hidden, double dropout_rate);

// g = sigmoid(W_gate [z, m]); out = g .* (W_self z) + (1-g) .* m
Var nn_gated_update(NnContext& ctx, Var z, Var m, const std::string& name);

}  // namespace t2p
