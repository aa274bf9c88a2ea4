#include "t2p/nn.hpp"

#include <cmath>

namespace t2p {

namespace {

Var param_of(NnContext& ctx, const std::string& name, const std::vector<int>& shape, Init init) {
    if (ctx.building())
        ctx.store.ensure(name, shape, *ctx.build_rng, init);
    return ctx.tape.param(ctx.store, name);
}

}  // namespace

Var nn_linear(NnContext& ctx, Var x, const std::string& name, int d_out, bool bias) {
    const int d_in = x->v().shape.back();
    Var w = param_of(ctx, name + ".w", {d_in, d_out}, Init::XavierUniform);
    Var b = bias ? param_of(ctx, name + ".b", {d_out}, Init::Zeros) : nullptr;
    return ctx.tape.linear(x, w, b);
}

Var nn_layer_norm(NnContext& ctx, Var x, const std::string& name, double eps) {
    const int d = x->v().shape.back();
    Var g = param_of(ctx, name + ".g", {d}, Init::Ones);
    Var b = param_of(ctx, name + ".b", {d}, Init::Zeros);
    return ctx.tape.layer_norm(x, g, b, eps);
}

Var nn_dropout(NnContext& ctx, Var x, double rate) {
    if (!ctx.training || rate == 0.0 || ctx.dropout_rng == nullptr) return x;
    return ctx.tape.dropout(x, rate, *ctx.dropout_rng, true);
}

Var nn_mlp_ln(NnContext& ctx, Var x, const std::string& name, int hidden, int d_out) {
    Var h = nn_linear(ctx, x, name + ".l1", hidden);
    h = nn_layer_norm(ctx, h, name + ".ln1");
    h = ctx.tape.relu(h);
    h = nn_linear(ctx, h, name + ".l2", d_out);
    return nn_layer_norm(ctx, h, name + ".ln2");
}

Var nn_multi_head_attention(NnContext& ctx, Var q_in, Var kv_in, const std::string& name,
                            int heads, int d_k, const Array* kv_mask01) {
    if (!q_in->v().all_finite() || !kv_in->v().all_finite())
        throw NumericalError("multi_head_attention '" + name + "': non-finite input");

    Tape& t = ctx.tape;
    const auto& qs = q_in->v().shape;
    const auto& ks = kv_in->v().shape;
    const int sq = qs[qs.size() - 2];
    const int skv = ks[ks.size() - 2];
    const int d_model = qs.back();
    const int inner = heads * d_k;
    int batch = 1;
    for (size_t i = 0; i + 2 < qs.size(); ++i) batch *= qs[i];

    Var q = nn_linear(ctx, q_in, name + ".q", inner);
    Var k = nn_linear(ctx, kv_in, name + ".k", inner);
    Var v = nn_linear(ctx, kv_in, name + ".v", inner);

    auto to_heads = [&](Var x, int s) {
        x = t.reshape(x, {batch, s, heads, d_k});
        return t.permute(x, {0, 2, 1, 3});  // (batch, heads, s, d_k)
    };
    q = to_heads(q, sq);
    k = to_heads(k, skv);
    v = to_heads(v, skv);

    Var scores = t.affine(t.bmm(q, k, /*trans_b=*/true), 1.0 / std::sqrt(static_cast<double>(d_k)), 0.0);

    Var alpha;
    if (kv_mask01) {
        if (kv_mask01->size() != static_cast<std::int64_t>(batch) * skv)
            throw std::invalid_argument("multi_head_attention: mask must cover kv positions, got " +
                                        shape_to_string(kv_mask01->shape));
        Array full({batch, heads, sq, skv});
        for (int b = 0; b < batch; ++b)
            for (int h = 0; h < heads; ++h)
                for (int r = 0; r < sq; ++r)
                    for (int c = 0; c < skv; ++c)
                        full.data[static_cast<size_t>(((static_cast<std::int64_t>(b) * heads + h) * sq + r) * skv + c)] =
                            (*kv_mask01)[static_cast<std::int64_t>(b) * skv + c];
        alpha = t.softmax_masked(scores, &full);
    } else {
        alpha = t.softmax_masked(scores, nullptr);
    }

    Var mixed = t.bmm(alpha, v, /*trans_b=*/false);     // (batch, heads, sq, d_k)
    mixed = t.permute(mixed, {0, 2, 1, 3});             // (batch, sq, heads, d_k)
    std::vector<int> out_shape(qs.begin(), qs.end() - 1);
    out_shape.push_back(inner);
    mixed = t.reshape(mixed, out_shape);
    return nn_linear(ctx, mixed, name + ".o", d_model);
}

// Pre-norm residual blocks: normalization feeds each sublayer, the residual
// path stays unnormalized; stays stable at the default 3e-3 learning rate
// without warmup. Callers append one final layer norm after their stack.
Var nn_encoder_block(NnContext& ctx, Var x, const std::string& name, int heads, int d_k,
                     int ffn_hidden, double dropout_rate, const Array* kv_mask01) {
    Tape& t = ctx.tape;
    const int d = x->v().shape.back();
    Var h = nn_layer_norm(ctx, x, name + ".ln1");
    Var attn = nn_multi_head_attention(ctx, h, h, name + ".attn", heads, d_k, kv_mask01);
    x = t.add(x, nn_dropout(ctx, attn, dropout_rate));

    h = nn_layer_norm(ctx, x, name + ".ln2");
    h = nn_linear(ctx, h, name + ".ffn1", ffn_hidden);
    h = t.relu(h);
    h = nn_linear(ctx, h, name + ".ffn2", d);
    return t.add(x, nn_dropout(ctx, h, dropout_rate));
}

Var nn_decoder_block(NnContext& ctx, Var x, Var memory, const std::string& name, int heads,
                     int d_k, int ffn_hidden, double dropout_rate) {
    Tape& t = ctx.tape;
    const int d = x->v().shape.back();
    Var h = nn_layer_norm(ctx, x, name + ".ln1");
    Var attn = nn_multi_head_attention(ctx, h, memory, name + ".attn", heads, d_k);
    x = t.add(x, nn_dropout(ctx, attn, dropout_rate));

    h = nn_layer_norm(ctx, x, name + ".ln2");
    h = nn_linear(ctx, h, name + ".ffn1", ffn_hidden);
    h = t.relu(h);
    h = nn_linear(ctx, h, name + ".ffn2", d);
    return t.add(x, nn_dropout(ctx, h, dropout_rate));
}

Var nn_gated_update(NnContext& ctx, Var z, Var m, const std::string& name) {
    Tape& t = ctx.tape;
    const int d = z->v().shape.back();
    const int last = z->v().rank() - 1;
    Var zm = t.concat({z, m}, last);
    Var g = t.sigmoid(nn_linear(ctx, zm, name + ".gate", d));
    Var self = nn_linear(ctx, z, name + ".self", d, /*bias=*/false);
    Var one_minus_g = t.affine(g, -1.0, 1.0);
    return t.add(t.mul(g, self), t.mul(one_minus_g, m));
}

}  // namespace t2p
