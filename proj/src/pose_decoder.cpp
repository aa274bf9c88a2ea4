#include "t2p/pose_decoder.hpp"

#include <cmath>

#include "t2p/dct.hpp"

namespace t2p {

namespace {

// Cross-attention block against per-agent part tokens. The memory projections
// run once per agent and are broadcast over modes, which keeps the per-mode
// cost down to the query-side work.
Var cross_block(NnContext& ctx, Var x, Var memory, const std::string& name, int modes,
                const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    if (!x->v().all_finite() || !memory->v().all_finite())
        throw NumericalError("pose decoder '" + name + "': non-finite input");
    const int n = memory->v().dim(0);
    const int p = memory->v().dim(1);
    const int inner = cfg.heads * cfg.d_k;
    const int d = cfg.pose_dim;

    Var xn = nn_layer_norm(ctx, x, name + ".ln1", cfg.ln_eps);
    Var k = nn_linear(ctx, memory, name + ".attn.k", inner);  // (N, P, inner)
    Var v = nn_linear(ctx, memory, name + ".attn.v", inner);
    auto spread = [&](Var m) {
        m = t.expand_axis(m, 0, modes);                       // (F, N, P, inner)
        m = t.reshape(m, {modes * n, p, cfg.heads, cfg.d_k});
        return t.permute(m, {0, 2, 1, 3});                    // (F*N, H, P, d_k)
    };
    k = spread(k);
    v = spread(v);

    Var q = nn_linear(ctx, xn, name + ".attn.q", inner);      // (F, N, inner)
    q = t.reshape(q, {modes * n, 1, cfg.heads, cfg.d_k});
    q = t.permute(q, {0, 2, 1, 3});                           // (F*N, H, 1, d_k)

    Var scores = t.affine(t.bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(cfg.d_k)), 0.0);
    Var alpha = t.softmax_masked(scores, nullptr);
    Var mixed = t.bmm(alpha, v, false);                       // (F*N, H, 1, d_k)
    mixed = t.reshape(t.permute(mixed, {0, 2, 1, 3}), {modes, n, inner});
    Var attn = nn_linear(ctx, mixed, name + ".attn.o", d);
    x = t.add(x, nn_dropout(ctx, attn, cfg.dropout));

    Var h = nn_layer_norm(ctx, x, name + ".ln2", cfg.ln_eps);
    h = nn_linear(ctx, h, name + ".ffn1", cfg.pose_ffn_hidden);
    h = t.relu(h);
    h = nn_linear(ctx, h, name + ".ffn2", d);
    return t.add(x, nn_dropout(ctx, h, cfg.dropout));
}

}  // namespace

Var decode_poses(NnContext& ctx, const PoseEmbedding& pose, Var latents, const ScenePrep& prep,
                 const Skeleton& skel, const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    const int modes = latents->v().dim(0);
    const int n = latents->v().dim(1);
    const int j = skel.joint_count;
    const int keep = cfg.kept_coeffs();
    const int total = cfg.total_steps();
    const int tf = cfg.scenario.future_steps;

    // query: pooled pose embedding repeated per mode, fused with the mode latent
    Var q_po = t.expand_axis(pose.pooled, 0, modes);          // (F, N, 128)
    Var q = nn_linear(ctx, t.concat({q_po, latents}, 2), "pose_dec.query", cfg.pose_dim);

    for (int b = 0; b < cfg.decoder_blocks; ++b)
        q = cross_block(ctx, q, pose.per_part, "pose_dec.blk" + std::to_string(b), modes, cfg);
    q = nn_layer_norm(ctx, q, "pose_dec.final_ln", cfg.ln_eps);

    // three fully connected layers emit coefficient residuals
    Var h = t.relu(nn_linear(ctx, q, "pose_dec.fc1", cfg.pose_head_hidden));
    h = t.relu(nn_linear(ctx, h, "pose_dec.fc2", cfg.pose_head_hidden));
    Var resid = nn_linear(ctx, h, "pose_dec.fc3", j * 3 * keep);
    resid = t.affine(resid, cfg.head_scale, 0.0);

    Array base = pose_channel_coeffs(prep.local_rot, cfg);    // (N, J*3*keep)
    Var coeffs = t.add(resid, t.expand_axis(t.input(std::move(base)), 0, modes));
    coeffs = t.reshape(coeffs, {modes, n, j, 3, keep});

    // back to the time domain; forecast = the last T_f frames
    Array basis = dct_matrix(total);
    Array basis_kept({keep, total});
    for (int r = 0; r < keep; ++r)
        for (int c = 0; c < total; ++c) basis_kept.at({r, c}) = basis.at({r, c});
    Var series = t.matconst(coeffs, basis_kept, false);       // (F, N, J, 3, total)
    Var future = t.slice(series, 4, total - tf, total);
    future = t.permute(future, {0, 1, 4, 2, 3});              // (F, N, T_f, J, 3)

    // hip offsets are zero by construction
    Array hip_mask({modes, n, tf, j, 3});
    std::fill(hip_mask.data.begin(), hip_mask.data.end(), 1.0);
    for (int f = 0; f < modes; ++f)
        for (int a = 0; a < n; ++a)
            for (int s = 0; s < tf; ++s)
                for (int c = 0; c < 3; ++c) hip_mask.at({f, a, s, skel.hip_index, c}) = 0.0;
    future = t.mul_const(future, hip_mask);

    std::vector<Mat3> rots;
    for (const auto& fr : prep.frames) rots.push_back(fr.rotation);
    return t.per_agent_affine3(future, rots, /*transpose=*/true, nullptr);
}

}  // namespace t2p
