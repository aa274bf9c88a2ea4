#include "t2p/trajectory_decoder.hpp"

#include <cmath>

namespace t2p {

Var temporal_encode(NnContext& ctx, Var refined, const ModelConfig& cfg, const Array* step_mask) {
    Tape& t = ctx.tape;
    const int n = refined->v().dim(0);
    const int steps = refined->v().dim(1);

    if (ctx.building()) ctx.store.ensure("temporal.token", {1, cfg.traj_dim}, *ctx.build_rng);
    Var token = t.param(ctx.store, "temporal.token");
    Var tok_rows = t.expand_axis(token, 0, n);  // (N, 1, 96)

    Var x = t.concat({tok_rows, refined}, 1);  // (N, T_p, 96)
    Array mask({n, steps + 1});
    for (int a = 0; a < n; ++a) {
        mask.at({a, 0}) = 1.0;  // the learnable token is always visible
        for (int s = 0; s < steps; ++s)
            mask.at({a, s + 1}) = step_mask ? step_mask->at({a, s}) : 1.0;
    }
    for (int l = 0; l < cfg.temporal_layers; ++l)
        x = nn_encoder_block(ctx, x, "temporal.l" + std::to_string(l), cfg.heads, cfg.d_k,
                             cfg.traj_ffn_hidden, cfg.dropout, &mask);
    x = nn_layer_norm(ctx, x, "temporal.final_ln", cfg.ln_eps);
    Var summary = t.slice(x, 1, 0, 1);  // token slot
    return t.reshape(summary, {n, cfg.traj_dim});
}

Var aggregate_agents(NnContext& ctx, Var summaries, const ScenePrep& prep,
                     const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    const int n = summaries->v().dim(0);
    Var q = nn_linear(ctx, t.reshape(summaries, {n, 1, cfg.traj_dim}), "agg.q", cfg.d_k);
    Var m;
    if (prep.edge_src.empty()) {
        m = t.input(Array({n, cfg.traj_dim}));
    } else {
        const int pairs = static_cast<int>(prep.edge_src.size());
        Var edge = nn_mlp_ln(ctx, t.input(prep.edge_inputs), "agg.edge", cfg.traj_dim, cfg.traj_dim);
        Var s_nbr = t.gather_axis0(summaries, prep.edge_dst);     // (P, 96)
        Var kv_in = t.concat({s_nbr, edge}, 1);                   // (P, 192)
        kv_in = t.reshape(kv_in, {pairs, 1, 2 * cfg.traj_dim});
        Var k = nn_linear(ctx, kv_in, "agg.k", cfg.d_k);
        Var v = nn_linear(ctx, kv_in, "agg.v", cfg.traj_dim);
        m = t.segmented_attention(q, k, v, prep.edge_src, n,
                                  1.0 / std::sqrt(static_cast<double>(cfg.d_k)));
        m = t.reshape(m, {n, cfg.traj_dim});
    }
    return nn_gated_update(ctx, summaries, m, "agg");
}

Var span_modes(NnContext& ctx, Var summaries, Var aggregated, const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    const int n = summaries->v().dim(0);
    std::vector<Var> rows;
    for (int f = 0; f < cfg.scenario.modes; ++f) {
        const std::string name = "span.mode" + std::to_string(f);
        Var h = t.relu(nn_linear(ctx, aggregated, name + ".l1", cfg.traj_dim));
        h = nn_linear(ctx, h, name + ".l2", cfg.traj_dim);
        Var latent = t.add(summaries, h);  // residual from the pre-aggregation embedding
        rows.push_back(t.reshape(latent, {1, n, cfg.traj_dim}));
    }
    return t.concat(rows, 0);  // (F, N, 96)
}

Var trajectory_head(NnContext& ctx, Var latents, Var aggregated, const ScenePrep& prep,
                    const ModelConfig& cfg) {
    Tape& t = ctx.tape;
    const int f = latents->v().dim(0);
    const int n = latents->v().dim(1);
    const int tf = cfg.scenario.future_steps;

    Var agg_rep = t.expand_axis(aggregated, 0, f);            // (F, N, 96)
    Var x = t.concat({latents, agg_rep}, 2);                  // (F, N, 192)
    Var h = nn_linear(ctx, x, "traj_head.l1", cfg.traj_dim);  // 192 -> 96
    h = nn_layer_norm(ctx, h, "traj_head.ln", cfg.ln_eps);
    h = t.relu(h);
    h = nn_linear(ctx, h, "traj_head.l2", tf * 3);            // 96 -> T_f*3
    h = t.affine(h, cfg.head_scale, 0.0);
    // per-step agent-frame displacements, accumulated into positions
    Var disp = t.cumsum_axis(t.reshape(h, {f, n, tf, 3}), 2);

    std::vector<Mat3> rots;
    for (const auto& fr : prep.frames) rots.push_back(fr.rotation);
    // transpose = agent-to-world; anchoring at the latest observed hip
    return t.per_agent_affine3(disp, rots, /*transpose=*/true, &prep.anchors);
}

}  // namespace t2p
