#include "t2p/interaction.hpp"

#include <cmath>

namespace t2p {

namespace {

void rotate_xy(const Mat3& r, const double* in, double* out) {
    out[0] = r[0] * in[0] + r[1] * in[1] + r[2] * in[2];
    out[1] = r[3] * in[0] + r[4] * in[1] + r[5] * in[2];
    out[2] = r[6] * in[0] + r[7] * in[1] + r[8] * in[2];
}

}  // namespace

AgentFrame make_agent_frame(const TrajectorySequence& past, int agent, double min_speed) {
    const int t = past.frames();
    AgentFrame f;
    const auto seg_xy = [&](int k, double* sx, double* sy) {
        const std::int64_t a = (static_cast<std::int64_t>(agent) * t + k + 1) * 3;
        const std::int64_t b = (static_cast<std::int64_t>(agent) * t + k) * 3;
        *sx = past.hip_positions[a + 0] - past.hip_positions[b + 0];
        *sy = past.hip_positions[a + 1] - past.hip_positions[b + 1];
    };
    double sx = 0.0, sy = 0.0;
    bool found = false;
    seg_xy(t - 2, &sx, &sy);  // latest displacement first
    if (std::hypot(sx, sy) >= min_speed) {
        found = true;
    } else {
        for (int k = 0; k < t - 1 && !found; ++k) {
            seg_xy(k, &sx, &sy);
            if (std::hypot(sx, sy) >= min_speed) found = true;
        }
    }
    if (found) {
        f.heading = std::atan2(sy, sx);
        const double c = std::cos(f.heading), s = std::sin(f.heading);
        // rotation by -heading maps the heading direction onto +x
        f.rotation = {c, s, 0, -s, c, 0, 0, 0, 1};
    } else {
        f.degenerate = true;
    }
    const std::int64_t last = (static_cast<std::int64_t>(agent) * t + t - 1) * 3;
    f.origin_x = past.hip_positions[last + 0];
    f.origin_y = past.hip_positions[last + 1];
    return f;
}

std::vector<std::vector<int>> neighbor_sets(const TrajectorySequence& past,
                                            const ScenarioConfig& scenario) {
    const int n = past.agents();
    const int t = past.frames();
    std::vector<std::vector<int>> sets(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::int64_t bi = (static_cast<std::int64_t>(i) * t + t - 1) * 3;
        for (int j = 0; j < n; ++j) {
            const std::int64_t bj = (static_cast<std::int64_t>(j) * t + t - 1) * 3;
            const double dx = past.hip_positions[bj + 0] - past.hip_positions[bi + 0];
            const double dy = past.hip_positions[bj + 1] - past.hip_positions[bi + 1];
            const double dz = past.hip_positions[bj + 2] - past.hip_positions[bi + 2];
            const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (scenario.radius_unbounded() || dist <= scenario.interaction_radius)
                sets[static_cast<size_t>(i)].push_back(j);
        }
    }
    return sets;
}

ScenePrep prepare_scene(const GlobalPoseSequence& past_window, const Skeleton& skel,
                        const ModelConfig& cfg) {
    const int tp = cfg.scenario.past_steps;
    if (past_window.frames() < tp)
        throw ShapeError("scene '" + past_window.scene_id + "': needs at least " +
                         std::to_string(tp) + " past frames, has " +
                         std::to_string(past_window.frames()));
    GlobalPoseSequence past =
        past_window.frames() == tp ? past_window : past_window.window(0, tp);

    ScenePrep prep;
    prep.agents = past.agents();
    auto [traj, local] = decompose(past, skel);
    prep.past_traj = std::move(traj);
    prep.past_local = std::move(local);

    const int n = prep.agents;
    const int j = skel.joint_count;
    for (int a = 0; a < n; ++a) {
        prep.frames.push_back(make_agent_frame(prep.past_traj, a));
        const std::int64_t last = (static_cast<std::int64_t>(a) * tp + tp - 1) * 3;
        prep.anchors.push_back({prep.past_traj.hip_positions[last + 0],
                                prep.past_traj.hip_positions[last + 1],
                                prep.past_traj.hip_positions[last + 2]});
    }

    // world-frame segments and their frame-normalized copies
    prep.segments = Array({n, tp - 1, 3});
    prep.ref_inputs = Array({n, tp - 1, 3});
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < tp - 1; ++k) {
            double seg[3];
            for (int c = 0; c < 3; ++c) {
                seg[c] = prep.past_traj.hip_positions[(static_cast<std::int64_t>(a) * tp + k + 1) * 3 + c] -
                         prep.past_traj.hip_positions[(static_cast<std::int64_t>(a) * tp + k) * 3 + c];
                prep.segments[(static_cast<std::int64_t>(a) * (tp - 1) + k) * 3 + c] = seg[c];
            }
            rotate_xy(prep.frames[static_cast<size_t>(a)].rotation, seg,
                      &prep.ref_inputs[(static_cast<std::int64_t>(a) * (tp - 1) + k) * 3]);
        }

    // local pose rotated into each agent's frame
    prep.local_rot = Array({n, tp, j, 3});
    for (int a = 0; a < n; ++a)
        for (int f = 0; f < tp; ++f)
            for (int q = 0; q < j; ++q) {
                const std::int64_t off = ((static_cast<std::int64_t>(a) * tp + f) * j + q) * 3;
                rotate_xy(prep.frames[static_cast<size_t>(a)].rotation,
                          &prep.past_local.offsets[off], &prep.local_rot[off]);
            }

    // neighbor pairs: attention keeps the self pair, the aggregator drops it
    const auto sets = neighbor_sets(prep.past_traj, cfg.scenario);
    for (int i = 0; i < n; ++i)
        for (int nb : sets[static_cast<size_t>(i)]) {
            prep.attn_src.push_back(i);
            prep.attn_dst.push_back(nb);
            if (nb != i) {
                prep.edge_src.push_back(i);
                prep.edge_dst.push_back(nb);
            }
        }

    const int pa = static_cast<int>(prep.attn_src.size());
    prep.attn_inputs = Array({pa, tp - 1, 6});
    for (int p = 0; p < pa; ++p) {
        const int i = prep.attn_src[static_cast<size_t>(p)];
        const int nb = prep.attn_dst[static_cast<size_t>(p)];
        for (int k = 0; k < tp - 1; ++k) {
            double* out = &prep.attn_inputs[(static_cast<std::int64_t>(p) * (tp - 1) + k) * 6];
            rotate_xy(prep.frames[static_cast<size_t>(i)].rotation,
                      &prep.segments[(static_cast<std::int64_t>(nb) * (tp - 1) + k) * 3], out);
            rotate_xy(prep.frames[static_cast<size_t>(i)].rotation,
                      &prep.segments[(static_cast<std::int64_t>(i) * (tp - 1) + k) * 3], out + 3);
        }
    }

    const int pe = static_cast<int>(prep.edge_src.size());
    prep.edge_inputs = Array({pe, 4});
    for (int p = 0; p < pe; ++p) {
        const int i = prep.edge_src[static_cast<size_t>(p)];
        const int nb = prep.edge_dst[static_cast<size_t>(p)];
        const AgentFrame& fi = prep.frames[static_cast<size_t>(i)];
        const double rel[3] = {prep.frames[static_cast<size_t>(nb)].origin_x - fi.origin_x,
                               prep.frames[static_cast<size_t>(nb)].origin_y - fi.origin_y, 0.0};
        double rot[3];
        rotate_xy(fi.rotation, rel, rot);
        const double dh = prep.frames[static_cast<size_t>(nb)].heading - fi.heading;
        double* out = &prep.edge_inputs[static_cast<std::int64_t>(p) * 4];
        out[0] = rot[0];
        out[1] = rot[1];
        out[2] = std::cos(dh);
        out[3] = std::sin(dh);
    }
    return prep;
}

Var embed_trajectory_ref(NnContext& ctx, const ScenePrep& prep, const ModelConfig& cfg) {
    Var in = ctx.tape.input(prep.ref_inputs);
    return nn_mlp_ln(ctx, in, "traj.ref", cfg.traj_dim, cfg.traj_dim);
}

Var embed_trajectory_nbr(NnContext& ctx, const ScenePrep& prep, const ModelConfig& cfg) {
    Var in = ctx.tape.input(prep.attn_inputs);
    return nn_mlp_ln(ctx, in, "traj.nbr", cfg.traj_dim, cfg.traj_dim);
}

Var fuse_traj_pose(NnContext& ctx, Var ref_emb, Var pose_pooled, const ModelConfig& cfg) {
    if (ref_emb->v().dim(0) != pose_pooled->v().dim(0))
        throw ShapeError("fuse: trajectory stream has " + std::to_string(ref_emb->v().dim(0)) +
                         " agents, pose stream has " + std::to_string(pose_pooled->v().dim(0)));
    Tape& t = ctx.tape;
    const int steps = ref_emb->v().dim(1);
    Var reduced = nn_linear(ctx, pose_pooled, "fuse.reduce", cfg.traj_dim);  // 128 -> 96
    Var broadcast = t.expand_axis(reduced, 1, steps);                        // (N, T-1, 96)
    Var cat = t.concat({ref_emb, broadcast}, 2);
    return nn_linear(ctx, cat, "fuse.mix", cfg.traj_dim);
}

Var graph_attend(NnContext& ctx, Var fused, Var nbr_emb, const std::vector<int>& pair_src,
                 const std::vector<int>& pair_dst, int agents, const ModelConfig& cfg,
                 std::int64_t* pair_scores) {
    Tape& t = ctx.tape;
    const int steps = fused->v().dim(1);
    Var q = nn_linear(ctx, fused, "graph.q", cfg.d_k);
    Var m;
    if (pair_src.empty()) {
        m = t.input(Array({agents, steps, cfg.traj_dim}));
    } else {
        Var z_nbr = t.gather_axis0(fused, pair_dst);
        Var kv_in = t.concat({z_nbr, nbr_emb}, 2);  // (P, T-1, 192)
        Var k = nn_linear(ctx, kv_in, "graph.k", cfg.d_k);
        Var v = nn_linear(ctx, kv_in, "graph.v", cfg.traj_dim);
        m = t.segmented_attention(q, k, v, pair_src, agents,
                                  1.0 / std::sqrt(static_cast<double>(cfg.d_k)));
    }
    if (pair_scores) *pair_scores += static_cast<std::int64_t>(pair_src.size()) * steps;
    return nn_gated_update(ctx, fused, m, "graph");
}

}  // namespace t2p
