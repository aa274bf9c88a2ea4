#include "t2p/model.hpp"

#include <cmath>
#include <sstream>

#include "t2p/pose_decoder.hpp"
#include "t2p/trajectory_decoder.hpp"

namespace t2p {

std::string ModelConfig::canonical_string() const {
    std::ostringstream os;
    os << "d_k=" << d_k << "\ndct_coeffs=" << dct_coeffs << "\ndecoder_blocks=" << decoder_blocks
       << "\ndropout=" << dropout << "\nencoder_blocks=" << encoder_blocks << "\nheads=" << heads
       << "\nln_eps=" << ln_eps << "\nmodes=" << scenario.modes
       << "\npast_steps=" << scenario.past_steps << "\npose_dim=" << pose_dim
       << "\npose_ffn_hidden=" << pose_ffn_hidden << "\npose_head_hidden=" << pose_head_hidden
       << "\nradius=" << scenario.interaction_radius << "\ntemporal_layers=" << temporal_layers
       << "\ntraj_dim=" << traj_dim << "\ntraj_ffn_hidden=" << traj_ffn_hidden
       << "\nfuture_steps=" << scenario.future_steps << "\nhead_scale=" << head_scale << "\n";
    return os.str();
}

void ModelConfig::validate() const {
    scenario.validate();
    if (pose_dim < 1 || traj_dim < 1 || heads < 1 || d_k < 1)
        throw std::invalid_argument("model config: dimensions must be positive");
    if (dropout < 0.0 || dropout >= 1.0)
        throw std::invalid_argument("model config: dropout must be in [0,1)");
}

Array compose_forecast(const Array& trajectories, const Array& local) {
    if (trajectories.rank() != 4 || local.rank() != 5)
        throw ShapeError("compose: expected (F,N,T,3) trajectories and (F,N,T,J,3) local poses");
    for (int d = 0; d < 3; ++d)
        if (trajectories.dim(d) != local.dim(d))
            throw ShapeError("compose: axis " + std::to_string(d) + " mismatch, trajectories " +
                             trajectories.shape_str() + " vs local " + local.shape_str());
    const int f = local.dim(0), n = local.dim(1), t = local.dim(2), j = local.dim(3);
    Array out(local.shape);
    for (int m = 0; m < f; ++m)
        for (int a = 0; a < n; ++a)
            for (int s = 0; s < t; ++s) {
                const std::int64_t tb = ((static_cast<std::int64_t>(m) * n + a) * t + s) * 3;
                const std::int64_t jb = ((static_cast<std::int64_t>(m) * n + a) * t + s) * j * 3;
                for (int q = 0; q < j; ++q)
                    for (int c = 0; c < 3; ++c)
                        out[jb + q * 3 + c] = trajectories[tb + c] + local[jb + q * 3 + c];
            }
    return out;
}

Model::Model(ModelConfig cfg, Skeleton skel, std::uint64_t seed)
    : cfg_(std::move(cfg)), skel_(std::move(skel)) {
    cfg_.validate();
    skel_.validate();
    store_.set_config_hash(fnv1a64(cfg_.canonical_string()));
    build_parameters(seed);
}

Model::Model(ModelConfig cfg, Skeleton skel, ParameterStore store)
    : cfg_(std::move(cfg)), skel_(std::move(skel)), store_(std::move(store)) {
    cfg_.validate();
    skel_.validate();
    const std::uint64_t expect = fnv1a64(cfg_.canonical_string());
    if (store_.config_hash() != expect)
        throw std::runtime_error("checkpoint was produced under a different model config (hash " +
                                 std::to_string(store_.config_hash()) + ", expected " +
                                 std::to_string(expect) + ")");
}

void Model::build_parameters(std::uint64_t seed) {
    // One forward on a fixed dummy scene creates every parameter in a
    // deterministic order; agent count never affects parameter shapes.
    const int tp = cfg_.scenario.past_steps;
    GlobalPoseSequence dummy;
    dummy.scene_id = "init";
    dummy.agent_ids = {"a", "b"};
    dummy.frame_rate = 10.0;
    dummy.positions = Array({2, tp, skel_.joint_count, 3});
    for (int a = 0; a < 2; ++a)
        for (int f = 0; f < tp; ++f)
            for (int q = 0; q < skel_.joint_count; ++q) {
                const std::int64_t off = ((static_cast<std::int64_t>(a) * tp + f) * skel_.joint_count + q) * 3;
                dummy.positions[off + 0] = 0.1 * f + 0.05 * q;
                dummy.positions[off + 1] = a == 0 ? 0.0 : 0.8;
                dummy.positions[off + 2] = 0.9 + 0.01 * q;
            }

    Rng build(seed);
    Tape tape;
    NnContext ctx{tape, store_, &build, nullptr, false};
    ScenePrep prep = prepare_scene(dummy, skel_, cfg_);
    Var tokens = build_mpbp_tokens(ctx, prep.local_rot, skel_, cfg_);
    PoseEmbedding pose = encode_pose(ctx, tokens, cfg_);
    Var ref_emb = embed_trajectory_ref(ctx, prep, cfg_);
    Var nbr_emb = embed_trajectory_nbr(ctx, prep, cfg_);
    Var fused = fuse_traj_pose(ctx, ref_emb, pose.pooled, cfg_);
    Var refined = graph_attend(ctx, fused, nbr_emb, prep.attn_src, prep.attn_dst, prep.agents, cfg_);
    Var summaries = temporal_encode(ctx, refined, cfg_);
    Var agg = aggregate_agents(ctx, summaries, prep, cfg_);
    Var latents = span_modes(ctx, summaries, agg, cfg_);
    trajectory_head(ctx, latents, agg, prep, cfg_);
    decode_poses(ctx, pose, latents, prep, skel_, cfg_);
}

Model::ForwardVars Model::forward(Tape& tape, const GlobalPoseSequence& past, bool training,
                                  Rng* dropout_rng) {
    NnContext ctx{tape, store_, nullptr, dropout_rng, training};
    ForwardVars out;
    out.prep = prepare_scene(past, skel_, cfg_);
    Var tokens = build_mpbp_tokens(ctx, out.prep.local_rot, skel_, cfg_);
    PoseEmbedding pose = encode_pose(ctx, tokens, cfg_);
    Var ref_emb = embed_trajectory_ref(ctx, out.prep, cfg_);
    Var nbr_emb = embed_trajectory_nbr(ctx, out.prep, cfg_);
    Var fused = fuse_traj_pose(ctx, ref_emb, pose.pooled, cfg_);
    Var refined = graph_attend(ctx, fused, nbr_emb, out.prep.attn_src, out.prep.attn_dst,
                               out.prep.agents, cfg_, &out.pair_scores);
    Var summaries = temporal_encode(ctx, refined, cfg_);
    Var agg = aggregate_agents(ctx, summaries, out.prep, cfg_);
    Var latents = span_modes(ctx, summaries, agg, cfg_);
    out.traj = trajectory_head(ctx, latents, agg, out.prep, cfg_);
    out.local = decode_poses(ctx, pose, latents, out.prep, skel_, cfg_);
    return out;
}

ForecastBundle Model::predict(const GlobalPoseSequence& past) {
    Tape tape;
    ForwardVars fwd = forward(tape, past, /*training=*/false, nullptr);
    ForecastBundle bundle;
    bundle.scene_id = past.scene_id;
    bundle.agent_ids = past.agent_ids;
    bundle.frame_rate = past.frame_rate;
    bundle.trajectories = fwd.traj->v();
    bundle.local = fwd.local->v();
    bundle.composed = compose_forecast(bundle.trajectories, bundle.local);
    return bundle;
}

}  // namespace t2p
