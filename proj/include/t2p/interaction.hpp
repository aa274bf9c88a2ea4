#pragma once

#include <cstdint>
#include <vector>

#include "t2p/model_config.hpp"
#include "t2p/motion.hpp"
#include "t2p/nn.hpp"

namespace t2p {

// Agent-centric reference frame at the latest observed timestep. `rotation`
// maps world vectors into the agent frame: applied to the heading direction it
// yields the +x axis. The inverse (agent to world) is its transpose.
struct AgentFrame {
    double heading = 0.0;
    Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
    double origin_x = 0.0;
    double origin_y = 0.0;
    bool degenerate = false;  // no nonzero segment found; identity frame in use
};

AgentFrame make_agent_frame(const TrajectorySequence& past, int agent, double min_speed = 1e-6);

// Everything derived from the observed window before any learnable layer runs:
// segment vectors, agent frames, frame-normalized inputs and the neighbor
// pair lists. All of it is constant with respect to the parameters.
struct ScenePrep {
    int agents = 0;
    TrajectorySequence past_traj;    // (N, T_p, 3)
    LocalPoseSequence past_local;    // (N, T_p, J, 3) world-axis offsets
    std::vector<AgentFrame> frames;
    std::vector<Vec3> anchors;       // hip position at the latest past frame

    Array segments;       // (N, T_p-1, 3) world-frame hip displacements
    Array ref_inputs;     // (N, T_p-1, 3) own segments in own frame
    Array local_rot;      // (N, T_p, J, 3) local pose rotated into agent frame

    // Graph attention pairs include the self pair; aggregator pairs do not.
    std::vector<int> attn_src, attn_dst;
    Array attn_inputs;    // (P_attn, T_p-1, 6) [R_i v_t^j, R_i v_t^i]
    std::vector<int> edge_src, edge_dst;
    Array edge_inputs;    // (P_edge, 4) [rel xy in receiver frame, cos dh, sin dh]
};

// Neighborhood rule: hip distance at the latest past frame, self included.
std::vector<std::vector<int>> neighbor_sets(const TrajectorySequence& past,
                                            const ScenarioConfig& scenario);

ScenePrep prepare_scene(const GlobalPoseSequence& past_window, const Skeleton& skel,
                        const ModelConfig& cfg);

// phi_ref stream: per-agent frame-normalized segment embeddings, (N, T_p-1, 96).
Var embed_trajectory_ref(NnContext& ctx, const ScenePrep& prep, const ModelConfig& cfg);
// phi_nbr stream over directed pairs, (P_attn, T_p-1, 96).
Var embed_trajectory_nbr(NnContext& ctx, const ScenePrep& prep, const ModelConfig& cfg);

// Pose embedding reduced to the trajectory width, broadcast over timesteps and
// mixed with the per-step trajectory embedding. (N, T_p-1, 96).
Var fuse_traj_pose(NnContext& ctx, Var ref_emb, Var pose_pooled, const ModelConfig& cfg);

// Gated graph attention at every past timestep. Keys/values combine the fused
// neighbor embedding with the pairwise geometry embedding. `pair_scores`, when
// given, accrues one score per (receiver, neighbor, timestep).
Var graph_attend(NnContext& ctx, Var fused, Var nbr_emb, const std::vector<int>& pair_src,
                 const std::vector<int>& pair_dst, int agents, const ModelConfig& cfg,
                 std::int64_t* pair_scores = nullptr);

}  // namespace t2p
